//! Daily and half-hourly count datasets: CSV parsing, gap detection and
//! train/test splitting.
//!
//! CSV files are UTF-8, comma separated and start with a header row. Daily
//! files hold `date,count`; slot files hold `date,slot_start,count` with
//! `slot_start` a 24h `HH:MM` time on the half-hour grid. Gaps are reported,
//! never imputed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::calendar::{self, Calendar, DayMeta, SlotKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub date: NaiveDate,
    /// 0-based half-hour index from 07:30.
    pub slot: usize,
    pub count: u64,
}

impl SlotRecord {
    pub fn key(&self) -> SlotKey {
        SlotKey::new(self.date, self.slot)
    }
}

/// Time-ordered slot counts with unique `(date, slot)` keys.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSeries {
    records: Vec<SlotRecord>,
}

impl SlotSeries {
    /// Sorts the records and rejects duplicate keys.
    pub fn new(mut records: Vec<SlotRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.key());
        if let Some(w) = records.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(Error::DuplicateKey {
                key: format!("({}, {})", w[0].date, calendar::slot_start_time(w[0].slot).format("%H:%M")),
            });
        }
        Ok(SlotSeries { records })
    }

    pub fn records(&self) -> &[SlotRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SlotRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dates(&self) -> BTreeSet<NaiveDate> {
        self.records.iter().map(|r| r.date).collect()
    }

    pub fn daily_totals(&self) -> BTreeMap<NaiveDate, u64> {
        let mut totals = BTreeMap::new();
        for r in &self.records {
            *totals.entry(r.date).or_insert(0) += r.count;
        }
        totals
    }

    pub fn total(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum()
    }

    /// Records grouped by date, in order.
    pub fn by_day(&self) -> BTreeMap<NaiveDate, Vec<SlotRecord>> {
        let mut days: BTreeMap<NaiveDate, Vec<SlotRecord>> = BTreeMap::new();
        for r in &self.records {
            days.entry(r.date).or_default().push(*r);
        }
        days
    }

    pub fn filter(&self, mut keep: impl FnMut(&SlotRecord) -> bool) -> SlotSeries {
        SlotSeries {
            records: self.records.iter().copied().filter(|r| keep(r)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub daily: Vec<DailyRecord>,
    pub slots: SlotSeries,
    pub meta: BTreeMap<NaiveDate, DayMeta>,
    pub calendar: Calendar,
    pub split_date: Option<NaiveDate>,
}

impl Dataset {
    /// Builds a dataset, deriving metadata for every date that carries data.
    pub fn new(mut daily: Vec<DailyRecord>, slots: SlotSeries, calendar: Calendar) -> Result<Self> {
        daily.sort_by_key(|r| r.date);
        if let Some(w) = daily.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(Error::DuplicateKey {
                key: w[0].date.to_string(),
            });
        }
        let mut meta = BTreeMap::new();
        for date in daily.iter().map(|r| r.date).chain(slots.records().iter().map(|r| r.date)) {
            if let std::collections::btree_map::Entry::Vacant(e) = meta.entry(date) {
                e.insert(calendar.meta(date)?);
            }
        }
        Ok(Dataset {
            daily,
            slots,
            meta,
            calendar,
            split_date: None,
        })
    }

    pub fn with_slots(self, slots: SlotSeries) -> Result<Self> {
        let mut ds = Dataset::new(self.daily, slots, self.calendar)?;
        ds.split_date = self.split_date;
        Ok(ds)
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.meta.keys().next().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.meta.keys().next_back().copied()
    }

    /// Dates that carry a daily record or at least one slot record.
    pub fn observed_dates(&self) -> BTreeSet<NaiveDate> {
        self.meta.keys().copied().collect()
    }

    /// Daily totals: the daily file when present, otherwise summed slots.
    pub fn daily_totals(&self) -> Vec<DailyRecord> {
        if !self.daily.is_empty() {
            return self.daily.clone();
        }
        self.slots
            .daily_totals()
            .into_iter()
            .map(|(date, count)| DailyRecord { date, count })
            .collect()
    }
}

pub fn parse_daily_csv(path: &Path, holidays: &BTreeSet<NaiveDate>, origin: NaiveDate) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_daily_csv(file, path, holidays, origin)
}

pub fn read_daily_csv<R: Read>(
    reader: R,
    source: &Path,
    holidays: &BTreeSet<NaiveDate>,
    origin: NaiveDate,
) -> Result<Dataset> {
    let mut daily = Vec::new();
    let mut seen = BTreeSet::new();
    for row in csv_rows(reader, source, 2)? {
        let (line, fields) = row?;
        let date = parse_date(&fields[0], source, line)?;
        let count = parse_count(&fields[1], source, line)?;
        if !seen.insert(date) {
            return Err(Error::DuplicateKey {
                key: date.to_string(),
            });
        }
        daily.push(DailyRecord { date, count });
    }
    Dataset::new(daily, SlotSeries::default(), Calendar::new(origin, holidays.clone()))
}

pub fn parse_slot_csv(path: &Path) -> Result<SlotSeries> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_slot_csv(file, path)
}

pub fn read_slot_csv<R: Read>(reader: R, source: &Path) -> Result<SlotSeries> {
    let mut records = Vec::new();
    for row in csv_rows(reader, source, 3)? {
        let (line, fields) = row?;
        let date = parse_date(&fields[0], source, line)?;
        let time = NaiveTime::parse_from_str(fields[1].trim(), "%H:%M").map_err(|e| Error::Parse {
            path: source.to_path_buf(),
            line,
            message: format!("bad slot time {:?}: {e}", fields[1]),
        })?;
        let slot = calendar::slot_index(time).ok_or_else(|| {
            Error::Validation(format!(
                "{}:{line}: slot {} is not a half-hour start between 07:30 and 18:00",
                source.display(),
                fields[1].trim()
            ))
        })?;
        let count = parse_count(&fields[2], source, line)?;
        records.push(SlotRecord { date, slot, count });
    }
    SlotSeries::new(records)
}

/// One ISO date per line; blank lines, `#` comments and a `date` header are skipped.
pub fn parse_holidays(path: &Path) -> Result<BTreeSet<NaiveDate>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') || (i == 0 && text.eq_ignore_ascii_case("date")) {
            continue;
        }
        out.insert(parse_date(text, path, i as u64 + 1)?);
    }
    Ok(out)
}

pub fn write_daily_csv<W: Write>(writer: W, records: &[DailyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "count"])?;
    for r in records {
        w.write_record([r.date.to_string(), r.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("writing daily csv", e))?;
    Ok(())
}

pub fn write_slot_csv<W: Write>(writer: W, series: &SlotSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "slot_start", "count"])?;
    for r in series.records() {
        w.write_record([
            r.date.to_string(),
            calendar::slot_start_time(r.slot).format("%H:%M").to_string(),
            r.count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing slot csv", e))?;
    Ok(())
}

/// Maximal runs of expected-open dates that carry no data, as inclusive
/// `(first, last)` pairs. Closed days inside a run neither break nor start it.
pub fn detect_gaps(dataset: &Dataset) -> Vec<(NaiveDate, NaiveDate)> {
    let observed = dataset.observed_dates();
    let (Some(&first), Some(&last)) = (observed.iter().next(), observed.iter().next_back()) else {
        return Vec::new();
    };
    let mut gaps = Vec::new();
    let mut run: Option<(NaiveDate, NaiveDate)> = None;
    for date in first.iter_days().take_while(|d| *d <= last) {
        if observed.contains(&date) {
            gaps.extend(run.take());
            continue;
        }
        let open = calendar::derive_meta(date, &dataset.calendar.holidays, dataset.calendar.origin).is_open;
        if open {
            run = Some(match run {
                Some((start, _)) => (start, date),
                None => (date, date),
            });
        }
    }
    gaps.extend(run);
    gaps
}

/// Splits at `split_date`: train holds dates before it, test the rest.
pub fn split_train_test(dataset: &Dataset, split_date: NaiveDate) -> Result<(Dataset, Dataset)> {
    let (Some(first), Some(last)) = (dataset.first_date(), dataset.last_date()) else {
        return Err(Error::OutOfRange(format!("split date {split_date} (empty dataset)")));
    };
    if split_date <= first || split_date > last {
        return Err(Error::OutOfRange(format!(
            "split date {split_date} (data spans {first} to {last})"
        )));
    }
    let half = |train: bool| -> Dataset {
        let keep = |d: NaiveDate| (d < split_date) == train;
        Dataset {
            daily: dataset.daily.iter().copied().filter(|r| keep(r.date)).collect(),
            slots: dataset.slots.filter(|r| keep(r.date)),
            meta: dataset
                .meta
                .iter()
                .filter(|(d, _)| keep(**d))
                .map(|(d, m)| (*d, *m))
                .collect(),
            calendar: dataset.calendar.clone(),
            split_date: Some(split_date),
        }
    };
    Ok((half(true), half(false)))
}

type Row = Result<(u64, Vec<String>)>;

fn csv_rows<R: Read>(reader: R, source: &Path, width: usize) -> Result<impl Iterator<Item = Row>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.headers()?;
    let source: PathBuf = source.to_path_buf();
    Ok(rdr.into_records().map(move |rec| {
        let rec = rec.map_err(|e| Error::Parse {
            path: source.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(Error::Parse {
                path: source.clone(),
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        Ok((line, rec.iter().map(str::to_owned).collect()))
    }))
}

fn parse_date(text: &str, source: &Path, line: u64) -> Result<NaiveDate> {
    text.trim().parse().map_err(|e| Error::Parse {
        path: source.to_path_buf(),
        line,
        message: format!("bad date {text:?}: {e}"),
    })
}

fn parse_count(text: &str, source: &Path, line: u64) -> Result<u64> {
    let value: i64 = text.trim().parse().map_err(|e| Error::Parse {
        path: source.to_path_buf(),
        line,
        message: format!("bad count {text:?}: {e}"),
    })?;
    u64::try_from(value).map_err(|_| {
        Error::Validation(format!("{}:{line}: negative count {value}", source.display()))
    })
}
