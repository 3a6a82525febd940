//! Intraday allocation of daily totals to half-hour slots.

use std::collections::BTreeMap;

use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::calendar::{DayMeta, SATURDAY_SLOTS, WEEKDAY_SLOTS};
use crate::error::{Error, Result};
use crate::ingest::SlotSeries;

/// Fraction of a day's calls falling in each open slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotProfile {
    pub weekday_fractions: Vec<f64>,
    pub saturday_fractions: Vec<f64>,
}

impl SlotProfile {
    pub fn uniform() -> Self {
        SlotProfile {
            weekday_fractions: vec![1.0 / WEEKDAY_SLOTS as f64; WEEKDAY_SLOTS],
            saturday_fractions: vec![1.0 / SATURDAY_SLOTS as f64; SATURDAY_SLOTS],
        }
    }

    /// Weekday fractions from a 22-slot shape; Saturdays use the same shape
    /// truncated to their 10 morning slots.
    pub fn from_shape(shape: &[f64]) -> Result<Self> {
        if shape.len() != WEEKDAY_SLOTS || shape.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!(
                "slot shape needs {WEEKDAY_SLOTS} nonnegative values"
            )));
        }
        let weekday = normalize(shape.to_vec())
            .ok_or_else(|| Error::Validation("slot shape sums to zero".into()))?;
        let saturday = normalize(shape[..SATURDAY_SLOTS].to_vec())
            .ok_or_else(|| Error::Validation("Saturday part of slot shape sums to zero".into()))?;
        Ok(SlotProfile {
            weekday_fractions: weekday,
            saturday_fractions: saturday,
        })
    }

    pub fn fractions_for(&self, day_of_week: Weekday) -> &[f64] {
        match day_of_week {
            Weekday::Sat => &self.saturday_fractions,
            Weekday::Sun => &[],
            _ => &self.weekday_fractions,
        }
    }
}

pub(crate) fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= total);
    Some(v)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-slot median of `slot / day total` over days with a positive total,
/// renormalized to sum to one. `None` when every day totals zero.
pub fn median_fractions(days: &[Vec<u64>]) -> Option<Vec<f64>> {
    let width = days.iter().map(Vec::len).max()?;
    let ratios: Vec<Vec<f64>> = days
        .iter()
        .filter_map(|d| {
            let total: u64 = d.iter().sum();
            (total > 0).then(|| {
                (0..width)
                    .map(|k| d.get(k).copied().unwrap_or(0) as f64 / total as f64)
                    .collect()
            })
        })
        .collect();
    if ratios.is_empty() {
        return None;
    }
    let medians = (0..width)
        .map(|k| {
            let mut col: Vec<f64> = ratios.iter().map(|r| r[k]).collect();
            median(&mut col)
        })
        .collect();
    normalize(medians)
}

/// Slot counts per open day, split into weekdays and Saturdays. Missing
/// slots on an observed day count as zero.
fn day_vectors<'a>(
    slots: &SlotSeries,
    meta: &BTreeMap<NaiveDate, DayMeta>,
    mut keep: impl FnMut(&NaiveDate) -> bool + 'a,
) -> (Vec<(NaiveDate, Vec<u64>)>, Vec<(NaiveDate, Vec<u64>)>) {
    let mut weekdays = Vec::new();
    let mut saturdays = Vec::new();
    for (date, records) in slots.by_day() {
        let Some(m) = meta.get(&date) else { continue };
        if !m.is_open || !keep(&date) {
            continue;
        }
        let width = m.open_slots();
        let mut v = vec![0u64; width];
        for r in records.iter().filter(|r| r.slot < width) {
            v[r.slot] = r.count;
        }
        if m.day_of_week == Weekday::Sat {
            saturdays.push((date, v));
        } else {
            weekdays.push((date, v));
        }
    }
    (weekdays, saturdays)
}

/// Median slot fractions, fitted separately for weekdays and Saturdays.
/// Zero-total days are skipped.
pub fn fit_slot_profile(slots: &SlotSeries, meta: &BTreeMap<NaiveDate, DayMeta>) -> Result<SlotProfile> {
    let (weekdays, saturdays) = day_vectors(slots, meta, |_| true);
    let strip = |v: Vec<(NaiveDate, Vec<u64>)>| v.into_iter().map(|(_, d)| d).collect::<Vec<_>>();
    let weekday_fractions = median_fractions(&strip(weekdays))
        .ok_or_else(|| Error::Validation("no weekday with a positive call total".into()))?;
    let saturday_fractions = median_fractions(&strip(saturdays))
        .ok_or_else(|| Error::Validation("no Saturday with a positive call total".into()))?;
    Ok(SlotProfile {
        weekday_fractions,
        saturday_fractions,
    })
}

/// Median fractions of one busyness group. `None` fields mean the group had
/// no days of that kind with calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileProfile {
    pub quartile: usize,
    pub weekday_days: usize,
    pub saturday_days: usize,
    pub weekday_fractions: Option<Vec<f64>>,
    pub saturday_fractions: Option<Vec<f64>>,
}

/// Groups days into quartiles of their daily total and fits the median
/// profile within each group. Weekdays and Saturdays are ranked separately so
/// the quiet Saturdays do not fill the bottom group.
pub fn busyness_quartile_check(slots: &SlotSeries, meta: &BTreeMap<NaiveDate, DayMeta>) -> Vec<QuartileProfile> {
    let (weekdays, saturdays) = day_vectors(slots, meta, |_| true);
    let groups = |mut days: Vec<(NaiveDate, Vec<u64>)>| -> [Vec<Vec<u64>>; 4] {
        days.sort_by_key(|(date, v)| (v.iter().sum::<u64>(), *date));
        let n = days.len();
        let mut out: [Vec<Vec<u64>>; 4] = Default::default();
        for (rank, (_, v)) in days.into_iter().enumerate() {
            out[rank * 4 / n.max(1)].push(v);
        }
        out
    };
    let wk = groups(weekdays);
    let sat = groups(saturdays);
    (0..4)
        .map(|q| QuartileProfile {
            quartile: q + 1,
            weekday_days: wk[q].len(),
            saturday_days: sat[q].len(),
            weekday_fractions: median_fractions(&wk[q]),
            saturday_fractions: median_fractions(&sat[q]),
        })
        .collect()
}
