//! Opening-hours calendar, half-hour slot grid and timestamps.
//!
//! Weekdays are open 07:30–18:30 (22 half-hour slots), Saturdays 07:30–12:30
//! (10 slots), Sundays and public holidays are closed. Time inside a day is
//! measured in slot units from 07:30, so a [`Timestamp`] offset of `3.5`
//! means 09:15.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WEEKDAY_SLOTS: usize = 22;
pub const SATURDAY_SLOTS: usize = 10;
/// Opening time in minutes after midnight.
pub const OPENING_MINUTE: u32 = 7 * 60 + 30;
pub const SLOT_MINUTES: u32 = 30;

pub fn default_origin() -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 4, 1).expect("valid date")
}

/// Number of open slots on a day of the given kind (ignoring holidays).
pub fn slots_for_weekday(weekday: Weekday) -> usize {
    match weekday {
        Weekday::Sat => SATURDAY_SLOTS,
        Weekday::Sun => 0,
        _ => WEEKDAY_SLOTS,
    }
}

/// Index of the half-hour slot starting at `time`, if it lies on the weekday grid.
pub fn slot_index(time: NaiveTime) -> Option<usize> {
    if time.second() != 0 || time.nanosecond() != 0 {
        return None;
    }
    let minutes = time.hour() * 60 + time.minute();
    if minutes < OPENING_MINUTE || (minutes - OPENING_MINUTE) % SLOT_MINUTES != 0 {
        return None;
    }
    let idx = ((minutes - OPENING_MINUTE) / SLOT_MINUTES) as usize;
    (idx < WEEKDAY_SLOTS).then_some(idx)
}

pub fn slot_start_time(index: usize) -> NaiveTime {
    let minutes = OPENING_MINUTE + SLOT_MINUTES * index as u32;
    NaiveTime::from_hms_opt(minutes / 60, minutes % 60, 0).expect("slot start within a day")
}

/// Calendar facts about one day, used as GLM covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayMeta {
    pub date: NaiveDate,
    pub day_of_week: Weekday,
    pub month: u32,
    pub days_since_origin: i64,
    pub is_weekday: bool,
    pub is_day_after_holiday: bool,
    pub is_open: bool,
}

impl DayMeta {
    pub fn open_slots(&self) -> usize {
        if self.is_open {
            slots_for_weekday(self.day_of_week)
        } else {
            0
        }
    }
}

/// Derives [`DayMeta`] for dates from a holiday list and a trend origin.
///
/// Public holidays are treated as closed days. When `coverage` is set, dates
/// outside it have no metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub origin: NaiveDate,
    pub holidays: BTreeSet<NaiveDate>,
    #[serde(default)]
    pub coverage: Option<(NaiveDate, NaiveDate)>,
}

impl Default for Calendar {
    fn default() -> Self {
        Calendar::new(default_origin(), BTreeSet::new())
    }
}

impl Calendar {
    pub fn new(origin: NaiveDate, holidays: BTreeSet<NaiveDate>) -> Self {
        Calendar {
            origin,
            holidays,
            coverage: None,
        }
    }

    pub fn with_coverage(mut self, start: NaiveDate, end: NaiveDate) -> Self {
        self.coverage = Some((start, end));
        self
    }

    pub fn meta(&self, date: NaiveDate) -> Result<DayMeta> {
        if date < self.origin {
            return Err(Error::UnknownDate(date));
        }
        if let Some((start, end)) = self.coverage {
            if date < start || date > end {
                return Err(Error::UnknownDate(date));
            }
        }
        Ok(derive_meta(date, &self.holidays, self.origin))
    }
}

/// Pure derivation of the calendar covariates for `date`.
pub fn derive_meta(date: NaiveDate, holidays: &BTreeSet<NaiveDate>, origin: NaiveDate) -> DayMeta {
    let day_of_week = date.weekday();
    let is_weekday = !matches!(day_of_week, Weekday::Sat | Weekday::Sun);
    let is_holiday = holidays.contains(&date);
    let is_day_after_holiday = date
        .pred_opt()
        .map(|prev| holidays.contains(&prev))
        .unwrap_or(false);
    DayMeta {
        date,
        day_of_week,
        month: date.month(),
        days_since_origin: (date - origin).num_days(),
        is_weekday,
        is_day_after_holiday,
        is_open: day_of_week != Weekday::Sun && !is_holiday,
    }
}

/// One half-hour slot on one day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotKey {
    pub date: NaiveDate,
    pub index: usize,
}

impl SlotKey {
    pub fn new(date: NaiveDate, index: usize) -> Self {
        SlotKey { date, index }
    }

    pub fn start(&self) -> Timestamp {
        Timestamp::new(self.date, self.index as f64)
    }

    pub fn end(&self) -> Timestamp {
        Timestamp::new(self.date, (self.index + 1) as f64)
    }
}

/// A point in time: a date plus an offset in slot units from 07:30.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Timestamp {
    pub date: NaiveDate,
    pub offset: f64,
}

impl Timestamp {
    pub fn new(date: NaiveDate, offset: f64) -> Self {
        Timestamp { date, offset }
    }

    /// Start of the day's first slot.
    pub fn opening(date: NaiveDate) -> Self {
        Timestamp::new(date, 0.0)
    }

    pub fn from_datetime(dt: NaiveDateTime) -> Self {
        let minutes = dt.time().num_seconds_from_midnight() as f64 / 60.0
            + dt.time().nanosecond() as f64 / 6e10;
        Timestamp::new(
            dt.date(),
            (minutes - OPENING_MINUTE as f64) / SLOT_MINUTES as f64,
        )
    }

    pub fn to_datetime(&self) -> NaiveDateTime {
        let millis = ((OPENING_MINUTE as f64 + self.offset * SLOT_MINUTES as f64) * 60_000.0)
            .round() as i64;
        self.date.and_hms_opt(0, 0, 0).expect("midnight")
            + chrono::Duration::milliseconds(millis)
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Timestamp {}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.date
            .cmp(&other.date)
            .then_with(|| self.offset.total_cmp(&other.offset))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_datetime().format("%Y-%m-%dT%H:%M:%S%.3f"))
    }
}
