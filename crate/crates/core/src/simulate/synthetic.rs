//! Synthetic call-centre models and datasets with known seasonal effects.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use chrono::NaiveDate;

use crate::calendar::{Calendar, Timestamp, WEEKDAY_SLOTS};
use crate::error::Result;
use crate::ingest::{DailyRecord, Dataset, SlotSeries};
use crate::intensity::{DailyLevel, Factor, FactorSpec, GlmModel, IntensityModel, SlotProfile};
use crate::simulate::{simulate_slot_counts, ChangeSpec};

/// Intraday shape with a morning and an afternoon peak and a lunch dip.
pub const TWO_PEAK_SHAPE: [f64; WEEKDAY_SLOTS] = [
    2.0, 4.0, 6.0, 7.0, 7.5, 7.5, 7.0, 6.5, 5.5, 4.0, // 07:30–12:00
    2.5, 2.5, 3.5, 5.5, 6.0, 6.0, 5.5, 5.0, 4.0, 3.0, 2.0, 1.0, // 12:30–18:00
];

/// Fixed-date public holidays (no movable feasts) for the given years.
pub fn fixed_holidays(years: impl IntoIterator<Item = i32>) -> BTreeSet<NaiveDate> {
    const DAYS: [(u32, u32); 8] = [(1, 1), (5, 1), (5, 8), (7, 14), (8, 15), (11, 1), (11, 11), (12, 25)];
    years
        .into_iter()
        .flat_map(|y| DAYS.iter().filter_map(move |&(m, d)| NaiveDate::from_ymd_opt(y, m, d)))
        .collect()
}

/// Log-scale effects of a synthetic call centre, matching the factor set
/// trend + month + day-of-week + day-after-holiday.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCallCenter {
    /// Expected Monday volume in January at the origin.
    pub base_daily: f64,
    /// Log growth per day.
    pub trend_per_day: f64,
    /// Feb..Dec, relative to January.
    pub month_effects: [f64; 11],
    /// Tue..Sat, relative to Monday.
    pub dow_effects: [f64; 5],
    pub day_after_holiday: f64,
    pub shape: [f64; WEEKDAY_SLOTS],
}

impl Default for SyntheticCallCenter {
    fn default() -> Self {
        SyntheticCallCenter {
            base_daily: 1100.0,
            trend_per_day: 0.05 / 365.0,
            month_effects: [-0.05, 0.0, -0.05, -0.15, -0.05, -0.2, -0.4, 0.05, 0.05, 0.0, -0.15],
            dow_effects: [-0.05, -0.1, -0.1, -0.15, (0.12f64).ln()],
            day_after_holiday: (1.3f64).ln(),
            shape: TWO_PEAK_SHAPE,
        }
    }
}

impl SyntheticCallCenter {
    pub fn factor_spec() -> FactorSpec {
        FactorSpec::new([Factor::Trend, Factor::Month, Factor::DayOfWeek, Factor::DayAfterHoliday])
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = vec![self.base_daily.ln(), self.trend_per_day];
        c.extend(self.month_effects);
        c.extend(self.dow_effects);
        c.push(self.day_after_holiday);
        c
    }

    pub fn glm(&self) -> GlmModel {
        GlmModel::from_coefficients(Self::factor_spec(), self.coefficients()).expect("coefficient count matches")
    }

    pub fn model(&self, calendar: Calendar) -> IntensityModel {
        let profile = SlotProfile::from_shape(&self.shape).expect("valid shape");
        IntensityModel::new(DailyLevel::Glm(self.glm()), profile, calendar)
    }
}

/// Calendar with the fixed holidays of 2015–2030 and the default origin.
pub fn default_calendar() -> Calendar {
    Calendar::new(crate::calendar::default_origin(), fixed_holidays(2015..=2030))
}

/// Simulated slot counts over `[start, end]` with daily totals summed from
/// them. Dates in `drop` (inclusive) are removed to mimic missing data.
pub fn synthetic_dataset(
    model: &IntensityModel,
    start: NaiveDate,
    end: NaiveDate,
    seed: u64,
    drop: Option<(NaiveDate, NaiveDate)>,
) -> Result<Dataset> {
    let path = simulate_slot_counts(model, ChangeSpec::in_control(), start, end, seed)?;
    let keep = |d: NaiveDate| drop.is_none_or(|(a, b)| d < a || d > b);
    let slots = path.slot_counts.filter(|r| keep(r.date));
    let daily = slots
        .daily_totals()
        .into_iter()
        .map(|(date, count)| DailyRecord { date, count })
        .collect();
    Dataset::new(daily, slots, model.calendar.clone())
}

/// Daily totals only, for fitting GLMs without slot data.
pub fn synthetic_daily(model: &IntensityModel, start: NaiveDate, end: NaiveDate, seed: u64) -> Result<Dataset> {
    let ds = synthetic_dataset(model, start, end, seed, None)?;
    Dataset::new(ds.daily, SlotSeries::default(), ds.calendar)
}

/// Smooth two-hump intraday profile for illustrative abstract-time runs.
pub fn sinusoid_shape() -> [f64; WEEKDAY_SLOTS] {
    let mut s = [0.0; WEEKDAY_SLOTS];
    for (k, v) in s.iter_mut().enumerate() {
        let x = (k as f64 + 0.5) / WEEKDAY_SLOTS as f64;
        *v = 1.0 - 0.8 * (4.0 * PI * x).cos();
    }
    s
}

/// Flat daily volume with a sinusoidal intraday profile: an abstract
/// seasonal intensity where one time unit is one business day.
pub fn abstract_model(daily_volume: f64) -> IntensityModel {
    let glm = GlmModel::from_coefficients(FactorSpec::intercept_only(), vec![daily_volume.ln()]).expect("one coefficient");
    let profile = SlotProfile::from_shape(&sinusoid_shape()).expect("valid shape");
    IntensityModel::new(DailyLevel::Glm(glm), profile, Calendar::default())
}

/// Maps abstract time `t` (business days since the opening of `start`,
/// which must be a Monday, `t < 5`) to a timestamp.
pub fn abstract_time(start: NaiveDate, t: f64) -> Timestamp {
    let day = t.floor();
    let date = start + chrono::Duration::days(day as i64);
    Timestamp::new(date, (t - day) * WEEKDAY_SLOTS as f64)
}
