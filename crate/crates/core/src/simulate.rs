//! Synthetic paths from an [`IntensityModel`], with an optional
//! proportional change at `θ`, and scenario transforms on slot series.
//!
//! Every replication owns a ChaCha8 stream derived from `(seed,
//! replication)`, so results do not depend on thread scheduling.

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::calendar::{SlotKey, Timestamp, SATURDAY_SLOTS};
use crate::detect::{Detector, ObservationMode, StepOutcome};
use crate::error::{Error, Result};
use crate::ingest::{SlotRecord, SlotSeries};
use crate::intensity::{IntensityModel, SlotProfile};

pub mod synthetic;

/// The RNG stream for one replication.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Ground truth of a simulated path: intensity `λ` before `theta`, `ρλ`
/// from `theta` on. `theta = None` is the in-control case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeSpec {
    pub theta: Option<Timestamp>,
    pub rho: f64,
}

impl ChangeSpec {
    pub fn in_control() -> Self {
        ChangeSpec { theta: None, rho: 1.0 }
    }

    pub fn at(theta: Timestamp, rho: f64) -> Self {
        ChangeSpec { theta: Some(theta), rho }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Validation(format!("change factor must be positive, got {}", self.rho)));
        }
        Ok(())
    }

    /// Portion of the slot `[k, k + 1]` on `date` that lies at or after θ.
    fn post_fraction(&self, key: SlotKey) -> f64 {
        match self.theta {
            None => 0.0,
            Some(theta) if key.date < theta.date => 0.0,
            Some(theta) if key.date > theta.date => 1.0,
            Some(theta) => (key.index as f64 + 1.0 - theta.offset.max(key.index as f64)).clamp(0.0, 1.0),
        }
    }
}

/// One simulated slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSlot {
    pub key: SlotKey,
    /// In-control expected count.
    pub rate: f64,
    pub count: u64,
    /// Events strictly before θ.
    pub before_theta: u64,
    /// Event offsets within the day, when event times are simulated.
    pub events: Vec<f64>,
}

/// Lazily simulates open slots day by day from `start`.
pub struct PathGenerator<'m> {
    model: &'m IntensityModel,
    change: ChangeSpec,
    rng: ChaCha8Rng,
    with_events: bool,
    date: NaiveDate,
    end: Option<NaiveDate>,
    rates: Vec<f64>,
    slot: usize,
}

impl<'m> PathGenerator<'m> {
    pub fn new(
        model: &'m IntensityModel,
        change: ChangeSpec,
        start: NaiveDate,
        end: Option<NaiveDate>,
        rng: ChaCha8Rng,
        with_events: bool,
    ) -> Result<Self> {
        change.validate()?;
        Ok(PathGenerator {
            model,
            change,
            rng,
            with_events,
            date: start,
            end,
            rates: model.day_rates(start)?,
            slot: 0,
        })
    }

    pub fn next_slot(&mut self) -> Result<Option<SimSlot>> {
        while self.slot >= self.rates.len() {
            let Some(next) = self.date.succ_opt() else { return Ok(None) };
            if self.end.is_some_and(|end| next > end) {
                return Ok(None);
            }
            self.date = next;
            self.rates = self.model.day_rates(next)?;
            self.slot = 0;
        }
        let key = SlotKey::new(self.date, self.slot);
        let rate = self.rates[self.slot];
        self.slot += 1;
        let post = self.change.post_fraction(key);
        let sim = if self.with_events {
            self.thin(key, rate, post)
        } else {
            let before = poisson(&mut self.rng, rate * (1.0 - post));
            let after = poisson(&mut self.rng, rate * post * self.change.rho);
            SimSlot {
                key,
                rate,
                count: before + after,
                before_theta: before,
                events: Vec::new(),
            }
        };
        Ok(Some(sim))
    }

    /// Lewis–Shedler thinning against the constant majorant
    /// `rate × max(1, ρ)` over the slot.
    fn thin(&mut self, key: SlotKey, rate: f64, post: f64) -> SimSlot {
        let k = key.index as f64;
        let theta_offset = k + 1.0 - post;
        let factor = if post > 0.0 { self.change.rho.max(1.0) } else { 1.0 };
        let majorant = rate * factor;
        let mut events = Vec::new();
        let mut before = 0;
        if majorant > 0.0 {
            let mut t = k;
            loop {
                let gap: f64 = Exp1.sample(&mut self.rng);
                t += gap / majorant;
                if t >= k + 1.0 {
                    break;
                }
                let after_theta = post > 0.0 && t >= theta_offset;
                let actual = if after_theta { rate * self.change.rho } else { rate };
                let u: f64 = self.rng.random();
                if u * majorant < actual {
                    events.push(t);
                    if !after_theta {
                        before += 1;
                    }
                }
            }
        }
        SimSlot {
            key,
            rate,
            count: events.len() as u64,
            before_theta: before,
            events,
        }
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Feeds one simulated slot to a detector in its observation mode.
pub fn feed(det: &mut Detector, slot: &SimSlot) -> Result<StepOutcome> {
    match det.config().mode {
        ObservationMode::AggregatedCounts => {
            let alarm = det.step_aggregated(slot.key.end(), slot.count, slot.rate)?;
            Ok(StepOutcome {
                alarms: alarm.into_iter().collect(),
                events: slot.count,
                lambda_increment: slot.rate,
            })
        }
        ObservationMode::EventTimes => {
            let k = slot.key.index as f64;
            det.step_slot_events(slot.key, slot.rate, k, k + 1.0, &slot.events)
        }
    }
}

/// A simulated path over a date range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    pub event_times: Option<Vec<Timestamp>>,
    pub slot_counts: SlotSeries,
    pub change: ChangeSpec,
    pub seed: u64,
    /// N at θ: events strictly before the change.
    pub events_before_theta: u64,
}

impl SimPath {
    pub fn event_series(&self) -> Option<crate::detect::EventSeries> {
        self.event_times.as_ref().map(|events| crate::detect::EventSeries {
            slots: self.slot_counts.records().iter().map(SlotRecord::key).collect(),
            events: events.clone(),
        })
    }
}

fn simulate(
    model: &IntensityModel,
    change: ChangeSpec,
    start: NaiveDate,
    end: NaiveDate,
    seed: u64,
    with_events: bool,
) -> Result<SimPath> {
    if end < start {
        return Err(Error::Validation(format!("horizon end {end} precedes start {start}")));
    }
    let mut generator = PathGenerator::new(model, change, start, Some(end), replication_rng(seed, 0), with_events)?;
    let mut records = Vec::new();
    let mut events = Vec::new();
    let mut before = 0;
    while let Some(slot) = generator.next_slot()? {
        before += slot.before_theta;
        events.extend(slot.events.iter().map(|t| Timestamp::new(slot.key.date, *t)));
        records.push(SlotRecord {
            date: slot.key.date,
            slot: slot.key.index,
            count: slot.count,
        });
    }
    Ok(SimPath {
        event_times: with_events.then_some(events),
        slot_counts: SlotSeries::new(records)?,
        change,
        seed,
        events_before_theta: before,
    })
}

/// Exact event times by thinning, plus their per-slot histogram, for the
/// inclusive date range `[start, end]`.
pub fn simulate_events(model: &IntensityModel, change: ChangeSpec, start: NaiveDate, end: NaiveDate, seed: u64) -> Result<SimPath> {
    simulate(model, change, start, end, seed, true)
}

/// Independent Poisson counts per open slot.
pub fn simulate_slot_counts(model: &IntensityModel, change: ChangeSpec, start: NaiveDate, end: NaiveDate, seed: u64) -> Result<SimPath> {
    simulate(model, change, start, end, seed, false)
}

pub const POSTPONE_PERIOD_DAYS: u32 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioTransform {
    Identity,
    /// On every third Tuesday from `anchor` (default: the first Tuesday of
    /// the series) the morning calls before 12:30 move to the afternoon.
    PostponeThirdTuesdayMorning { anchor: Option<NaiveDate> },
}

impl ScenarioTransform {
    pub fn postpone_third_tuesday() -> Self {
        ScenarioTransform::PostponeThirdTuesdayMorning { anchor: None }
    }

    /// The anchor Tuesday this transform uses on `series`.
    pub fn anchor(&self, series: &SlotSeries) -> Option<NaiveDate> {
        match self {
            ScenarioTransform::Identity => None,
            ScenarioTransform::PostponeThirdTuesdayMorning { anchor: Some(a) } => Some(*a),
            ScenarioTransform::PostponeThirdTuesdayMorning { anchor: None } => {
                series.dates().into_iter().find(|d| d.weekday() == Weekday::Tue)
            }
        }
    }

    /// Dates of `series` that the transform modifies.
    pub fn affected_dates(&self, series: &SlotSeries) -> Vec<NaiveDate> {
        let Some(anchor) = self.anchor(series) else { return Vec::new() };
        series
            .dates()
            .into_iter()
            .filter(|d| *d >= anchor && (*d - anchor).num_days() % POSTPONE_PERIOD_DAYS as i64 == 0)
            .collect()
    }
}

/// First afternoon slot (12:30) of the postponement scenario.
pub const AFTERNOON_START_SLOT: usize = SATURDAY_SLOTS;

/// Applies `transform`. Morning calls on affected days are spread over the
/// afternoon slots in proportion to the weekday profile (largest-remainder
/// rounding, ties to the earlier slot), so daily totals are preserved.
pub fn apply_scenario(series: &SlotSeries, transform: &ScenarioTransform, profile: &SlotProfile) -> Result<SlotSeries> {
    let affected: BTreeSet<NaiveDate> = transform.affected_dates(series).into_iter().collect();
    if affected.is_empty() {
        return Ok(series.clone());
    }
    let mut records = series.records().to_vec();
    let mut i = 0;
    while i < records.len() {
        let date = records[i].date;
        let mut j = i;
        while j < records.len() && records[j].date == date {
            j += 1;
        }
        if affected.contains(&date) {
            postpone_morning(&mut records[i..j], profile);
        }
        i = j;
    }
    SlotSeries::new(records)
}

fn postpone_morning(day: &mut [SlotRecord], profile: &SlotProfile) {
    let afternoon: Vec<usize> = (0..day.len()).filter(|&i| day[i].slot >= AFTERNOON_START_SLOT).collect();
    if afternoon.is_empty() {
        return;
    }
    let moved: u64 = day.iter().filter(|r| r.slot < AFTERNOON_START_SLOT).map(|r| r.count).sum();
    let weights: Vec<f64> = afternoon
        .iter()
        .map(|&i| profile.weekday_fractions.get(day[i].slot).copied().unwrap_or(0.0))
        .collect();
    let total_w: f64 = weights.iter().sum();
    let weights: Vec<f64> = if total_w > 0.0 {
        weights.iter().map(|w| w / total_w).collect()
    } else {
        vec![1.0 / afternoon.len() as f64; afternoon.len()]
    };
    let exact: Vec<f64> = weights.iter().map(|w| w * moved as f64).collect();
    let mut shares: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let mut left = moved - shares.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        shares[k] += 1;
        left -= 1;
    }
    for r in day.iter_mut().filter(|r| r.slot < AFTERNOON_START_SLOT) {
        r.count = 0;
    }
    for (&i, s) in afternoon.iter().zip(shares) {
        day[i].count += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::Calendar;
    use crate::intensity::{DailyLevel, FactorSpec, GlmModel};

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn flat(daily: f64) -> IntensityModel {
        let glm = GlmModel::from_coefficients(FactorSpec::intercept_only(), vec![daily.ln()]).unwrap();
        IntensityModel::new(DailyLevel::Glm(glm), SlotProfile::uniform(), Calendar::default())
    }

    #[test]
    fn post_fraction_splits_theta_slot() {
        let c = ChangeSpec::at(Timestamp::new(d("2017-01-02"), 3.5), 3.0);
        assert_eq!(c.post_fraction(SlotKey::new(d("2017-01-02"), 3)), 0.5);
        assert_eq!(c.post_fraction(SlotKey::new(d("2017-01-02"), 2)), 0.0);
        assert_eq!(c.post_fraction(SlotKey::new(d("2017-01-02"), 4)), 1.0);
        assert_eq!(c.post_fraction(SlotKey::new(d("2017-01-03"), 0)), 1.0);
        // Mean in the split slot: 10 × (0.5 + 3 × 0.5) = 20.
        let rate = 10.0;
        let post = c.post_fraction(SlotKey::new(d("2017-01-02"), 3));
        assert_eq!(rate * (1.0 - post) + rate * post * c.rho, 20.0);
    }

    #[test]
    fn zero_intensity_is_empty() {
        let m = IntensityModel::constant(0.0, Calendar::default());
        let p = simulate_events(&m, ChangeSpec::in_control(), d("2017-01-02"), d("2017-01-08"), 1).unwrap();
        assert!(p.event_times.unwrap().is_empty());
        assert_eq!(p.slot_counts.total(), 0);
    }

    #[test]
    fn same_seed_same_path() {
        let m = flat(500.0);
        let a = simulate_events(&m, ChangeSpec::in_control(), d("2017-01-02"), d("2017-01-06"), 9).unwrap();
        let b = simulate_events(&m, ChangeSpec::in_control(), d("2017-01-02"), d("2017-01-06"), 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_events(&m, ChangeSpec::in_control(), d("2017-01-02"), d("2017-01-06"), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn histogram_matches_events() {
        let m = flat(500.0);
        let p = simulate_events(&m, ChangeSpec::in_control(), d("2017-01-02"), d("2017-01-07"), 3).unwrap();
        let events = p.event_series().unwrap();
        assert_eq!(events.to_slot_series(), p.slot_counts);
        let times = p.event_times.unwrap();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    fn day(date: &str, counts: &[u64]) -> Vec<SlotRecord> {
        counts
            .iter()
            .enumerate()
            .map(|(slot, &count)| SlotRecord { date: d(date), slot, count })
            .collect()
    }

    #[test]
    fn postpone_conserves_totals() {
        let mut recs = day("2017-01-03", &[40; 22]);
        recs.extend(day("2017-01-04", &[40; 22]));
        recs.extend(day("2017-01-24", &[40; 22]));
        let series = SlotSeries::new(recs).unwrap();
        let t = ScenarioTransform::postpone_third_tuesday();
        assert_eq!(t.affected_dates(&series), vec![d("2017-01-03"), d("2017-01-24")]);
        let out = apply_scenario(&series, &t, &SlotProfile::uniform()).unwrap();
        assert_eq!(out.daily_totals(), series.daily_totals());
        let tue = &out.by_day()[&d("2017-01-03")];
        assert!(tue[..10].iter().all(|r| r.count == 0));
        assert_eq!(tue[10..].iter().map(|r| r.count).sum::<u64>(), 400 + 480);
        assert_eq!(out.by_day()[&d("2017-01-04")], series.by_day()[&d("2017-01-04")]);

        assert_eq!(apply_scenario(&series, &ScenarioTransform::Identity, &SlotProfile::uniform()).unwrap(), series);
    }
}
