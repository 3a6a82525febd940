//! Reflected CUSUM detector for proportional intensity changes.
//!
//! For an increase by factor ρ the log-likelihood-ratio process divided by
//! `ln ρ` is `U = N − β(ρ)Λ` with `β(ρ) = (ρ − 1)/ln ρ`; the statistic is
//! `V = U − inf U` and the alarm fires at the first time `V ≥ m`. The
//! decrease detector uses `U = β(ρ)Λ − N`, so events push it down by one
//! and the compensator pushes it up.
//!
//! `U` and its running minimum are held as fixed-point integers with
//! [`LEVEL_QUANTUM`] resolution. `U` is computed from the cumulative `Λ`
//! rather than by summing increments, so values at shared slot boundaries
//! are identical whichever observation mode produced them, and `V = U −
//! min U` holds exactly.

use serde::{Deserialize, Serialize};

use crate::calendar::{SlotKey, Timestamp};
use crate::error::{Error, Result};
use crate::ingest::SlotSeries;
use crate::intensity::IntensityModel;

const LEVEL_SCALE: f64 = 4_294_967_296.0;
const LEVEL_ONE: i128 = 1 << 32;
/// Resolution of the fixed-point `U`/`V` representation.
pub const LEVEL_QUANTUM: f64 = 1.0 / LEVEL_SCALE;

fn quantize(x: f64) -> i128 {
    (x * LEVEL_SCALE).round() as i128
}

fn level_to_f64(level: i128) -> f64 {
    level as f64 / LEVEL_SCALE
}

/// `β(ρ) = (ρ − 1)/ln ρ`, the compensator weight of the normalized
/// log-likelihood ratio.
pub fn beta(rho: f64) -> Result<f64> {
    if !(rho > 0.0) || rho == 1.0 || !rho.is_finite() {
        return Err(Error::Domain(format!("beta needs rho > 0 and rho != 1, got {rho}")));
    }
    // ln_1p keeps precision near rho = 1.
    Ok((rho - 1.0) / (rho - 1.0).ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Exact arrival times are observed.
    EventTimes,
    /// Only per-slot counts are observed.
    AggregatedCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub rho: f64,
    pub threshold_m: f64,
    pub direction: Direction,
    pub mode: ObservationMode,
    pub reset_on_alarm: bool,
}

impl DetectorConfig {
    /// Aggregated-count detector that re-arms after each alarm. The
    /// direction follows from `rho`.
    pub fn new(rho: f64, threshold_m: f64) -> Result<Self> {
        let direction = if rho > 1.0 { Direction::Increase } else { Direction::Decrease };
        let config = DetectorConfig {
            rho,
            threshold_m,
            direction,
            mode: ObservationMode::AggregatedCounts,
            reset_on_alarm: true,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_mode(mut self, mode: ObservationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_reset(mut self, reset_on_alarm: bool) -> Self {
        self.reset_on_alarm = reset_on_alarm;
        self
    }

    pub fn with_threshold(mut self, threshold_m: f64) -> Self {
        self.threshold_m = threshold_m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        beta(self.rho)?;
        match self.direction {
            Direction::Increase if self.rho <= 1.0 => {
                return Err(Error::Domain(format!("increase detector needs rho > 1, got {}", self.rho)))
            }
            Direction::Decrease if self.rho >= 1.0 => {
                return Err(Error::Domain(format!("decrease detector needs rho < 1, got {}", self.rho)))
            }
            _ => {}
        }
        if !(self.threshold_m > 0.0) {
            return Err(Error::Domain(format!("threshold must be positive, got {}", self.threshold_m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub time: Timestamp,
    pub direction: Direction,
    pub v_at_alarm: f64,
    /// Events observed up to and including the alarm instant.
    pub events_at_alarm: u64,
}

/// Running state of one detector stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumState {
    u: i128,
    u_min: i128,
    v: i128,
    lambda_cum: f64,
    pub events_seen: u64,
    pub clock: Option<Timestamp>,
    armed: bool,
}

impl Default for CusumState {
    fn default() -> Self {
        CusumState {
            u: 0,
            u_min: 0,
            v: 0,
            lambda_cum: 0.0,
            events_seen: 0,
            clock: None,
            armed: true,
        }
    }
}

impl CusumState {
    pub fn v(&self) -> f64 {
        level_to_f64(self.v)
    }

    pub fn u(&self) -> f64 {
        level_to_f64(self.u)
    }

    pub fn u_min(&self) -> f64 {
        level_to_f64(self.u_min)
    }

    /// Cumulative compensator Λ consumed so far.
    pub fn lambda_cum(&self) -> f64 {
        self.lambda_cum
    }
}

/// Result of one event-mode step. Between events `V` drifts and is clamped
/// at zero, at each event it jumps by one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutcome {
    pub alarms: Vec<AlarmEvent>,
    pub events: u64,
    pub lambda_increment: f64,
}

/// A CUSUM detector: configuration plus state.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    config: DetectorConfig,
    beta: f64,
    state: CusumState,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Detector {
            beta: beta(config.rho)?,
            config,
            state: CusumState::default(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn state(&self) -> &CusumState {
        &self.state
    }

    pub fn v(&self) -> f64 {
        self.state.v()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn u_at(&self, events: u64, lambda_cum: f64) -> i128 {
        let level = events as i128 * LEVEL_ONE - quantize(self.beta * lambda_cum);
        match self.config.direction {
            Direction::Increase => level,
            Direction::Decrease => -level,
        }
    }

    /// Moves `U` to `u`, updating `V` through the reflected recursion
    /// `V ← max(0, V + ΔU)` and the running minimum alongside it.
    fn move_to(&mut self, u: i128) {
        let s = &mut self.state;
        s.v = (s.v + (u - s.u)).max(0);
        s.u = u;
        s.u_min = s.u_min.min(u);
        debug_assert_eq!(s.v, s.u - s.u_min);
    }

    fn check_alarm(&mut self, time: Timestamp) -> Option<AlarmEvent> {
        let v = self.state.v();
        if v >= self.config.threshold_m {
            if self.state.armed {
                let alarm = AlarmEvent {
                    time,
                    direction: self.config.direction,
                    v_at_alarm: v,
                    events_at_alarm: self.state.events_seen,
                };
                if self.config.reset_on_alarm {
                    self.state.v = 0;
                    self.state.u_min = self.state.u;
                } else {
                    self.state.armed = false;
                }
                return Some(alarm);
            }
        } else {
            self.state.armed = true;
        }
        None
    }

    /// One aggregated observation: `count` events against a compensator
    /// increment `lambda_increment` over an interval ending at `end`. An
    /// alarm is stamped with the interval end.
    pub fn step_aggregated(&mut self, end: Timestamp, count: u64, lambda_increment: f64) -> Result<Option<AlarmEvent>> {
        if !(lambda_increment >= 0.0) || !lambda_increment.is_finite() {
            return Err(Error::Validation(format!("bad intensity increment {lambda_increment}")));
        }
        self.state.events_seen += count;
        self.state.lambda_cum += lambda_increment;
        let u = self.u_at(self.state.events_seen, self.state.lambda_cum);
        self.move_to(u);
        self.state.clock = Some(end);
        Ok(self.check_alarm(end))
    }

    /// Event-mode update over `[lo, hi]` inside one slot with constant
    /// `rate` (expected events per slot unit). `events` are offsets within
    /// the day, sorted and inside `[lo, hi]`.
    pub fn step_slot_events(&mut self, slot: SlotKey, rate: f64, lo: f64, hi: f64, events: &[f64]) -> Result<StepOutcome> {
        let k = slot.index as f64;
        if !(lo >= k && lo <= hi && hi <= k + 1.0) {
            return Err(Error::Validation(format!("interval [{lo}, {hi}] is not inside slot {k}")));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Validation(format!("bad rate {rate}")));
        }
        if events.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("event times are not sorted".into()));
        }
        if events.first().is_some_and(|t| *t < lo) || events.last().is_some_and(|t| *t > hi) {
            return Err(Error::Validation("event time outside the step interval".into()));
        }
        let lambda_start = self.state.lambda_cum;
        let mut out = StepOutcome::default();
        let mut t_prev = lo;
        for &t in events {
            self.drift_to(slot, rate, lambda_start, lo, t_prev, t, &mut out);
            self.state.events_seen += 1;
            out.events += 1;
            let u = self.u_at(self.state.events_seen, lambda_start + rate * (t - lo));
            self.move_to(u);
            let time = Timestamp::new(slot.date, t);
            self.state.clock = Some(time);
            out.alarms.extend(self.check_alarm(time));
            t_prev = t;
        }
        self.drift_to(slot, rate, lambda_start, lo, t_prev, hi, &mut out);
        self.state.lambda_cum = lambda_start + rate * (hi - lo);
        out.lambda_increment = rate * (hi - lo);
        self.state.clock = Some(Timestamp::new(slot.date, hi));
        Ok(out)
    }

    /// Pure compensator drift from `a` to `b`. An increase detector can only
    /// fall during drift; a decrease detector rises and may cross `m`
    /// between events, in which case the crossing instant is solved for.
    fn drift_to(&mut self, slot: SlotKey, rate: f64, lambda_start: f64, lo: f64, a: f64, b: f64, out: &mut StepOutcome) {
        let n = self.state.events_seen;
        if self.config.direction == Direction::Decrease && rate > 0.0 {
            let mut a = a;
            loop {
                let u_end = self.u_at(n, lambda_start + rate * (b - lo));
                let v_end = level_to_f64(self.state.v + (u_end - self.state.u));
                if !(self.state.armed && v_end >= self.config.threshold_m) {
                    break;
                }
                let needed = (self.config.threshold_m - self.state.v()).max(0.0);
                let t = (a + needed / (self.beta * rate)).clamp(a, b);
                let mut u_t = self.u_at(n, lambda_start + rate * (t - lo));
                // Rounding may leave V a quantum short of m at the solved instant.
                if level_to_f64(self.state.v + (u_t - self.state.u)) < self.config.threshold_m {
                    u_t = u_t.max(self.state.u + quantize(needed) + 1).min(u_end);
                }
                self.move_to(u_t);
                let time = Timestamp::new(slot.date, t);
                match self.check_alarm(time) {
                    Some(alarm) => out.alarms.push(alarm),
                    None => break,
                }
                if !self.config.reset_on_alarm || t >= b {
                    break;
                }
                a = t;
            }
        }
        let u = self.u_at(n, lambda_start + rate * (b - lo));
        self.move_to(u);
        if self.config.direction == Direction::Increase {
            // V only falls here; this re-arms a non-resetting detector.
            let _ = self.check_alarm(Timestamp::new(slot.date, b));
        } else if let Some(alarm) = self.check_alarm(Timestamp::new(slot.date, b)) {
            out.alarms.push(alarm);
        }
    }

    /// Event-mode update from `from` to `to` using the model's rates.
    /// `events` must be sorted and lie inside `[from, to]`.
    pub fn step_events(&mut self, from: Timestamp, to: Timestamp, events: &[Timestamp], model: &IntensityModel) -> Result<StepOutcome> {
        if to < from {
            return Err(Error::Validation(format!("interval end {to} precedes start {from}")));
        }
        if events.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("event times are not sorted".into()));
        }
        if events.first().is_some_and(|t| *t < from) || events.last().is_some_and(|t| *t > to) {
            return Err(Error::Validation("event time outside the step interval".into()));
        }
        let mut out = StepOutcome::default();
        let mut next = 0;
        for date in from.date.iter_days().take_while(|d| *d <= to.date) {
            let rates = model.day_rates(date)?;
            let day_lo = if date == from.date { from.offset } else { f64::NEG_INFINITY };
            let day_hi = if date == to.date { to.offset } else { f64::INFINITY };
            let width = rates.len().max(
                events[next..]
                    .iter()
                    .take_while(|e| e.date == date)
                    .map(|e| e.offset.floor() as usize + 1)
                    .max()
                    .unwrap_or(0),
            );
            for k in 0..width {
                let lo = day_lo.max(k as f64);
                let hi = day_hi.min(k as f64 + 1.0);
                if lo > hi {
                    continue;
                }
                let start = next;
                while next < events.len() && events[next].date == date && events[next].offset <= hi {
                    next += 1;
                }
                let offsets: Vec<f64> = events[start..next].iter().map(|e| e.offset).collect();
                let rate = rates.get(k).copied().unwrap_or(0.0);
                let step = self.step_slot_events(SlotKey::new(date, k), rate, lo, hi, &offsets)?;
                out.alarms.extend(step.alarms);
                out.events += step.events;
                out.lambda_increment += step.lambda_increment;
            }
        }
        if next != events.len() {
            return Err(Error::Validation("events fall outside the open slots of the interval".into()));
        }
        Ok(out)
    }
}

/// Event times observed over a set of slots.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventSeries {
    /// Observed slots, sorted; unobserved slots are treated as gaps.
    pub slots: Vec<SlotKey>,
    /// Sorted arrival times, each inside one of `slots`.
    pub events: Vec<Timestamp>,
}

impl EventSeries {
    /// Per-slot counts of the events.
    pub fn to_slot_series(&self) -> SlotSeries {
        let mut next = 0;
        let records = self
            .slots
            .iter()
            .map(|key| {
                let start = next;
                while next < self.events.len() && event_slot(&self.events[next]) == *key {
                    next += 1;
                }
                crate::ingest::SlotRecord {
                    date: key.date,
                    slot: key.index,
                    count: (next - start) as u64,
                }
            })
            .collect();
        SlotSeries::new(records).expect("slot keys are unique")
    }
}

/// The slot containing an event; an event exactly at a slot end belongs to
/// that slot.
pub fn event_slot(t: &Timestamp) -> SlotKey {
    let k = t.offset.floor();
    let idx = if t.offset == k && k > 0.0 { k - 1.0 } else { k };
    SlotKey::new(t.date, idx.max(0.0) as usize)
}

#[derive(Debug, Clone, Copy)]
pub enum Observations<'a> {
    Slots(&'a SlotSeries),
    Events(&'a EventSeries),
}

/// One row of the V trajectory, stamped at the slot end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VPathPoint {
    pub time: Timestamp,
    pub v: f64,
    pub lambda_increment: f64,
    pub count: u64,
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRun {
    pub path: Vec<VPathPoint>,
    pub alarms: Vec<AlarmEvent>,
    pub final_state: CusumState,
}

struct DayRates<'m> {
    model: &'m IntensityModel,
    date: Option<chrono::NaiveDate>,
    rates: Vec<f64>,
}

impl<'m> DayRates<'m> {
    fn new(model: &'m IntensityModel) -> Self {
        DayRates {
            model,
            date: None,
            rates: Vec::new(),
        }
    }

    fn rate(&mut self, key: SlotKey) -> Result<f64> {
        if self.date != Some(key.date) {
            self.rates = self.model.day_rates(key.date)?;
            self.date = Some(key.date);
        }
        Ok(self.rates.get(key.index).copied().unwrap_or(0.0))
    }
}

/// Runs one detector over a stream, one step per observed slot. Slots that
/// are not observed leave the state untouched.
pub fn run_detector(obs: Observations<'_>, model: &IntensityModel, config: &DetectorConfig) -> Result<DetectorRun> {
    let mut det = Detector::new(*config)?;
    let mut rates = DayRates::new(model);
    let mut path = Vec::new();
    let mut alarms = Vec::new();
    match (config.mode, obs) {
        (ObservationMode::EventTimes, Observations::Slots(_)) => {
            return Err(Error::Validation("event-time detector needs event observations".into()));
        }
        (ObservationMode::AggregatedCounts, Observations::Slots(series)) => {
            for r in series.records() {
                let inc = rates.rate(r.key())?;
                let alarm = det.step_aggregated(r.key().end(), r.count, inc)?;
                path.push(VPathPoint {
                    time: r.key().end(),
                    v: det.v(),
                    lambda_increment: inc,
                    count: r.count,
                    alarm: alarm.is_some(),
                });
                alarms.extend(alarm);
            }
        }
        (ObservationMode::AggregatedCounts, Observations::Events(events)) => {
            let series = events.to_slot_series();
            return run_detector(Observations::Slots(&series), model, config);
        }
        (ObservationMode::EventTimes, Observations::Events(events)) => {
            let mut next = 0;
            for key in &events.slots {
                let start = next;
                while next < events.events.len() && event_slot(&events.events[next]) == *key {
                    next += 1;
                }
                let offsets: Vec<f64> = events.events[start..next].iter().map(|e| e.offset).collect();
                let rate = rates.rate(*key)?;
                let step = det.step_slot_events(*key, rate, key.index as f64, key.index as f64 + 1.0, &offsets)?;
                path.push(VPathPoint {
                    time: key.end(),
                    v: det.v(),
                    lambda_increment: step.lambda_increment,
                    count: step.events,
                    alarm: !step.alarms.is_empty(),
                });
                alarms.extend(step.alarms);
            }
            if next != events.events.len() {
                return Err(Error::Validation("events outside the observed slots".into()));
            }
        }
    }
    Ok(DetectorRun {
        path,
        alarms,
        final_state: det.state,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleSidedRun {
    pub up: DetectorRun,
    pub down: DetectorRun,
    /// Alarms of both sides in time order; ties list the increase side first.
    pub alarms: Vec<AlarmEvent>,
}

/// Independent increase and decrease detectors over the same stream.
pub fn double_sided_run(
    obs: Observations<'_>,
    model: &IntensityModel,
    config_up: &DetectorConfig,
    config_down: &DetectorConfig,
) -> Result<DoubleSidedRun> {
    if config_up.direction != Direction::Increase || config_down.direction != Direction::Decrease {
        return Err(Error::Validation("double-sided run needs an increase and a decrease config".into()));
    }
    let up = run_detector(obs, model, config_up)?;
    let down = run_detector(obs, model, config_down)?;
    let mut alarms: Vec<AlarmEvent> = up.alarms.iter().chain(&down.alarms).copied().collect();
    alarms.sort_by(|a, b| a.time.cmp(&b.time));
    Ok(DoubleSidedRun { up, down, alarms })
}
