//! Threshold calibration: choose `m` so that the in-control average number
//! of events to a false alarm, `E∞[N_τ]`, equals the budget `π`.
//!
//! Every estimate of `m ↦ E∞[N_τ]` reuses the same replication seeds, so
//! the estimated map is nondecreasing in `m` path by path.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::intensity::IntensityModel;
use crate::simulate::{feed, replication_rng, ChangeSpec, PathGenerator};

/// Paths censored beyond this fraction make an estimate unusable.
pub const MAX_CENSORED_FRACTION: f64 = 0.5;
/// Bracket expansions allowed before giving up.
pub const MAX_EXPANSIONS: usize = 60;
/// Bisection steps allowed once bracketed.
pub const MAX_BISECTIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    /// False-alarm budget: expected events to a false alarm.
    pub pi: f64,
    pub replications: usize,
    /// First simulated day.
    pub start: NaiveDate,
    /// Calendar days simulated before a path is censored.
    pub horizon_days: u32,
    pub tolerance_rel: f64,
    pub seed: u64,
}

impl CalibrationTarget {
    pub fn new(pi: f64, replications: usize, start: NaiveDate, horizon_days: u32, seed: u64) -> Self {
        CalibrationTarget {
            pi,
            replications,
            start,
            horizon_days,
            tolerance_rel: 0.02,
            seed,
        }
    }

    pub fn with_tolerance(mut self, tolerance_rel: f64) -> Self {
        self.tolerance_rel = tolerance_rel;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn end(&self) -> NaiveDate {
        self.start + chrono::Duration::days(i64::from(self.horizon_days) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0) || !self.pi.is_finite() {
            return Err(Error::Validation(format!("pi must be positive, got {}", self.pi)));
        }
        if self.replications < 100 {
            return Err(Error::Validation(format!("need at least 100 replications, got {}", self.replications)));
        }
        if !(self.tolerance_rel > 0.0 && self.tolerance_rel < 0.5) {
            return Err(Error::Validation(format!("tolerance must be in (0, 0.5), got {}", self.tolerance_rel)));
        }
        if self.horizon_days == 0 {
            return Err(Error::Validation("horizon must cover at least one day".into()));
        }
        Ok(())
    }
}

/// Outcome of one in-control path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLength {
    /// `N_τ`, or the events seen by the horizon when censored.
    pub events: u64,
    /// Open slots elapsed up to the alarm.
    pub slots: u64,
    pub censored: bool,
}

/// Simulates one in-control path with replication stream `replication`
/// and runs the detector to its first alarm or the horizon.
pub fn run_length(
    m: f64,
    model: &IntensityModel,
    template: &DetectorConfig,
    target: &CalibrationTarget,
    replication: u64,
) -> Result<RunLength> {
    let config = template.with_threshold(m);
    let mut det = Detector::new(config)?;
    let with_events = config.mode == crate::detect::ObservationMode::EventTimes;
    let rng = replication_rng(target.seed, replication);
    let mut gen = PathGenerator::new(model, ChangeSpec::in_control(), target.start, Some(target.end()), rng, with_events)?;
    let mut slots = 0;
    while let Some(slot) = gen.next_slot()? {
        slots += 1;
        let out = feed(&mut det, &slot)?;
        if let Some(alarm) = out.alarms.first() {
            return Ok(RunLength {
                events: alarm.events_at_alarm,
                slots,
                censored: false,
            });
        }
    }
    Ok(RunLength {
        events: det.state().events_seen,
        slots,
        censored: true,
    })
}

/// All replications at threshold `m`, in replication order.
pub fn run_lengths(m: f64, model: &IntensityModel, template: &DetectorConfig, target: &CalibrationTarget) -> Result<Vec<RunLength>> {
    (0..target.replications as u64)
        .into_par_iter()
        .map(|r| run_length(m, model, template, target, r))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArlEstimate {
    pub m: f64,
    pub arl: f64,
    pub stderr: f64,
    pub censored_fraction: f64,
    /// Mean open half-hours to the alarm.
    pub mean_slots: f64,
}

impl ArlEstimate {
    /// Sample mean and standard error; censored paths enter as lower
    /// bounds and inflate the standard error by `1 / (1 − censored)`.
    pub fn from_runs(m: f64, runs: &[RunLength]) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().map(|r| r.events as f64).sum::<f64>() / n;
        let var = if runs.len() > 1 {
            runs.iter().map(|r| (r.events as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let censored = runs.iter().filter(|r| r.censored).count() as f64 / n;
        let mut stderr = (var / n).sqrt();
        if censored > 0.0 {
            stderr /= (1.0 - censored).max(f64::EPSILON);
        }
        ArlEstimate {
            m,
            arl: mean,
            stderr,
            censored_fraction: censored,
            mean_slots: runs.iter().map(|r| r.slots as f64).sum::<f64>() / n,
        }
    }
}

/// Monte Carlo estimate of `E∞[N_τ]` at threshold `m`.
pub fn estimate_arl(m: f64, model: &IntensityModel, template: &DetectorConfig, target: &CalibrationTarget) -> Result<ArlEstimate> {
    target.validate()?;
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::Validation(format!("threshold must be positive, got {m}")));
    }
    let est = ArlEstimate::from_runs(m, &run_lengths(m, model, template, target)?);
    if est.censored_fraction > MAX_CENSORED_FRACTION {
        return Err(Error::HorizonTooShort {
            censored_fraction: est.censored_fraction,
        });
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold_m: f64,
    pub arl_estimate: f64,
    pub arl_stderr: f64,
    pub censored_fraction: f64,
    pub mean_slots_to_alarm: f64,
    pub pi: f64,
    pub tolerance_rel: f64,
    pub seed: u64,
    pub replications: usize,
    /// False when bisection collapsed without meeting the tolerance band.
    pub converged: bool,
    /// Every threshold evaluated, in order.
    pub trace: Vec<ArlEstimate>,
}

impl CalibrationResult {
    fn from_estimate(est: &ArlEstimate, target: &CalibrationTarget, trace: Vec<ArlEstimate>, converged: bool) -> Self {
        CalibrationResult {
            threshold_m: est.m,
            arl_estimate: est.arl,
            arl_stderr: est.stderr,
            censored_fraction: est.censored_fraction,
            mean_slots_to_alarm: est.mean_slots,
            pi: target.pi,
            tolerance_rel: target.tolerance_rel,
            seed: target.seed,
            replications: target.replications,
            converged,
            trace,
        }
    }

    /// `|arl − π| ≤ tol·π + 2·stderr`.
    pub fn within_band(&self) -> bool {
        (self.arl_estimate - self.pi).abs() <= self.tolerance_rel * self.pi + 2.0 * self.arl_stderr
    }
}

/// Finds `m` with `E∞[N_τ] ≈ π` by geometric bracketing and bisection.
/// Bisection stops once the estimate is within `tolerance_rel·π`; if the
/// bracket collapses first, the closest estimate is returned, flagged as
/// converged when it meets the looser band `tol·π + 2·stderr`.
pub fn calibrate_threshold(model: &IntensityModel, template: &DetectorConfig, target: &CalibrationTarget) -> Result<CalibrationResult> {
    target.validate()?;
    if target.pi < 1.0 {
        return Err(Error::Validation(format!("pi must be at least 1, got {}", target.pi)));
    }
    let pi = target.pi;
    let usable = |e: &ArlEstimate| e.censored_fraction <= MAX_CENSORED_FRACTION;
    let tight = |e: &ArlEstimate| usable(e) && (e.arl - pi).abs() <= target.tolerance_rel * pi;
    let mut trace = Vec::new();
    // A heavily censored estimate is still a valid upper bracket when its
    // lower-bound mean already exceeds the target.
    let eval = |m: f64, trace: &mut Vec<ArlEstimate>| -> Result<ArlEstimate> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::Validation(format!("threshold must be positive, got {m}")));
        }
        let e = ArlEstimate::from_runs(m, &run_lengths(m, model, template, target)?);
        trace.push(e);
        if !usable(&e) && e.arl < pi {
            return Err(Error::HorizonTooShort {
                censored_fraction: e.censored_fraction,
            });
        }
        Ok(e)
    };

    let first = eval(1.0, &mut trace)?;
    if tight(&first) {
        return Ok(CalibrationResult::from_estimate(&first, target, trace, true));
    }
    let (mut lo, mut hi) = (first, first);
    let mut expansions = 0;
    while hi.arl < pi {
        if expansions == MAX_EXPANSIONS {
            return Err(Error::NotBracketable { target: pi, expansions });
        }
        lo = hi;
        hi = eval(hi.m * 2.0, &mut trace)?;
        expansions += 1;
        if tight(&hi) {
            return Ok(CalibrationResult::from_estimate(&hi, target, trace, true));
        }
    }
    while lo.arl > pi {
        if expansions == MAX_EXPANSIONS {
            return Err(Error::NotBracketable { target: pi, expansions });
        }
        hi = lo;
        lo = eval(lo.m / 2.0, &mut trace)?;
        expansions += 1;
        if tight(&lo) {
            return Ok(CalibrationResult::from_estimate(&lo, target, trace, true));
        }
    }

    for _ in 0..MAX_BISECTIONS {
        if hi.m - lo.m <= 1e-9 * hi.m {
            break;
        }
        let mid = eval(0.5 * (lo.m + hi.m), &mut trace)?;
        if tight(&mid) {
            return Ok(CalibrationResult::from_estimate(&mid, target, trace, true));
        }
        if mid.arl < pi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = if !usable(&hi) || (lo.arl - pi).abs() <= (hi.arl - pi).abs() { lo } else { hi };
    let mut result = CalibrationResult::from_estimate(&best, target, trace, false);
    result.converged = result.within_band();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::Calendar;
    use crate::detect::ObservationMode;

    fn target(pi: f64, days: u32) -> CalibrationTarget {
        CalibrationTarget::new(pi, 200, "2017-01-02".parse().unwrap(), days, 7)
    }

    #[test]
    fn tiny_threshold_alarms_at_first_event() {
        let model = IntensityModel::constant(3.0, Calendar::default());
        let cfg = DetectorConfig::new(1.5, 1.0).unwrap().with_mode(ObservationMode::EventTimes);
        let est = estimate_arl(1e-9, &model, &cfg, &target(10.0, 5)).unwrap();
        assert_eq!(est.arl, 1.0);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.censored_fraction, 0.0);
    }

    #[test]
    fn short_horizon_is_an_error() {
        let model = IntensityModel::constant(3.0, Calendar::default());
        let cfg = DetectorConfig::new(1.5, 1.0).unwrap();
        let err = estimate_arl(500.0, &model, &cfg, &target(10.0, 1)).unwrap_err();
        assert!(matches!(err, Error::HorizonTooShort { .. }));
        assert!(err.is_numeric());
    }

    #[test]
    fn pi_one_gives_unit_threshold() {
        let model = IntensityModel::constant(3.0, Calendar::default());
        let cfg = DetectorConfig::new(1.5, 1.0).unwrap().with_mode(ObservationMode::EventTimes);
        let res = calibrate_threshold(&model, &cfg, &target(1.0, 5)).unwrap();
        assert!(res.threshold_m <= 1.0);
        assert_eq!(res.arl_estimate, 1.0);
    }

    #[test]
    fn validation() {
        let mut t = target(10.0, 5);
        t.replications = 99;
        assert!(t.validate().is_err());
        let t = target(10.0, 5).with_tolerance(0.5);
        assert!(t.validate().is_err());
        assert!(target(0.0, 5).validate().is_err());
    }
}
