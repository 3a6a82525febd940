//! Detector performance on simulated ground truth: detection delay in
//! events, its worst case over change times, false alarms, and threshold
//! exceedance.
//!
//! The worst case over pre-change histories cannot be computed exactly;
//! each grid point reports the Monte Carlo mean and the largest delay seen
//! across its simulated pre-change paths.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::Timestamp;
use crate::detect::{Detector, DetectorConfig, ObservationMode, VPathPoint};
use crate::error::{Error, Result};
use crate::intensity::IntensityModel;
use crate::simulate::{feed, replication_rng, ChangeSpec, PathGenerator};

/// Days treated as one in-control year for false-alarm rates.
pub const DAYS_PER_YEAR: f64 = 365.25;

/// Simulation settings shared by every grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySetup {
    pub start: NaiveDate,
    /// Last simulated day (inclusive).
    pub end: NaiveDate,
    pub replications: usize,
    pub seed: u64,
}

/// One replication with a change at `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayRun {
    /// `(N_τ − N_θ)⁺` for the first alarm at or after θ.
    pub delay_events: Option<u64>,
    /// Open half-hours from θ to that alarm.
    pub delay_slots: Option<f64>,
    /// Alarms strictly before θ.
    pub false_alarms: u64,
    /// In-control open steps, and those with `V ≥ m`.
    pub pre_steps: u64,
    pub pre_exceed: u64,
}

fn slot_overlap_after(theta: Timestamp, key: crate::calendar::SlotKey, upto: Option<f64>) -> f64 {
    let lo = key.index as f64;
    let hi = upto.unwrap_or(lo + 1.0);
    if key.date > theta.date {
        hi - lo
    } else if key.date < theta.date {
        0.0
    } else {
        (hi - lo.max(theta.offset)).max(0.0)
    }
}

/// Simulates one path with a change at `change.theta` and runs the detector
/// to its first alarm at or after θ or to the end of the horizon.
pub fn delay_run(model: &IntensityModel, change: ChangeSpec, config: &DetectorConfig, setup: &DelaySetup, replication: u64) -> Result<DelayRun> {
    let theta = change
        .theta
        .ok_or_else(|| Error::Validation("detection delay needs a finite change time".into()))?;
    let mut det = Detector::new(*config)?;
    let with_events = config.mode == ObservationMode::EventTimes;
    let rng = replication_rng(setup.seed, replication);
    let mut gen = PathGenerator::new(model, change, setup.start, Some(setup.end), rng, with_events)?;
    let mut run = DelayRun {
        delay_events: None,
        delay_slots: None,
        false_alarms: 0,
        pre_steps: 0,
        pre_exceed: 0,
    };
    let mut n_theta = 0u64;
    let mut slots_after = 0.0;
    while let Some(slot) = gen.next_slot()? {
        n_theta += slot.before_theta;
        let out = feed(&mut det, &slot)?;
        let before = slot.key.end() <= theta;
        if before && slot.rate > 0.0 {
            run.pre_steps += 1;
            if det.v() >= config.threshold_m {
                run.pre_exceed += 1;
            }
        }
        for alarm in &out.alarms {
            if alarm.time < theta {
                run.false_alarms += 1;
                continue;
            }
            let upto = (config.mode == ObservationMode::EventTimes).then_some(alarm.time.offset);
            slots_after += slot_overlap_after(theta, slot.key, upto);
            run.delay_events = Some(alarm.events_at_alarm.saturating_sub(n_theta));
            run.delay_slots = Some(slots_after);
            return Ok(run);
        }
        slots_after += slot_overlap_after(theta, slot.key, None);
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    pub theta: Timestamp,
    /// Mean over detecting paths; `None` when nothing was detected.
    pub mean_delay_events: Option<f64>,
    pub stderr: Option<f64>,
    /// Largest delay over the simulated pre-change histories.
    pub max_delay_events: Option<u64>,
    pub mean_delay_slots: Option<f64>,
    pub detect_probability: f64,
    pub false_alarms: u64,
    pub pre_steps: u64,
    pub pre_exceed: u64,
    /// In-control calendar days covered by all replications.
    pub in_control_days: f64,
}

fn mean_and_stderr(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, (var / n).sqrt()))
}

fn days_to(start: NaiveDate, theta: Timestamp) -> f64 {
    (theta.date - start).num_days() as f64 + theta.offset / crate::calendar::WEEKDAY_SLOTS as f64
}

/// Detection delay in events at one change point.
pub fn detection_delay(model: &IntensityModel, change: ChangeSpec, config: &DetectorConfig, setup: &DelaySetup) -> Result<DelayEstimate> {
    let theta = change
        .theta
        .ok_or_else(|| Error::Validation("detection delay needs a finite change time".into()))?;
    if setup.replications == 0 {
        return Err(Error::Validation("need at least one replication".into()));
    }
    let runs: Vec<DelayRun> = (0..setup.replications as u64)
        .into_par_iter()
        .map(|r| delay_run(model, change, config, setup, r))
        .collect::<Result<_>>()?;
    let delays: Vec<f64> = runs.iter().filter_map(|r| r.delay_events).map(|d| d as f64).collect();
    let slots: Vec<f64> = runs.iter().filter_map(|r| r.delay_slots).collect();
    let stats = mean_and_stderr(&delays);
    let pre_days = days_to(setup.start, theta).clamp(0.0, ((setup.end - setup.start).num_days() + 1) as f64);
    Ok(DelayEstimate {
        theta,
        mean_delay_events: stats.map(|s| s.0),
        stderr: stats.map(|s| s.1),
        max_delay_events: runs.iter().filter_map(|r| r.delay_events).max(),
        mean_delay_slots: mean_and_stderr(&slots).map(|s| s.0),
        detect_probability: delays.len() as f64 / runs.len() as f64,
        false_alarms: runs.iter().map(|r| r.false_alarms).sum(),
        pre_steps: runs.iter().map(|r| r.pre_steps).sum(),
        pre_exceed: runs.iter().map(|r| r.pre_exceed).sum(),
        in_control_days: pre_days * runs.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub rho: f64,
    pub threshold_m: f64,
    pub per_theta: Vec<DelayEstimate>,
    /// Largest mean delay over the grid; `None` if no grid point detected.
    pub worst_case_delay_events: Option<f64>,
    /// Largest single-path delay over the grid.
    pub worst_path_delay_events: Option<u64>,
    /// Pre-change alarms per in-control year.
    pub false_alarm_rate: f64,
    /// Share of in-control open steps with `V ≥ m`.
    pub exceedance_fraction: f64,
    pub seed: u64,
    pub replications: usize,
}

/// Detection delay over a grid of change times; the worst case is the
/// maximum of the per-point means.
pub fn worst_case_delay(
    model: &IntensityModel,
    rho: f64,
    theta_grid: &[Timestamp],
    config: &DetectorConfig,
    setup: &DelaySetup,
) -> Result<DelayReport> {
    if theta_grid.is_empty() {
        return Err(Error::Validation("empty change-time grid".into()));
    }
    let per_theta = theta_grid
        .iter()
        .map(|&theta| detection_delay(model, ChangeSpec::at(theta, rho), config, setup))
        .collect::<Result<Vec<_>>>()?;
    let worst = per_theta
        .iter()
        .filter_map(|e| e.mean_delay_events)
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    let days: f64 = per_theta.iter().map(|e| e.in_control_days).sum();
    let false_alarms: u64 = per_theta.iter().map(|e| e.false_alarms).sum();
    let steps: u64 = per_theta.iter().map(|e| e.pre_steps).sum();
    let exceed: u64 = per_theta.iter().map(|e| e.pre_exceed).sum();
    Ok(DelayReport {
        rho,
        threshold_m: config.threshold_m,
        worst_case_delay_events: worst,
        worst_path_delay_events: per_theta.iter().filter_map(|e| e.max_delay_events).max(),
        false_alarm_rate: if days > 0.0 { false_alarms as f64 / (days / DAYS_PER_YEAR) } else { 0.0 },
        exceedance_fraction: if steps > 0 { exceed as f64 / steps as f64 } else { 0.0 },
        per_theta,
        seed: setup.seed,
        replications: setup.replications,
    })
}

/// Fraction of open steps (positive compensator increment) with `V ≥ m`.
pub fn exceedance_fraction(path: &[VPathPoint], m: f64) -> f64 {
    let open = path.iter().filter(|p| p.lambda_increment > 0.0);
    let (n, hits) = open.fold((0usize, 0usize), |(n, h), p| (n + 1, h + usize::from(p.v >= m)));
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Per-θ table as CSV.
pub fn write_delay_csv<W: Write>(writer: W, report: &DelayReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "theta",
        "mean_delay_events",
        "stderr",
        "max_delay_events",
        "mean_delay_slots",
        "detect_probability",
        "false_alarms",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for e in &report.per_theta {
        w.write_record([
            e.theta.to_string(),
            opt(e.mean_delay_events),
            opt(e.stderr),
            e.max_delay_events.map(|v| v.to_string()).unwrap_or_default(),
            opt(e.mean_delay_slots),
            e.detect_probability.to_string(),
            e.false_alarms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing delay table", e))?;
    Ok(())
}
