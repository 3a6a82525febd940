//! Chooses m so that the in-control run length is π events on average, then
//! checks the estimate with fresh random numbers.
//!
//! `cargo run --release --example calibrate_threshold`

use std::error::Error;

use seasonal_cusum::calibrate::{calibrate_threshold, estimate_arl, CalibrationTarget};
use seasonal_cusum::detect::DetectorConfig;
use seasonal_cusum::simulate::synthetic::{default_calendar, SyntheticCallCenter};

fn main() -> Result<(), Box<dyn Error>> {
    let model = SyntheticCallCenter {
        base_daily: 110.0,
        ..Default::default()
    }
    .model(default_calendar());
    let template = DetectorConfig::new(1.3, 1.0)?;
    let target = CalibrationTarget::new(200.0, 2000, "2017-01-02".parse()?, 365, 1).with_tolerance(0.01);
    let result = calibrate_threshold(&model, &template, &target)?;
    println!("{:>10} {:>10} {:>8} {:>9}", "m", "ARL", "stderr", "censored");
    for e in &result.trace {
        println!("{:>10.4} {:>10.2} {:>8.2} {:>9.3}", e.m, e.arl, e.stderr, e.censored_fraction);
    }
    println!("\nm = {:.4}, converged = {}", result.threshold_m, result.converged);
    let check = estimate_arl(result.threshold_m, &model, &template, &target.with_seed(99))?;
    println!("fresh seed: ARL {:.1} +/- {:.1} (target {})", check.arl, check.stderr, target.pi);
    println!("mean open half-hours to a false alarm: {:.0}", result.mean_slots_to_alarm);
    Ok(())
}
