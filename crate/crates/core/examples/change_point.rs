//! A seasonal intensity with a 30% increase at θ = 1.5 business days,
//! observed at exact arrival times. Prints the V path at slot ends.
//!
//! `cargo run --release --example change_point`

use std::error::Error;

use seasonal_cusum::calibrate::{calibrate_threshold, CalibrationTarget};
use seasonal_cusum::detect::{run_detector, DetectorConfig, ObservationMode, Observations};
use seasonal_cusum::simulate::synthetic::{abstract_model, abstract_time};
use seasonal_cusum::simulate::{simulate_events, ChangeSpec};

fn main() -> Result<(), Box<dyn Error>> {
    let model = abstract_model(300.0);
    let monday = "2018-01-08".parse()?;
    let cfg = DetectorConfig::new(1.3, 1.0)?.with_mode(ObservationMode::EventTimes);
    let m = calibrate_threshold(&model, &cfg, &CalibrationTarget::new(2000.0, 500, monday, 28, 21))?.threshold_m;
    let theta = abstract_time(monday, 1.5);
    let path = simulate_events(&model, ChangeSpec::at(theta, 1.3), monday, monday + chrono::Duration::days(2), 3)?;
    let run = run_detector(Observations::Events(&path.event_series().unwrap()), &model, &cfg.with_threshold(m).with_reset(false))?;

    println!("# m = {m:.3}, theta = {theta}");
    println!("t,v,lambda,count,above");
    for p in &run.path {
        let t = (p.time.date - monday).num_days() as f64 + p.time.offset / 22.0;
        println!("{t:.4},{:.3},{:.2},{},{}", p.v, p.lambda_increment, p.count, u8::from(p.v >= m));
    }
    Ok(())
}
