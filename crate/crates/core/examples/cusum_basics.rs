//! The detector by hand: β(ρ), aggregated steps, reflection at zero and an
//! event-time step with exact alarm instants.
//!
//! `cargo run --example cusum_basics`

use std::error::Error;

use chrono::NaiveDate;
use seasonal_cusum::calendar::SlotKey;
use seasonal_cusum::detect::{beta, Detector, DetectorConfig, ObservationMode};

fn main() -> Result<(), Box<dyn Error>> {
    for rho in [0.5, 1.2, 1.3, std::f64::consts::E, 3.0] {
        println!("beta({rho:.4}) = {:.9}", beta(rho)?);
    }

    let date: NaiveDate = "2017-01-02".parse()?;
    let mut det = Detector::new(DetectorConfig::new(1.2, 5.0)?)?;
    println!("\nslot  count  lambda      V  alarm");
    for (k, (count, lambda)) in [(10, 8.0), (12, 8.0), (3, 8.0), (0, 10.0), (14, 9.0), (15, 9.0)].into_iter().enumerate() {
        let alarm = det.step_aggregated(SlotKey::new(date, k).end(), count, lambda)?;
        println!("{k:>4} {count:>6} {lambda:>7.1} {:>6.3}  {}", det.v(), alarm.map(|a| a.time.to_string()).unwrap_or_default());
    }

    let cfg = DetectorConfig::new(1.5, 3.0)?.with_mode(ObservationMode::EventTimes);
    let mut det = Detector::new(cfg)?;
    let events = [0.10, 0.12, 0.15, 0.17, 0.20, 0.22];
    let out = det.step_slot_events(SlotKey::new(date, 0), 4.0, 0.0, 1.0, &events)?;
    println!("\nevent mode: {} events, V = {:.3}", out.events, det.v());
    for a in &out.alarms {
        println!("alarm at {} (offset {:.2} slots) with V = {:.3}", a.time, a.time.offset, a.v_at_alarm);
    }
    Ok(())
}
