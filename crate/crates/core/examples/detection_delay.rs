//! Detection delay in events over a grid of change times, for a small and a
//! large change.
//!
//! `cargo run --release --example detection_delay`

use std::error::Error;

use seasonal_cusum::calendar::Timestamp;
use seasonal_cusum::detect::{DetectorConfig, ObservationMode};
use seasonal_cusum::evaluate::{worst_case_delay, DelaySetup};
use seasonal_cusum::simulate::synthetic::{default_calendar, SyntheticCallCenter};

fn main() -> Result<(), Box<dyn Error>> {
    let model = SyntheticCallCenter::default().model(default_calendar());
    let grid = [
        Timestamp::opening("2018-01-15".parse()?),
        Timestamp::new("2018-01-17".parse()?, 5.0),
        Timestamp::new("2018-01-19".parse()?, 15.0),
        Timestamp::opening("2018-01-20".parse()?),
    ];
    let setup = DelaySetup {
        start: "2018-01-08".parse()?,
        end: "2018-02-04".parse()?,
        replications: 300,
        seed: 1,
    };
    for rho in [1.3, 2.0] {
        let config = DetectorConfig::new(rho, 16.0)?.with_mode(ObservationMode::EventTimes);
        let report = worst_case_delay(&model, rho, &grid, &config, &setup)?;
        println!("rho = {rho}");
        for e in &report.per_theta {
            println!(
                "  theta {:<22} delay {:>7.1} events (max {:>4}), {:>5.2} half-hours, detected {:.0}%",
                e.theta.to_string(),
                e.mean_delay_events.unwrap_or(f64::NAN),
                e.max_delay_events.unwrap_or(0),
                e.mean_delay_slots.unwrap_or(f64::NAN),
                100.0 * e.detect_probability
            );
        }
        println!(
            "  worst case {:.1} events, false alarms {:.2}/year",
            report.worst_case_delay_events.unwrap_or(f64::NAN),
            report.false_alarm_rate
        );
    }
    Ok(())
}
