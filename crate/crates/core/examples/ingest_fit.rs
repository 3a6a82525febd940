//! Writes a synthetic call-centre history to CSV, reads it back, reports the
//! missing month and fits the seasonal intensity on the training part.
//!
//! `cargo run --example ingest_fit`

use std::error::Error;
use std::fs::File;

use seasonal_cusum::ingest::{detect_gaps, parse_daily_csv, parse_slot_csv, split_train_test, write_daily_csv, write_slot_csv};
use seasonal_cusum::intensity::{fit_intensity, FactorSpec};
use seasonal_cusum::simulate::synthetic::{default_calendar, synthetic_dataset, SyntheticCallCenter};

fn main() -> Result<(), Box<dyn Error>> {
    let calendar = default_calendar();
    let truth = SyntheticCallCenter::default().model(calendar.clone());
    let october = ("2017-10-01".parse()?, "2017-10-31".parse()?);
    let data = synthetic_dataset(&truth, "2016-01-04".parse()?, "2018-03-31".parse()?, 7, Some(october))?;

    let dir = tempfile::tempdir()?;
    let (daily_path, slot_path) = (dir.path().join("daily.csv"), dir.path().join("slots.csv"));
    write_daily_csv(File::create(&daily_path)?, &data.daily)?;
    write_slot_csv(File::create(&slot_path)?, &data.slots)?;

    let parsed = parse_daily_csv(&daily_path, &calendar.holidays, calendar.origin)?.with_slots(parse_slot_csv(&slot_path)?)?;
    for (a, b) in detect_gaps(&parsed) {
        println!("gap: {a} .. {b}");
    }
    let (train, test) = split_train_test(&parsed, "2017-10-01".parse()?)?;
    println!("train {} days, test {} days", train.daily.len(), test.daily.len());

    let fitted = fit_intensity(&train, &FactorSpec::default_candidates())?;
    println!("\n{:<45} {:>4} {:>12}", "factors", "k", "BIC");
    for c in &fitted.selection.candidates {
        let bic = c.bic.map(|b| format!("{b:.1}")).unwrap_or_else(|| "failed".into());
        println!("{:<45} {:>4} {:>12}", c.factor_spec.to_string(), c.n_coefficients, bic);
    }
    println!("\nselected: {}", fitted.selection.best.factor_spec);
    println!("naive rate per open half-hour: {:.1}", fitted.naive_rate);
    let p = &fitted.model.profile;
    println!("09:00 share: weekday {:.3}, saturday {:.3}", p.weekday_fractions[3], p.saturday_fractions[3]);
    Ok(())
}
