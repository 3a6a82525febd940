//! Every third Tuesday the morning calls move to the afternoon. A
//! double-sided detector flags both halves; refitting the profile for those
//! days silences it.
//!
//! `cargo run --release --example postponed_tuesday`

use std::error::Error;

use chrono::NaiveDate;
use seasonal_cusum::detect::{double_sided_run, run_detector, DetectorConfig, Direction, Observations};
use seasonal_cusum::evaluate::exceedance_fraction;
use seasonal_cusum::intensity::{fit_intensity, fit_profile_override, FactorSpec};
use seasonal_cusum::simulate::synthetic::{default_calendar, synthetic_dataset, SyntheticCallCenter};
use seasonal_cusum::simulate::{apply_scenario, simulate_slot_counts, ChangeSpec, ScenarioTransform, POSTPONE_PERIOD_DAYS};

fn main() -> Result<(), Box<dyn Error>> {
    let truth = SyntheticCallCenter::default().model(default_calendar());
    let train = synthetic_dataset(&truth, "2016-01-04".parse()?, "2017-12-31".parse()?, 77, None)?;
    let model = fit_intensity(&train, &FactorSpec::default_candidates())?.model;
    let m = 16.0;

    let path = simulate_slot_counts(&truth, ChangeSpec::in_control(), "2018-01-01".parse()?, "2018-03-31".parse()?, 5)?;
    let transform = ScenarioTransform::postpone_third_tuesday();
    let modified = apply_scenario(&path.slot_counts, &transform, &model.profile)?;
    let up = DetectorConfig::new(1.3, m)?;
    let down = DetectorConfig::new(1.0 / 1.3, m)?;
    let run = double_sided_run(Observations::Slots(&modified), &model, &up, &down)?;
    println!("affected: {:?}", transform.affected_dates(&path.slot_counts).iter().map(NaiveDate::to_string).collect::<Vec<_>>());
    for a in &run.alarms {
        let side = if a.direction == Direction::Increase { "up" } else { "down" };
        println!("{side:>4} alarm at {} (V = {:.1})", a.time, a.v_at_alarm);
    }

    let anchor = transform.anchor(&path.slot_counts).unwrap();
    let refit = model.clone().with_override(fit_profile_override(&modified, &model.calendar, anchor, POSTPONE_PERIOD_DAYS)?);
    let later = simulate_slot_counts(&truth, ChangeSpec::in_control(), "2018-04-01".parse()?, "2018-06-30".parse()?, 6)?;
    let later = apply_scenario(&later.slot_counts, &ScenarioTransform::PostponeThirdTuesdayMorning { anchor: Some(anchor) }, &model.profile)?;
    for (name, mdl) in [("original", &model), ("refit", &refit)] {
        let r = run_detector(Observations::Slots(&later), mdl, &up.with_reset(false))?;
        println!("{name:>8} model: V >= m on {:.2}% of open half-hours", 100.0 * exceedance_fraction(&r.path, m));
    }
    Ok(())
}
