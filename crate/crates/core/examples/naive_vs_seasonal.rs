//! A constant-rate detector on seasonal traffic spends most of its time
//! above threshold; the seasonal model stays quiet.
//!
//! `cargo run --release --example naive_vs_seasonal`

use std::error::Error;

use seasonal_cusum::calibrate::{calibrate_threshold, CalibrationTarget};
use seasonal_cusum::detect::{run_detector, DetectorConfig, Observations};
use seasonal_cusum::evaluate::exceedance_fraction;
use seasonal_cusum::intensity::{fit_intensity, FactorSpec, IntensityModel};
use seasonal_cusum::simulate::synthetic::{default_calendar, synthetic_dataset, SyntheticCallCenter};
use seasonal_cusum::simulate::{simulate_slot_counts, ChangeSpec};

fn main() -> Result<(), Box<dyn Error>> {
    let truth = SyntheticCallCenter::default().model(default_calendar());
    let train = synthetic_dataset(&truth, "2016-01-04".parse()?, "2017-12-31".parse()?, 77, None)?;
    let seasonal = fit_intensity(&train, &FactorSpec::default_candidates())?.model;
    let naive = IntensityModel::naive(&train)?;

    let base = DetectorConfig::new(1.3, 1.0)?;
    let target = CalibrationTarget::new(20_000.0, 300, "2018-01-01".parse()?, 150, 31);
    let test = simulate_slot_counts(&truth, ChangeSpec::in_control(), "2018-01-01".parse()?, "2018-03-31".parse()?, 900)?;
    for (name, model) in [("naive", &naive), ("seasonal", &seasonal)] {
        let m = calibrate_threshold(model, &base, &target)?.threshold_m;
        let run = run_detector(Observations::Slots(&test.slot_counts), model, &base.with_threshold(m).with_reset(false))?;
        println!("{name:>8}: m = {m:6.2}, V >= m on {:5.1}% of open half-hours", 100.0 * exceedance_fraction(&run.path, m));
    }
    Ok(())
}
