use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use seasonal_cusum::calendar::{Calendar, Timestamp};
use seasonal_cusum::detect::{DetectorConfig, ObservationMode, VPathPoint};
use seasonal_cusum::evaluate::{delay_run, detection_delay, exceedance_fraction, worst_case_delay, DelaySetup};
use seasonal_cusum::intensity::IntensityModel;
use seasonal_cusum::simulate::synthetic::{default_calendar, SyntheticCallCenter};
use seasonal_cusum::simulate::ChangeSpec;

fn d(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

fn flat() -> IntensityModel {
    IntensityModel::constant(5.0, Calendar::default())
}

fn setup(replications: usize) -> DelaySetup {
    DelaySetup {
        start: d("2017-01-02"),
        end: d("2017-02-28"),
        replications,
        seed: 4242,
    }
}

#[test]
fn bigger_changes_are_caught_sooner() {
    let theta = Timestamp::new(d("2017-01-11"), 5.5);
    let mut delays = Vec::new();
    for rho in [1.5, 3.0, 10.0] {
        let config = DetectorConfig::new(rho, 8.0).unwrap().with_mode(ObservationMode::EventTimes);
        let est = detection_delay(&flat(), ChangeSpec::at(theta, rho), &config, &setup(600)).unwrap();
        assert_eq!(est.detect_probability, 1.0);
        delays.push((est.mean_delay_events.unwrap(), est.stderr.unwrap()));
    }
    assert!(delays[2].0 < 15.0);
    for w in delays.windows(2) {
        assert!(w[0].0 - w[1].0 > 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt(), "{delays:?}");
    }
}

#[test]
fn homogeneous_intensity_makes_delay_theta_invariant() {
    let config = DetectorConfig::new(1.5, 6.0).unwrap();
    let grid: Vec<Timestamp> = [("2017-01-10", 3.0), ("2017-01-13", 17.0), ("2017-01-17", 0.0), ("2017-01-21", 9.0), ("2017-01-25", 12.0)]
        .iter()
        .map(|(date, offset)| Timestamp::new(d(date), *offset))
        .collect();
    let report = worst_case_delay(&flat(), 1.5, &grid, &config, &setup(1000)).unwrap();
    let stats: Vec<(f64, f64)> = report.per_theta.iter().map(|e| (e.mean_delay_events.unwrap(), e.stderr.unwrap())).collect();
    for a in &stats {
        for b in &stats {
            assert!((a.0 - b.0).abs() < 4.0 * (a.1.powi(2) + b.1.powi(2)).sqrt(), "{stats:?}");
        }
    }
    let worst = stats.iter().map(|s| s.0).fold(f64::MIN, f64::max);
    assert_eq!(report.worst_case_delay_events, Some(worst));
}

#[test]
fn change_at_monday_opening_takes_longer_in_clock_time() {
    let model = SyntheticCallCenter::default().model(default_calendar());
    let config = DetectorConfig::new(1.3, 10.0).unwrap();
    let opening = Timestamp::opening(d("2017-03-13"));
    let mid_morning = Timestamp::new(d("2017-03-15"), 4.0);
    let report = worst_case_delay(&model, 1.3, &[opening, mid_morning], &config, &DelaySetup {
        start: d("2017-03-06"),
        end: d("2017-03-31"),
        replications: 400,
        seed: 6,
    })
    .unwrap();
    let slots: Vec<f64> = report.per_theta.iter().map(|e| e.mean_delay_slots.unwrap()).collect();
    assert!(slots[0] > slots[1], "{slots:?}");
    assert_eq!(report.per_theta[0].theta, opening);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn higher_threshold_never_shortens_a_delay(m1 in 1.0f64..10.0, dm in 0.0f64..8.0, rep in 0u64..5000, day in 3i64..20, offset in 0.0f64..22.0) {
        let theta = Timestamp::new(d("2017-01-02") + Duration::days(day), offset);
        let change = ChangeSpec::at(theta, 2.0);
        let s = setup(1);
        let lo = delay_run(&flat(), change, &DetectorConfig::new(2.0, m1).unwrap(), &s, rep).unwrap();
        let hi = delay_run(&flat(), change, &DetectorConfig::new(2.0, m1 + dm).unwrap(), &s, rep).unwrap();
        // Before θ both detectors follow the same V path unless the lower one was reset.
        prop_assume!(lo.false_alarms == 0);
        prop_assert_eq!(hi.false_alarms, 0);
        match (lo.delay_events, hi.delay_events) {
            (Some(a), Some(b)) => prop_assert!(b >= a),
            (None, Some(_)) => prop_assert!(false, "higher threshold detected, lower did not"),
            _ => {}
        }
    }

    #[test]
    fn exceedance_ignores_time_labels(vs in proptest::collection::vec((0.0f64..20.0, 0.0f64..5.0), 1..100), m in 0.1f64..20.0, shift in 0i64..1000) {
        let path: Vec<VPathPoint> = vs
            .iter()
            .enumerate()
            .map(|(k, (v, inc))| VPathPoint {
                time: Timestamp::new(d("2017-01-02") + Duration::days(k as i64), 1.0),
                v: *v,
                lambda_increment: *inc,
                count: 0,
                alarm: false,
            })
            .collect();
        let f = exceedance_fraction(&path, m);
        prop_assert!((0.0..=1.0).contains(&f));
        let mut relabeled: Vec<VPathPoint> = path
            .iter()
            .rev()
            .map(|p| VPathPoint { time: Timestamp::new(p.time.date + Duration::days(shift), 7.0), ..*p })
            .collect();
        relabeled.rotate_left(shift as usize % path.len());
        prop_assert_eq!(exceedance_fraction(&relabeled, m), f);
    }
}
