use chrono::NaiveDate;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp1, Poisson};
use seasonal_cusum::calendar::Calendar;
use seasonal_cusum::calibrate::{calibrate_threshold, estimate_arl, run_length, CalibrationTarget};
use seasonal_cusum::detect::{beta, DetectorConfig, ObservationMode};
use seasonal_cusum::intensity::IntensityModel;
use seasonal_cusum::simulate::synthetic::abstract_model;

fn d(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

const RATE: f64 = 5.0;

fn flat() -> IntensityModel {
    IntensityModel::constant(RATE, Calendar::default())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Events to alarm for a homogeneous stream observed continuously: exact
/// exponential gaps, linear decay between events.
fn event_oracle(rng: &mut StdRng, rho: f64, m: f64) -> f64 {
    let drift = beta(rho).unwrap() * RATE;
    let mut v: f64 = 0.0;
    let mut n = 0u64;
    loop {
        let gap: f64 = Exp1.sample(rng);
        v = (v - drift * gap / RATE).max(0.0) + 1.0;
        n += 1;
        if v >= m {
            return n as f64;
        }
    }
}

/// The same stream observed as per-slot counts.
fn aggregated_oracle(rng: &mut StdRng, rho: f64, m: f64) -> f64 {
    let b = beta(rho).unwrap();
    let pois = Poisson::new(RATE).unwrap();
    let mut v: f64 = 0.0;
    let mut n = 0u64;
    loop {
        let c: f64 = pois.sample(rng);
        n += c as u64;
        v = (v + c - b * RATE).max(0.0);
        if v >= m {
            return n as f64;
        }
    }
}

fn oracle_agrees(mode: ObservationMode, oracle: fn(&mut StdRng, f64, f64) -> f64) {
    let template = DetectorConfig::new(1.5, 5.0).unwrap().with_mode(mode);
    let target = CalibrationTarget::new(100.0, 4000, d("2017-01-02"), 120, 31);
    let est = estimate_arl(5.0, &flat(), &template, &target).unwrap();
    assert_eq!(est.censored_fraction, 0.0);
    let mut rng = StdRng::seed_from_u64(0xfeed);
    let runs: Vec<f64> = (0..20_000).map(|_| oracle(&mut rng, 1.5, 5.0)).collect();
    let (mean, se) = mean_se(&runs);
    let combined = (se * se + est.stderr * est.stderr).sqrt();
    assert!((est.arl - mean).abs() < 3.0 * combined, "{mode:?}: {} vs oracle {mean} (se {combined})", est.arl);
}

#[test]
fn event_mode_arl_matches_independent_simulation() {
    oracle_agrees(ObservationMode::EventTimes, event_oracle);
}

#[test]
fn aggregated_arl_matches_independent_simulation() {
    oracle_agrees(ObservationMode::AggregatedCounts, aggregated_oracle);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn run_length_is_monotone_in_m(m1 in 0.01f64..15.0, dm in 0.0f64..10.0, rep in 0u64..10_000, seed in any::<u64>(), events in any::<bool>()) {
        let mode = if events { ObservationMode::EventTimes } else { ObservationMode::AggregatedCounts };
        let template = DetectorConfig::new(1.5, 1.0).unwrap().with_mode(mode);
        let target = CalibrationTarget::new(100.0, 100, d("2017-01-02"), 30, seed);
        let model = flat();
        let a = run_length(m1, &model, &template, &target, rep).unwrap();
        let b = run_length(m1 + dm, &model, &template, &target, rep).unwrap();
        prop_assert!(b.events >= a.events);
        prop_assert!(b.slots >= a.slots);
        prop_assert!(!a.censored || b.censored);
    }
}

#[test]
fn tiny_threshold_has_unit_arl_and_no_spread() {
    let template = DetectorConfig::new(1.3, 1.0).unwrap().with_mode(ObservationMode::EventTimes);
    let target = CalibrationTarget::new(10.0, 500, d("2017-01-02"), 5, 3);
    let est = estimate_arl(1e-9, &abstract_model(300.0), &template, &target).unwrap();
    assert_eq!(est.arl, 1.0);
    assert_eq!(est.stderr, 0.0);
}

#[test]
fn doubling_pi_raises_m_and_results_reproduce() {
    let model = flat();
    let template = DetectorConfig::new(1.5, 1.0).unwrap();
    let target = CalibrationTarget::new(300.0, 1000, d("2017-01-02"), 60, 8);
    let a = calibrate_threshold(&model, &template, &target).unwrap();
    let b = calibrate_threshold(&model, &template, &CalibrationTarget { pi: 600.0, ..target }).unwrap();
    assert!(b.threshold_m > a.threshold_m, "{} vs {}", b.threshold_m, a.threshold_m);
    for r in [&a, &b] {
        assert!(r.converged);
        assert!((r.arl_estimate - r.pi).abs() <= r.tolerance_rel * r.pi + 2.0 * r.arl_stderr);
        assert!((0.0..=1.0).contains(&r.censored_fraction));
    }
    let again = calibrate_threshold(&model, &template, &target).unwrap();
    assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(&a).unwrap());
}

#[test]
fn arl_trace_is_monotone_in_m() {
    let model = flat();
    let template = DetectorConfig::new(1.5, 1.0).unwrap();
    let target = CalibrationTarget::new(500.0, 300, d("2017-01-02"), 60, 1);
    let r = calibrate_threshold(&model, &template, &target).unwrap();
    let mut trace = r.trace.clone();
    trace.sort_by(|x, y| x.m.total_cmp(&y.m));
    assert!(trace.windows(2).all(|w| w[0].arl <= w[1].arl), "CRN makes the ARL map monotone");
    assert!(trace.iter().any(|e| e.m == r.threshold_m));
}

#[test]
fn pi_must_be_reachable_within_the_horizon() {
    let template = DetectorConfig::new(1.5, 1.0).unwrap();
    let target = CalibrationTarget::new(1e7, 200, d("2017-01-02"), 3, 1);
    let err = calibrate_threshold(&flat(), &template, &target).unwrap_err();
    assert!(err.is_numeric(), "{err}");
    let bad = CalibrationTarget::new(100.0, 99, d("2017-01-02"), 30, 1);
    assert!(calibrate_threshold(&flat(), &template, &bad).is_err());
}
