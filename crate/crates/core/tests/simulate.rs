use chrono::{Datelike, NaiveDate, Weekday};
use proptest::prelude::*;
use seasonal_cusum::calendar::{Calendar, Timestamp};
use seasonal_cusum::ingest::{write_slot_csv, SlotRecord, SlotSeries};
use seasonal_cusum::intensity::IntensityModel;
use seasonal_cusum::simulate::synthetic::{default_calendar, SyntheticCallCenter};
use seasonal_cusum::simulate::{
    apply_scenario, simulate_events, simulate_slot_counts, ChangeSpec, ScenarioTransform, AFTERNOON_START_SLOT,
};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

fn d(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

fn call_center() -> IntensityModel {
    SyntheticCallCenter::default().model(default_calendar())
}

/// Pearson goodness of fit of integer samples against Poisson(mean), with
/// bins merged until each expects at least five observations.
fn poisson_gof_p(samples: &[u64], mean: f64) -> f64 {
    let n = samples.len() as f64;
    let dist = Poisson::new(mean).unwrap();
    let max = *samples.iter().max().unwrap() as usize;
    let mut observed = vec![0f64; max + 2];
    for s in samples {
        observed[*s as usize] += 1.0;
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    let mut cum = 0.0;
    for (k, obs) in observed.iter().enumerate().take(max + 1) {
        let p = dist.pmf(k as u64);
        cum += p;
        o += obs;
        e += n * p;
        if e >= 5.0 && n * (1.0 - cum) >= 5.0 {
            bins.push((o, e));
            (o, e) = (0.0, 0.0);
        }
    }
    // Upper tail absorbs the remainder.
    bins.push((o, e + n * (1.0 - cum)));
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (bins.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

#[test]
fn thinning_counts_are_poisson() {
    let model = call_center();
    let date = d("2017-03-07");
    let rates = model.day_rates(date).unwrap();
    let reps = 10_000u64;
    let mut counts = vec![Vec::with_capacity(reps as usize); 3];
    for seed in 0..reps {
        let path = simulate_events(&model, ChangeSpec::in_control(), date, date, seed).unwrap();
        let events = path.event_times.unwrap();
        assert!(events.windows(2).all(|w| w[0] < w[1]));
        for (k, c) in counts.iter_mut().enumerate() {
            c.push(events.iter().filter(|t| t.offset >= k as f64 && t.offset < k as f64 + 1.0).count() as u64);
        }
    }
    for (k, c) in counts.iter().enumerate() {
        let p = poisson_gof_p(c, rates[k]);
        assert!(p > 0.01, "slot {k} (rate {}): p = {p}", rates[k]);
        let mean = c.iter().sum::<u64>() as f64 / reps as f64;
        assert!((mean - rates[k]).abs() < 3.0 * (rates[k] / reps as f64).sqrt());
    }
}

#[test]
fn change_from_the_start_doubles_the_rate() {
    let model = call_center();
    let start = d("2017-03-06");
    let end = d("2017-03-11");
    let lambda: f64 = start.iter_days().take_while(|x| *x <= end).map(|x| model.daily_mean(x).unwrap()).sum();
    let reps = 200;
    let total: u64 = (0..reps)
        .map(|s| {
            let p = simulate_events(&model, ChangeSpec::at(Timestamp::opening(start), 2.0), start, end, s).unwrap();
            p.event_times.unwrap().len() as u64
        })
        .sum();
    let mean = total as f64 / reps as f64;
    assert!((mean - 2.0 * lambda).abs() < 3.0 * (2.0 * lambda / reps as f64).sqrt(), "{mean} vs {}", 2.0 * lambda);
}

#[test]
fn slot_mean_seventy_within_clt_band() {
    let model = IntensityModel::constant(70.0, Calendar::default());
    let path = simulate_slot_counts(&model, ChangeSpec::in_control(), d("2016-01-04"), d("2017-12-31"), 9).unwrap();
    let draws: Vec<u64> = path.slot_counts.records().iter().map(|r| r.count).take(10_000).collect();
    assert_eq!(draws.len(), 10_000);
    let mean = draws.iter().sum::<u64>() as f64 / 1e4;
    assert!((mean - 70.0).abs() < 3.0 * (70.0f64 / 1e4).sqrt(), "{mean}");
}

#[test]
fn change_inside_a_slot_splits_its_mean() {
    let model = IntensityModel::constant(10.0, Calendar::default());
    let date = d("2017-03-07");
    let theta = Timestamp::new(date, 4.5);
    let reps = 10_000;
    let mut sum = 0u64;
    let mut before = 0u64;
    for seed in 0..reps {
        let p = simulate_slot_counts(&model, ChangeSpec::at(theta, 3.0), date, date, seed).unwrap();
        sum += p.slot_counts.records()[4].count;
        before += p.slot_counts.records()[..4].iter().map(|r| r.count).sum::<u64>();
        assert!(p.events_before_theta >= p.slot_counts.records()[..4].iter().map(|r| r.count).sum::<u64>());
    }
    let mean = sum as f64 / reps as f64;
    assert!((mean - 20.0).abs() < 3.0 * (20.0f64 / reps as f64).sqrt(), "{mean}");
    let pre = before as f64 / reps as f64;
    assert!((pre - 40.0).abs() < 3.0 * (40.0f64 / reps as f64).sqrt());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn event_histogram_matches_slot_counts(seed in any::<u64>(), rho in 0.5f64..3.0, theta_day in 0i64..10, theta_offset in 0.0f64..22.0) {
        let model = call_center();
        let start = d("2017-05-01");
        let theta = Timestamp::new(start + chrono::Duration::days(theta_day), theta_offset);
        let path = simulate_events(&model, ChangeSpec::at(theta, rho), start, d("2017-05-10"), seed).unwrap();
        let series = path.event_series().unwrap();
        prop_assert_eq!(&series.to_slot_series(), &path.slot_counts);
        let events = path.event_times.as_ref().unwrap();
        prop_assert_eq!(path.events_before_theta, events.iter().filter(|t| **t < theta).count() as u64);
    }

    #[test]
    fn postponement_conserves_daily_totals(seed in any::<u64>(), lead in 0i64..21) {
        let model = call_center();
        let start = d("2017-01-02") + chrono::Duration::days(lead);
        let path = simulate_slot_counts(&model, ChangeSpec::in_control(), start, start + chrono::Duration::days(90), seed).unwrap();
        let series = &path.slot_counts;
        let out = apply_scenario(series, &ScenarioTransform::postpone_third_tuesday(), &model.profile).unwrap();
        prop_assert_eq!(out.daily_totals(), series.daily_totals());
        let affected = ScenarioTransform::postpone_third_tuesday().affected_dates(series);
        prop_assert!(!affected.is_empty());
        prop_assert!(affected.iter().all(|d| d.weekday() == Weekday::Tue));
        prop_assert!(affected.windows(2).all(|w| (w[1] - w[0]).num_days() == 21));
        for (a, b) in series.records().iter().zip(out.records()) {
            prop_assert_eq!(a.key(), b.key());
            if affected.contains(&a.date) {
                if a.slot < AFTERNOON_START_SLOT {
                    prop_assert_eq!(b.count, 0);
                }
            } else {
                prop_assert_eq!(a, b);
            }
        }
        prop_assert_eq!(&apply_scenario(series, &ScenarioTransform::Identity, &model.profile).unwrap(), series);
    }
}

#[test]
fn morning_of_four_hundred_moves_to_the_afternoon() {
    let model = call_center();
    let tuesday = d("2017-01-03");
    let records: Vec<SlotRecord> = (0..22).map(|k| SlotRecord { date: tuesday, slot: k, count: if k < 10 { 40 } else { 25 } }).collect();
    let series = SlotSeries::new(records).unwrap();
    let out = apply_scenario(&series, &ScenarioTransform::postpone_third_tuesday(), &model.profile).unwrap();
    let afternoon = |s: &SlotSeries| s.records()[AFTERNOON_START_SLOT..].iter().map(|r| r.count).sum::<u64>();
    assert_eq!(afternoon(&out), afternoon(&series) + 400);
    assert_eq!(out.total(), series.total());
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let model = call_center();
    let write = |seed| {
        let p = simulate_events(&model, ChangeSpec::at(Timestamp::new(d("2017-02-01"), 3.0), 1.5), d("2017-01-20"), d("2017-02-10"), seed).unwrap();
        let mut buf = Vec::new();
        write_slot_csv(&mut buf, &p.slot_counts).unwrap();
        buf.extend(serde_json::to_vec(&p.event_times).unwrap());
        buf
    };
    assert_eq!(write(5), write(5));
    assert_ne!(write(5), write(6));
}
