use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, DayMeta, Timestamp};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, SlotSeries};
use crate::intensity::features::FactorSpec;
use crate::intensity::glm::{fit_poisson_glm, DesignRow, GlmModel};
use crate::intensity::profile::{self, busyness_quartile_check, fit_slot_profile, QuartileProfile, SlotProfile};

/// Source of the expected daily volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DailyLevel {
    Glm(GlmModel),
    /// The same expected count on every open slot.
    Constant { per_slot: f64 },
}

/// Replacement slot fractions for every `period_days`-th day from `anchor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOverride {
    pub anchor: NaiveDate,
    pub period_days: u32,
    pub fractions: Vec<f64>,
}

impl ProfileOverride {
    pub fn applies_to(&self, date: NaiveDate) -> bool {
        date >= self.anchor && (date - self.anchor).num_days() % self.period_days.max(1) as i64 == 0
    }
}

/// Piecewise-constant arrival rate on the half-hour grid.
///
/// Rates are expected calls per slot; time is measured in slot units, so
/// the rate of a slot equals its cumulative intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityModel {
    pub daily: DailyLevel,
    pub profile: SlotProfile,
    pub calendar: Calendar,
    #[serde(default)]
    pub overrides: Vec<ProfileOverride>,
}

impl IntensityModel {
    pub fn new(daily: DailyLevel, profile: SlotProfile, calendar: Calendar) -> Self {
        IntensityModel {
            daily,
            profile,
            calendar,
            overrides: Vec::new(),
        }
    }

    pub fn constant(per_slot: f64, calendar: Calendar) -> Self {
        IntensityModel::new(DailyLevel::Constant { per_slot }, SlotProfile::uniform(), calendar)
    }

    /// The seasonality-blind baseline: the training mean per open half-hour
    /// on every open slot.
    pub fn naive(train: &Dataset) -> Result<Self> {
        Ok(IntensityModel::constant(naive_rate(train)?, train.calendar.clone()))
    }

    pub fn with_override(mut self, o: ProfileOverride) -> Self {
        self.overrides.push(o);
        self
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.daily, DailyLevel::Constant { .. })
    }

    pub fn meta(&self, date: NaiveDate) -> Result<DayMeta> {
        self.calendar.meta(date)
    }

    /// Expected calls over the whole day.
    pub fn daily_mean(&self, date: NaiveDate) -> Result<f64> {
        Ok(self.day_rates(date)?.iter().sum())
    }

    /// Expected calls in each open slot of `date` (empty when closed).
    pub fn day_rates(&self, date: NaiveDate) -> Result<Vec<f64>> {
        let meta = self.meta(date)?;
        let width = meta.open_slots();
        if width == 0 {
            return Ok(Vec::new());
        }
        Ok(match &self.daily {
            DailyLevel::Constant { per_slot } => vec![*per_slot; width],
            DailyLevel::Glm(glm) => {
                let total = glm.predict(&meta);
                let fractions = self
                    .overrides
                    .iter()
                    .rev()
                    .find(|o| o.applies_to(date) && o.fractions.len() == width)
                    .map(|o| o.fractions.as_slice())
                    .unwrap_or_else(|| self.profile.fractions_for(meta.day_of_week));
                fractions.iter().map(|f| total * f).collect()
            }
        })
    }

    /// Expected calls in one half-hour; zero when the slot is closed.
    pub fn slot_intensity(&self, date: NaiveDate, slot: usize) -> Result<f64> {
        Ok(self.day_rates(date)?.get(slot).copied().unwrap_or(0.0))
    }

    /// Λ(to) − Λ(from): slot rates times overlap lengths, in slot units.
    pub fn cumulative_intensity(&self, from: Timestamp, to: Timestamp) -> Result<f64> {
        if to <= from {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for date in from.date.iter_days().take_while(|d| *d <= to.date) {
            let lo = if date == from.date { from.offset } else { f64::NEG_INFINITY };
            let hi = if date == to.date { to.offset } else { f64::INFINITY };
            for (k, rate) in self.day_rates(date)?.into_iter().enumerate() {
                let overlap = (hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0);
                total += rate * overlap;
            }
        }
        Ok(total)
    }
}

/// Training mean of calls per open half-hour, closed slots excluded.
pub fn naive_rate(train: &Dataset) -> Result<f64> {
    let mut calls = 0u64;
    let mut open_slots = 0usize;
    for r in train.daily_totals() {
        let meta = train.calendar.meta(r.date)?;
        if meta.is_open {
            calls += r.count;
            open_slots += meta.open_slots();
        }
    }
    if open_slots == 0 {
        return Err(Error::Validation("no open days in training data".into()));
    }
    Ok(calls as f64 / open_slots as f64)
}

/// `(meta, daily total)` for every open observed day.
pub fn daily_observations(train: &Dataset) -> Result<Vec<(DayMeta, u64)>> {
    train
        .daily_totals()
        .into_iter()
        .map(|r| Ok((train.calendar.meta(r.date)?, r.count)))
        .filter(|r: &Result<(DayMeta, u64)>| r.as_ref().map(|(m, _)| m.is_open).unwrap_or(true))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub factor_spec: FactorSpec,
    pub n_coefficients: usize,
    pub log_likelihood: Option<f64>,
    pub bic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub best: GlmModel,
    pub candidates: Vec<CandidateFit>,
}

/// Fits every candidate and keeps the lowest BIC; ties go to the model
/// with fewer coefficients.
pub fn select_model(candidates: &[FactorSpec], data: &[(DayMeta, u64)]) -> Result<ModelSelection> {
    let mut table = Vec::with_capacity(candidates.len());
    let mut best: Option<GlmModel> = None;
    let mut errors = Vec::new();
    for spec in candidates {
        let rows: Vec<DesignRow> = data.iter().map(|(m, c)| DesignRow::from_meta(spec, m, *c)).collect();
        match fit_poisson_glm(spec, &rows) {
            Ok(model) => {
                table.push(CandidateFit {
                    factor_spec: spec.clone(),
                    n_coefficients: model.n_coefficients(),
                    log_likelihood: Some(model.log_likelihood),
                    bic: Some(model.bic),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some(b) => {
                        model.bic < b.bic || (model.bic == b.bic && model.n_coefficients() < b.n_coefficients())
                    }
                };
                if better {
                    best = Some(model);
                }
            }
            Err(e) => {
                errors.push(format!("{spec}: {e}"));
                table.push(CandidateFit {
                    factor_spec: spec.clone(),
                    n_coefficients: spec.n_columns(),
                    log_likelihood: None,
                    bic: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    match best {
        Some(best) => Ok(ModelSelection { best, candidates: table }),
        None => Err(Error::AllCandidatesFailed(errors)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedIntensity {
    pub model: IntensityModel,
    pub selection: ModelSelection,
    /// Busyness diagnostic; empty when no slot data was available.
    pub quartiles: Vec<QuartileProfile>,
    pub naive_rate: f64,
    /// Set when the profile fell back to uniform.
    pub warning: Option<String>,
}

/// Daily GLM by BIC selection plus median slot profile on the training set.
/// Without slot data the profile falls back to uniform.
pub fn fit_intensity(train: &Dataset, candidates: &[FactorSpec]) -> Result<FittedIntensity> {
    let data = daily_observations(train)?;
    if data.is_empty() {
        return Err(Error::Validation("training set has no open days".into()));
    }
    let selection = select_model(candidates, &data)?;
    let (profile, warning, quartiles) = if train.slots.is_empty() {
        (
            SlotProfile::uniform(),
            Some("no slot data: using a uniform intraday profile".to_owned()),
            Vec::new(),
        )
    } else {
        (
            fit_slot_profile(&train.slots, &train.meta)?,
            None,
            busyness_quartile_check(&train.slots, &train.meta),
        )
    };
    let model = IntensityModel::new(DailyLevel::Glm(selection.best.clone()), profile, train.calendar.clone());
    Ok(FittedIntensity {
        model,
        selection,
        quartiles,
        naive_rate: naive_rate(train)?,
        warning,
    })
}

/// Median profile of the days matching `anchor + k * period_days` in
/// `slots`, for days that have the full weekday grid.
pub fn fit_profile_override(
    slots: &SlotSeries,
    calendar: &Calendar,
    anchor: NaiveDate,
    period_days: u32,
) -> Result<ProfileOverride> {
    let probe = ProfileOverride {
        anchor,
        period_days,
        fractions: Vec::new(),
    };
    let mut days = Vec::new();
    let mut width = None;
    for (date, records) in slots.by_day() {
        if !probe.applies_to(date) {
            continue;
        }
        let open = calendar.meta(date)?.open_slots();
        if open == 0 {
            continue;
        }
        if *width.get_or_insert(open) != open {
            return Err(Error::Validation(format!(
                "override days mix grids of {} and {open} slots",
                width.unwrap_or(0)
            )));
        }
        let mut v = vec![0u64; open];
        for r in records.iter().filter(|r| r.slot < open) {
            v[r.slot] = r.count;
        }
        days.push(v);
    }
    let fractions = profile::median_fractions(&days)
        .ok_or_else(|| Error::Validation("no matching days with calls to fit the override".into()))?;
    Ok(ProfileOverride {
        anchor,
        period_days,
        fractions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::features::Factor;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn glm_model(daily: f64) -> IntensityModel {
        let glm = GlmModel::from_coefficients(FactorSpec::intercept_only(), vec![daily.ln()]).unwrap();
        IntensityModel::new(DailyLevel::Glm(glm), SlotProfile::uniform(), Calendar::default())
    }

    #[test]
    fn slot_intensity_is_daily_times_fraction() {
        let mut m = glm_model(1000.0);
        m.profile.weekday_fractions = {
            let mut f = vec![0.93 / 21.0; 22];
            f[3] = 0.07;
            f
        };
        let v = m.slot_intensity(d("2017-01-02"), 3).unwrap();
        assert!((v - 70.0).abs() < 1e-9);
        assert_eq!(m.slot_intensity(d("2017-01-08"), 3).unwrap(), 0.0);
        assert_eq!(m.slot_intensity(d("2017-01-07"), 15).unwrap(), 0.0);
    }

    #[test]
    fn day_rates_sum_to_daily_prediction() {
        let glm = GlmModel::from_coefficients(FactorSpec::new([Factor::Weekday]), vec![3.0, 4.0]).unwrap();
        let m = IntensityModel::new(DailyLevel::Glm(glm.clone()), SlotProfile::uniform(), Calendar::default());
        for date in d("2017-01-02").iter_days().take(7) {
            let meta = m.meta(date).unwrap();
            let expect = if meta.is_open { glm.predict(&meta) } else { 0.0 };
            assert!((m.daily_mean(date).unwrap() - expect).abs() < 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn constant_model_is_flat_on_open_slots() {
        let m = IntensityModel::constant(42.5, Calendar::default());
        assert_eq!(m.slot_intensity(d("2017-01-02"), 0).unwrap(), 42.5);
        assert_eq!(m.slot_intensity(d("2017-01-07"), 9).unwrap(), 42.5);
        assert_eq!(m.slot_intensity(d("2017-01-08"), 0).unwrap(), 0.0);
    }

    #[test]
    fn cumulative_intensity_examples() {
        let mut m = glm_model(22.0 * 70.0);
        let t = Timestamp::new(d("2017-01-02"), 4.0);
        assert_eq!(m.cumulative_intensity(t, t).unwrap(), 0.0);
        let one = m
            .cumulative_intensity(t, Timestamp::new(d("2017-01-02"), 5.0))
            .unwrap();
        assert!((one - 70.0).abs() < 1e-9);

        // Half of a 60-rate slot then half of an 80-rate slot.
        let mut f = vec![0.0; 22];
        f[4] = 60.0;
        f[5] = 80.0;
        f[0] = 1400.0 - 140.0;
        m.profile.weekday_fractions = f.iter().map(|x| x / 1400.0).collect();
        m.daily = DailyLevel::Glm(GlmModel::from_coefficients(FactorSpec::intercept_only(), vec![1400f64.ln()]).unwrap());
        let v = m
            .cumulative_intensity(Timestamp::new(d("2017-01-02"), 4.5), Timestamp::new(d("2017-01-02"), 5.5))
            .unwrap();
        assert!((v - 70.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn override_replaces_profile_on_schedule() {
        let mut frac = vec![0.0; 22];
        frac[21] = 1.0;
        let m = glm_model(100.0).with_override(ProfileOverride {
            anchor: d("2017-01-03"),
            period_days: 21,
            fractions: frac,
        });
        assert!((m.slot_intensity(d("2017-01-24"), 21).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(m.slot_intensity(d("2017-01-24"), 0).unwrap(), 0.0);
        assert!(m.slot_intensity(d("2017-01-10"), 0).unwrap() > 0.0);
    }
}
