//! Poisson regression with log link, fitted by iteratively reweighted least
//! squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calendar::DayMeta;
use crate::error::{Error, Result};
use crate::intensity::features::FactorSpec;

pub const MAX_ITERATIONS: usize = 100;
pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const DEVIANCE_TOLERANCE: f64 = 1e-10;

/// Relative residual norm below which a column counts as dependent.
const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub features: Vec<f64>,
    pub count: u64,
}

impl DesignRow {
    pub fn from_meta(spec: &FactorSpec, meta: &DayMeta, count: u64) -> Self {
        DesignRow {
            features: spec.encode(meta),
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub factor_spec: FactorSpec,
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub deviance: f64,
    pub iterations: usize,
    /// Max-norm of the log-likelihood gradient at the returned coefficients.
    pub score_max_norm: f64,
}

impl GlmModel {
    /// A model with fixed coefficients, e.g. for synthetic data generation.
    /// Fit diagnostics are left at zero.
    pub fn from_coefficients(factor_spec: FactorSpec, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != factor_spec.n_columns() {
            return Err(Error::Validation(format!(
                "{} coefficients for {} columns",
                coefficients.len(),
                factor_spec.n_columns()
            )));
        }
        Ok(GlmModel {
            factor_spec,
            coefficients,
            log_likelihood: 0.0,
            bic: 0.0,
            n_obs: 0,
            deviance: 0.0,
            iterations: 0,
            score_max_norm: 0.0,
        })
    }

    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    pub fn linear_predictor(&self, features: &[f64]) -> f64 {
        features.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }

    /// Expected daily count for a day.
    pub fn predict(&self, meta: &DayMeta) -> f64 {
        self.linear_predictor(&self.factor_spec.encode(meta)).exp()
    }

    pub fn bic(&self) -> f64 {
        bic(self.n_coefficients(), self.n_obs, self.log_likelihood)
    }
}

pub fn bic(k: usize, n_obs: usize, log_likelihood: f64) -> f64 {
    k as f64 * (n_obs as f64).ln() - 2.0 * log_likelihood
}

/// `ln(n!)`, exact summation for small `n` and a Stirling series beyond.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 128 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    let x = n as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

pub fn poisson_log_likelihood(counts: &[f64], means: &[f64]) -> f64 {
    counts
        .iter()
        .zip(means)
        .map(|(&y, &mu)| y * mu.ln() - mu - ln_factorial(y as u64))
        .sum()
}

fn deviance(counts: &[f64], means: &[f64]) -> f64 {
    2.0 * counts
        .iter()
        .zip(means)
        .map(|(&y, &mu)| {
            let term = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
            term - (y - mu)
        })
        .sum::<f64>()
}

/// Fits the Poisson GLM for `spec` on `rows` by IRLS.
///
/// Starts from intercept `ln(mean + 0.1)` with other coefficients zero.
/// Once Newton steps no longer halve the score, stops if the score
/// max-norm is below [`SCORE_TOLERANCE`] or the relative deviance change
/// is below [`DEVIANCE_TOLERANCE`].
pub fn fit_poisson_glm(spec: &FactorSpec, rows: &[DesignRow]) -> Result<GlmModel> {
    let p = spec.n_columns();
    let n = rows.len();
    if n < p {
        return Err(Error::Validation(format!("{n} rows for {p} coefficients")));
    }
    if let Some(bad) = rows.iter().find(|r| r.features.len() != p) {
        return Err(Error::Validation(format!(
            "design row has {} features, model has {p}",
            bad.features.len()
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i].features[j]);
    check_rank(&x, &spec.column_names())?;

    let y: Vec<f64> = rows.iter().map(|r| r.count as f64).collect();
    // Column scaling only conditions the least-squares solves; coefficients
    // are reported on the raw feature scale.
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let m = x.column(j).amax();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
        .collect();
    let xs = DMatrix::from_fn(n, p, |i, j| x[(i, j)] / scale[j]);

    let mean = y.iter().sum::<f64>() / n as f64;
    let mut beta_s = DVector::zeros(p);
    // The intercept column is all ones, so its scale is 1.
    beta_s[0] = (mean + 0.1).ln();

    let mut mu: Vec<f64> = (&xs * &beta_s).iter().map(|e| e.exp()).collect();
    let mut dev = deviance(&y, &mu);

    let mut prev_score = f64::INFINITY;
    // Near the optimum the score is at rounding level and not monotone,
    // so the iterate with the smallest score is the one reported.
    let mut best: Option<(f64, DVector<f64>, Vec<f64>, f64)> = None;
    for iteration in 1..=MAX_ITERATIONS {
        // Newton step as weighted least squares on the working residual;
        // solving for the increment keeps precision near the optimum.
        let sqrt_w: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
        let a = DMatrix::from_fn(n, p, |i, j| xs[(i, j)] * sqrt_w[i]);
        let r = DVector::from_fn(n, |i, _| (y[i] - mu[i]) / sqrt_w[i]);
        let qr = a.qr();
        let qtr = qr.q().transpose() * r;
        let newton = qr
            .r()
            .solve_upper_triangular(&qtr)
            .ok_or_else(|| Error::SingularDesign {
                columns: spec.column_names(),
            })?;

        // Step-halving guards against deviance increases far from the optimum.
        let mut step = newton;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &beta_s + &step;
            let trial_mu: Vec<f64> = (&xs * &trial).iter().map(|e| e.exp()).collect();
            let trial_dev = deviance(&y, &trial_mu);
            if trial_dev.is_finite() && trial_dev <= dev * (1.0 + 1e-12) + 1e-12 {
                accepted = Some((trial, trial_mu, trial_dev));
                break;
            }
            step *= 0.5;
        }
        let Some((new_beta, new_mu, new_dev)) = accepted else {
            return Err(Error::NoConvergence {
                iterations: iteration,
                deviance: dev,
            });
        };
        let rel_change = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        beta_s = new_beta;
        mu = new_mu;
        dev = new_dev;

        let score = score_max_norm(&x, &y, &mu);
        // Iterate until the score stops shrinking, then require either
        // a small score or a flat deviance.
        let stalled = score >= 0.5 * prev_score;
        prev_score = score;
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, beta_s.clone(), mu.clone(), dev));
        }
        if stalled && (score < SCORE_TOLERANCE || rel_change < DEVIANCE_TOLERANCE) {
            let (score, beta_s, mu, dev) = best.take().expect("set above");
            let coefficients: Vec<f64> = (0..p).map(|j| beta_s[j] / scale[j]).collect();
            let log_likelihood = poisson_log_likelihood(&y, &mu);
            return Ok(GlmModel {
                factor_spec: spec.clone(),
                coefficients,
                log_likelihood,
                bic: bic(p, n, log_likelihood),
                n_obs: n,
                deviance: dev,
                iterations: iteration,
                score_max_norm: score,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        deviance: dev,
    })
}

/// Max-norm of `Xᵀ(y − μ)`.
pub fn score_max_norm(x: &DMatrix<f64>, y: &[f64], mu: &[f64]) -> f64 {
    let resid = DVector::from_fn(y.len(), |i, _| y[i] - mu[i]);
    (x.transpose() * resid).amax()
}

/// Score of `model` evaluated on `rows`.
pub fn score(model: &GlmModel, rows: &[DesignRow]) -> Vec<f64> {
    let mut g = vec![0.0; model.n_coefficients()];
    for r in rows {
        let resid = r.count as f64 - model.linear_predictor(&r.features).exp();
        for (gj, xj) in g.iter_mut().zip(&r.features) {
            *gj += xj * resid;
        }
    }
    g
}

/// Modified Gram–Schmidt over the columns; reports every column that lies
/// in the span of the columns before it.
fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let original = x.column(j).into_owned();
        let norm0 = original.norm();
        let mut v = original;
        for q in &basis {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= RANK_TOLERANCE * norm0 {
            dependent.push(names[j].clone());
        } else {
            basis.push(v / norm);
        }
    }
    if dependent.is_empty() {
        Ok(())
    } else {
        Err(Error::SingularDesign { columns: dependent })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::features::Factor;

    fn rows_intercept(counts: &[u64]) -> Vec<DesignRow> {
        counts
            .iter()
            .map(|&c| DesignRow {
                features: vec![1.0],
                count: c,
            })
            .collect()
    }

    #[test]
    fn intercept_only_is_log_mean() {
        let m = fit_poisson_glm(&FactorSpec::intercept_only(), &rows_intercept(&[2, 4, 6])).unwrap();
        assert!((m.coefficients[0] - 4f64.ln()).abs() < 1e-10);
        assert!(m.score_max_norm < SCORE_TOLERANCE);
    }

    #[test]
    fn intercept_only_all_zero_counts_does_not_converge() {
        // The MLE sits at minus infinity.
        let r = fit_poisson_glm(&FactorSpec::intercept_only(), &rows_intercept(&[0, 0, 0]));
        assert!(r.is_err() || r.unwrap().coefficients[0] < -10.0);
    }

    #[test]
    fn bic_arithmetic() {
        let n = std::f64::consts::E.powi(2);
        assert!((1.0 * n.ln() - 2.0 * 0.0 - 2.0).abs() < 1e-15);
        assert_eq!(bic(1, 1, 0.0), 0.0);
        assert!((bic(3, 100, -50.0) - (3.0 * 100f64.ln() + 100.0)).abs() < 1e-12);
    }

    #[test]
    fn ln_factorial_matches_sum() {
        for n in [0u64, 1, 5, 127, 128, 129, 500, 2000] {
            let exact: f64 = (2..=n).map(|k| (k as f64).ln()).sum();
            assert!((ln_factorial(n) - exact).abs() < 1e-9 * exact.max(1.0), "n={n}");
        }
    }

    #[test]
    fn collinear_columns_are_named() {
        // Weekday-only data: the weekday flag duplicates the intercept.
        let spec = FactorSpec::new([Factor::Weekday, Factor::Trend]);
        let rows: Vec<DesignRow> = (0..20)
            .map(|i| DesignRow {
                features: vec![1.0, 1.0, i as f64],
                count: 10 + i,
            })
            .collect();
        match fit_poisson_glm(&spec, &rows) {
            Err(Error::SingularDesign { columns }) => assert_eq!(columns, vec!["weekday".to_owned()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let spec = FactorSpec::new([Factor::Trend]);
        let rows: Vec<DesignRow> = (0..50)
            .map(|i| DesignRow {
                features: vec![1.0, i as f64],
                count: (5 + i % 7) as u64,
            })
            .collect();
        let a = fit_poisson_glm(&spec, &rows).unwrap();
        let b = fit_poisson_glm(&spec, &rows).unwrap();
        assert_eq!(a.bic.to_bits(), b.bic.to_bits());
        assert_eq!(a, b);
        let g = score(&a, &rows);
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
    }
}
