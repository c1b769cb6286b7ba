//! Fixed-intercept logistic regression:
//! `logit(pi) = intercept + dose_coef * label + sum_l gamma_l * z_l`,
//! fitted by Newton–Raphson with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use libm::erfc;

use super::skeleton::{expit, softplus};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 50;
pub const GRADIENT_TOL: f64 = 1e-8;
/// Newton step size that must accompany a small gradient. Under separation the
/// score decays exponentially while the step stays O(1), so the gradient test
/// alone would accept a diverging iterate.
const STEP_TOL: f64 = 1e-6;
/// Any coefficient beyond this magnitude is treated as (quasi-)separation.
pub const COEF_CAP: f64 = 15.0;
/// Reciprocal condition number below which the information matrix is singular.
const SINGULAR_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    #[default]
    Wald,
    LikelihoodRatio,
}

/// One observation: dose label, the patient's full covariate vector, outcome.
#[derive(Debug, Clone, Copy)]
pub struct LogisticRow<'a> {
    pub label: f64,
    pub covariates: &'a [u8],
    pub dlt: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub intercept: f64,
    pub dose_coef: f64,
    /// Covariate indices in model column order.
    pub covariates: Vec<usize>,
    pub gammas: Vec<f64>,
    /// Inverse observed information over `(dose_coef, gammas...)`.
    pub cov_matrix: Vec<Vec<f64>>,
    pub p_values: Vec<f64>,
    pub converged: bool,
    pub separation: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl FittedModel {
    pub fn gamma(&self, covariate: usize) -> Option<f64> {
        self.covariates.iter().position(|&c| c == covariate).map(|i| self.gammas[i])
    }

    pub fn p_value(&self, covariate: usize) -> Option<f64> {
        self.covariates.iter().position(|&c| c == covariate).map(|i| self.p_values[i])
    }

    /// Fit is usable for dose assignment: converged with a positive dose effect.
    pub fn usable(&self) -> bool {
        self.converged && !self.separation && self.dose_coef > 0.0
    }

    /// DLT probability at `label` for a patient with full covariate vector `z`.
    pub fn prob(&self, label: f64, z: &[u8]) -> f64 {
        let shift: f64 = self.covariates.iter().zip(&self.gammas).map(|(&c, g)| g * f64::from(z[c])).sum();
        expit(self.intercept + self.dose_coef * label + shift)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub p_value: PValueMethod,
}

/// Two-sided Wald p-value `2 * (1 - Phi(|coef / se|))`.
pub fn wald_pvalue(coef: f64, se: f64) -> Result<f64> {
    if !(se > 0.0) {
        return Err(Error::InvalidArgument(format!("standard error must be positive, got {se}")));
    }
    Ok(erfc((coef / se).abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0))
}

/// Upper tail of a 1-df chi-square at `deviance`.
pub fn lr_pvalue(deviance: f64) -> f64 {
    erfc((deviance.max(0.0) / 2.0).sqrt()).clamp(0.0, 1.0)
}

fn design(rows: &[LogisticRow<'_>], indices: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let k = 1 + indices.len();
    let x = DMatrix::from_fn(rows.len(), k, |i, j| {
        if j == 0 {
            rows[i].label
        } else {
            f64::from(rows[i].covariates[indices[j - 1]])
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| f64::from(r.dlt)));
    (x, y)
}

fn loglik(x: &DMatrix<f64>, y: &DVector<f64>, intercept: f64, theta: &DVector<f64>) -> f64 {
    let eta = x * theta;
    eta.iter().zip(y.iter()).map(|(e, yi)| yi * (intercept + e) - softplus(intercept + e)).sum()
}

/// Binomial log-likelihood at `theta = (dose_coef, gammas...)`.
pub fn log_likelihood(rows: &[LogisticRow<'_>], intercept: f64, indices: &[usize], theta: &[f64]) -> f64 {
    let (x, y) = design(rows, indices);
    loglik(&x, &y, intercept, &DVector::from_column_slice(theta))
}

/// Analytic gradient of [`log_likelihood`].
pub fn score(rows: &[LogisticRow<'_>], intercept: f64, indices: &[usize], theta: &[f64]) -> Vec<f64> {
    let (x, y) = design(rows, indices);
    let (g, _) = score_and_information(&x, &y, intercept, &DVector::from_column_slice(theta));
    g.iter().copied().collect()
}

fn score_and_information(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    intercept: f64,
    theta: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let eta = x * theta;
    let pi = eta.map(|e| expit(intercept + e));
    let resid = y - &pi;
    let w = pi.map(|p| p * (1.0 - p));
    let g = x.transpose() * resid;
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let info = x.transpose() * xw;
    (g, info)
}

fn rcond(info: &DMatrix<f64>) -> f64 {
    let eig = info.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Wald-test fit; see [`fit_with`].
pub fn fit_fixed_intercept_logistic(
    rows: &[LogisticRow<'_>],
    intercept: f64,
    covariate_indices: &[usize],
) -> Result<FittedModel> {
    fit_with(rows, intercept, covariate_indices, FitOptions::default())
}

/// Maximizes the fixed-intercept likelihood over `(dose_coef, gammas)`.
///
/// Degenerate geometry (a coefficient beyond [`COEF_CAP`], a singular
/// information matrix, or a constant covariate column) sets `separation`,
/// clears `converged` and forces every covariate p-value to 1.
pub fn fit_with(
    rows: &[LogisticRow<'_>],
    intercept: f64,
    covariate_indices: &[usize],
    opts: FitOptions,
) -> Result<FittedModel> {
    if rows.is_empty() {
        return Err(Error::EmptyData);
    }
    if let Some(r) = rows.iter().find(|r| r.dlt > 1) {
        return Err(Error::NonBinaryOutcome(r.dlt));
    }
    let (x, y) = design(rows, covariate_indices);
    let k = x.ncols();
    let mut theta = DVector::zeros(k);
    let mut ll = loglik(&x, &y, intercept, &theta);
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;

    let constant_column = (1..k).any(|j| {
        let col = x.column(j);
        col.iter().all(|v| *v == col[0])
    });

    if constant_column {
        separation = true;
    } else {
        while iterations < MAX_ITERATIONS {
            let (g, info) = score_and_information(&x, &y, intercept, &theta);
            let Some(chol) = info.clone().cholesky() else {
                separation = true;
                break;
            };
            let delta = chol.solve(&g);
            if g.amax() < GRADIENT_TOL && delta.amax() < STEP_TOL {
                converged = true;
                break;
            }
            let mut t = 1.0;
            let mut next = &theta + &delta;
            let mut next_ll = loglik(&x, &y, intercept, &next);
            while !(next_ll >= ll - 1e-12) && t > 1e-10 {
                t *= 0.5;
                next = &theta + &delta * t;
                next_ll = loglik(&x, &y, intercept, &next);
            }
            theta = next;
            ll = next_ll;
            iterations += 1;
            if theta.amax() > COEF_CAP {
                separation = true;
                break;
            }
        }
    }

    let (_, info) = score_and_information(&x, &y, intercept, &theta);
    let cov = if separation { None } else { info.clone().try_inverse() };
    if !separation && (cov.is_none() || rcond(&info) < SINGULAR_RCOND) {
        separation = true;
    }
    if separation {
        converged = false;
    }

    let q = k - 1;
    let mut p_values = vec![1.0; q];
    let cov_matrix: Vec<Vec<f64>> = match &cov {
        Some(c) if !separation => (0..k).map(|i| (0..k).map(|j| c[(i, j)]).collect()).collect(),
        _ => vec![vec![f64::NAN; k]; k],
    };
    if converged {
        for l in 0..q {
            p_values[l] = match opts.p_value {
                PValueMethod::Wald => wald_pvalue(theta[l + 1], cov_matrix[l + 1][l + 1].sqrt()).unwrap_or(1.0),
                PValueMethod::LikelihoodRatio => {
                    let reduced: Vec<usize> =
                        covariate_indices.iter().enumerate().filter(|(i, _)| *i != l).map(|(_, c)| *c).collect();
                    let sub = fit_with(rows, intercept, &reduced, FitOptions { p_value: PValueMethod::Wald })?;
                    if sub.converged {
                        lr_pvalue(2.0 * (ll - sub.log_likelihood))
                    } else {
                        1.0
                    }
                }
            };
        }
    }

    Ok(FittedModel {
        intercept,
        dose_coef: theta[0],
        covariates: covariate_indices.to_vec(),
        gammas: theta.iter().skip(1).copied().collect(),
        cov_matrix,
        p_values,
        converged,
        separation,
        iterations,
        log_likelihood: ll,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rows<'a>(data: &'a [(f64, Vec<u8>, u8)]) -> Vec<LogisticRow<'a>> {
        data.iter().map(|(l, z, y)| LogisticRow { label: *l, covariates: z, dlt: *y }).collect()
    }

    #[test]
    fn wald_examples() {
        assert_eq!(wald_pvalue(0.0, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(wald_pvalue(1.959_964, 1.0).unwrap(), 0.05, epsilon = 1e-6);
        assert_abs_diff_eq!(wald_pvalue(1.0, 0.5).unwrap(), 0.0455, epsilon = 1e-4);
        assert!(wald_pvalue(1.0, 0.0).is_err());
        assert!(wald_pvalue(1.0, -1.0).is_err());
    }

    #[test]
    fn all_zero_outcomes_separate() {
        let data: Vec<_> = (0..9).map(|i| (-4.0 + (i % 3) as f64, vec![(i % 2) as u8], 0u8)).collect();
        let fit = fit_fixed_intercept_logistic(&rows(&data), 3.0, &[0]).unwrap();
        assert!(fit.separation);
        assert!(!fit.converged);
        assert_eq!(fit.p_values, vec![1.0]);
    }

    #[test]
    fn constant_covariate_is_degenerate() {
        let data: Vec<_> = (0..12).map(|i| (-4.0 + (i % 4) as f64 * 0.5, vec![1, 0], (i % 3 == 0) as u8)).collect();
        for idx in [0usize, 1] {
            let fit = fit_fixed_intercept_logistic(&rows(&data), 3.0, &[idx]).unwrap();
            assert!(fit.separation, "column {idx}");
            assert_eq!(fit.p_value(idx), Some(1.0));
        }
    }

    #[test]
    fn rejects_empty_and_non_binary() {
        assert!(matches!(fit_fixed_intercept_logistic(&[], 3.0, &[]), Err(Error::EmptyData)));
        let data = vec![(-3.0, vec![0], 2u8)];
        assert!(matches!(fit_fixed_intercept_logistic(&rows(&data), 3.0, &[]), Err(Error::NonBinaryOutcome(2))));
    }

    #[test]
    fn well_posed_fit_converges_with_zero_score() {
        let data: Vec<_> = (0..30)
            .map(|i| {
                let label = -4.0 + (i % 5) as f64 * 0.6;
                let z = (i % 2) as u8;
                let y = ((i * 7 + 3) % 10 < 3 + 2 * z as usize + (i % 5)) as u8;
                (label, vec![z], y)
            })
            .collect();
        let r = rows(&data);
        let fit = fit_fixed_intercept_logistic(&r, 3.0, &[0]).unwrap();
        assert!(fit.converged, "{fit:?}");
        let g = score(&r, 3.0, &[0], &[fit.dose_coef, fit.gammas[0]]);
        assert!(g.iter().all(|v| v.abs() < 1e-8));
        let lr = fit_with(&r, 3.0, &[0], FitOptions { p_value: PValueMethod::LikelihoodRatio }).unwrap();
        assert!(lr.p_values[0] > 0.0 && lr.p_values[0] <= 1.0);
        // both tests target the same hypothesis; they agree to first order
        assert!((lr.p_values[0] - fit.p_values[0]).abs() < 0.2);
    }
}
