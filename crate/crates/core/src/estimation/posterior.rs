//! Bayesian posterior for the one-parameter logistic CRM working model
//! `psi(x, b) = expit(intercept + exp(b) * x)` with a normal prior on `b`.

use serde::{Deserialize, Serialize};

use super::quadrature::{integrate_vec, QuadratureOptions};
use super::skeleton::{expit, softplus};
use crate::error::{Error, Result};

/// Integration range for the slope parameter; prior mass outside is negligible.
const SLOPE_RANGE: (f64, f64) = (-15.0, 15.0);
const REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrmPrior {
    pub mean: f64,
    pub variance: f64,
    /// Fixed intercept of the working model.
    pub intercept: f64,
}

impl Default for CrmPrior {
    fn default() -> Self {
        Self { mean: 0.0, variance: 1.34, intercept: 3.0 }
    }
}

impl CrmPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("prior variance must be positive, got {}", self.variance)));
        }
        if !self.mean.is_finite() || !self.intercept.is_finite() {
            return Err(Error::InvalidArgument("prior mean and intercept must be finite".into()));
        }
        Ok(())
    }
}

/// How posterior toxicity probabilities are summarized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorSummary {
    /// `psi(d_j, E[b | data])`
    #[default]
    PlugIn,
    /// `E[psi(d_j, b) | data]`
    Mean,
}

/// Sufficient statistics: patients and DLTs per distinct label.
struct Tally {
    labels: Vec<f64>,
    n: Vec<f64>,
    events: Vec<f64>,
}

impl Tally {
    fn new(data: &[(f64, u8)]) -> Result<Self> {
        let mut t = Tally { labels: Vec::new(), n: Vec::new(), events: Vec::new() };
        for &(x, y) in data {
            if !x.is_finite() {
                return Err(Error::InvalidArgument(format!("dose label {x} is not finite")));
            }
            if y > 1 {
                return Err(Error::NonBinaryOutcome(y));
            }
            match t.labels.iter().position(|l| *l == x) {
                Some(i) => {
                    t.n[i] += 1.0;
                    t.events[i] += f64::from(y);
                }
                None => {
                    t.labels.push(x);
                    t.n.push(1.0);
                    t.events.push(f64::from(y));
                }
            }
        }
        Ok(t)
    }

    fn log_posterior(&self, b: f64, prior: &CrmPrior) -> f64 {
        let slope = b.exp();
        let mut lp = -0.5 * (b - prior.mean).powi(2) / prior.variance;
        for i in 0..self.labels.len() {
            let eta = prior.intercept + slope * self.labels[i];
            lp -= self.events[i] * softplus(-eta) + (self.n[i] - self.events[i]) * softplus(eta);
        }
        lp
    }

    /// Coarse-grid mode of the log posterior (location and value).
    fn mode(&self, prior: &CrmPrior) -> (f64, f64) {
        let (lo, hi) = SLOPE_RANGE;
        let steps = 600;
        (0..=steps)
            .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
            .map(|b| (b, self.log_posterior(b, prior)))
            .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }
}

/// Integrates `[1, b, psi(label_1, b), ...]` against the unnormalized posterior.
fn posterior_moments(data: &[(f64, u8)], prior: &CrmPrior, labels: &[f64]) -> Result<Vec<f64>> {
    prior.validate()?;
    let tally = Tally::new(data)?;
    let (mode, peak) = tally.mode(prior);
    let dim = 2 + labels.len();
    let f = |b: f64, out: &mut [f64]| {
        let w = (tally.log_posterior(b, prior) - peak).exp();
        out[0] = w;
        out[1] = b * w;
        let slope = b.exp();
        for (o, x) in out[2..].iter_mut().zip(labels) {
            *o = expit(prior.intercept + slope * x) * w;
        }
    };
    let opts = QuadratureOptions { rel_tol: REL_TOL * 0.01, abs_tol: 1e-14, ..Default::default() };
    let v = integrate_vec(f, dim, SLOPE_RANGE.0, SLOPE_RANGE.1, &[mode], opts)?;
    if !(v[0] > 0.0 && v.iter().all(|x| x.is_finite())) {
        return Err(Error::Quadrature { intervals: 0, error_estimate: f64::NAN });
    }
    Ok(v)
}

/// Posterior mean of the CRM slope parameter.
pub fn posterior_slope(data: &[(f64, u8)], prior: &CrmPrior) -> Result<f64> {
    if data.is_empty() {
        prior.validate()?;
        return Ok(prior.mean);
    }
    let v = posterior_moments(data, prior, &[])?;
    Ok(v[1] / v[0])
}

/// Posterior DLT probability at each label.
pub fn posterior_dlt_probs(
    data: &[(f64, u8)],
    prior: &CrmPrior,
    labels: &[f64],
    summary: PosteriorSummary,
) -> Result<Vec<f64>> {
    let plug_in = |b: f64| labels.iter().map(|x| expit(prior.intercept + b.exp() * x)).collect();
    if data.is_empty() && summary == PosteriorSummary::PlugIn {
        prior.validate()?;
        return Ok(plug_in(prior.mean));
    }
    match summary {
        PosteriorSummary::PlugIn => Ok(plug_in(posterior_slope(data, prior)?)),
        PosteriorSummary::Mean => {
            let v = posterior_moments(data, prior, labels)?;
            Ok(v[2..].iter().map(|x| x / v[0]).collect())
        }
    }
}
