//! One-sample continual reassessment method.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{posterior_dlt_probs, CrmPrior, PosteriorSummary};
use crate::trial::{lowest_untried_at_or_below, DoseGrid, DoseLevel, PatientRecord, Phase, TrialState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmRecommendation {
    pub dose_level: DoseLevel,
    /// Estimated DLT probability per dose level.
    pub probs: Vec<f64>,
    /// The model's choice was lowered by the no-skip rule.
    pub applied_no_skip: bool,
}

/// Dose level whose probability is closest to `target`; the lower level wins ties.
pub fn closest_to_target(probs: &[f64], target: f64) -> DoseLevel {
    let mut best = 0;
    for (j, p) in probs.iter().enumerate().skip(1) {
        if (p - target).abs() < (probs[best] - target).abs() {
            best = j;
        }
    }
    best + 1
}

/// Posterior DLT probabilities at every dose given the patient history.
pub fn crm_probs(
    grid: &DoseGrid,
    patients: &[PatientRecord],
    prior: &CrmPrior,
    summary: PosteriorSummary,
) -> Result<Vec<f64>> {
    let data: Vec<(f64, u8)> = patients.iter().map(|p| (grid.label(p.dose_level), p.dlt)).collect();
    posterior_dlt_probs(&data, prior, &grid.labels, summary)
}

/// Model-based next dose under explicit inputs.
pub fn recommend(
    grid: &DoseGrid,
    patients: &[PatientRecord],
    tried: &BTreeSet<DoseLevel>,
    prior: &CrmPrior,
    target: f64,
    summary: PosteriorSummary,
    no_skip: bool,
) -> Result<CrmRecommendation> {
    check_target(target)?;
    let probs = crm_probs(grid, patients, prior, summary)?;
    let model_choice = closest_to_target(&probs, target);
    let dose_level = if no_skip { lowest_untried_at_or_below(tried, model_choice) } else { model_choice };
    Ok(CrmRecommendation { dose_level, probs, applied_no_skip: dose_level != model_choice })
}

/// Final MTD estimate: the closest dose to target, with no no-skip clamp.
pub fn final_mtd(
    grid: &DoseGrid,
    patients: &[PatientRecord],
    prior: &CrmPrior,
    target: f64,
    summary: PosteriorSummary,
) -> Result<(DoseLevel, Vec<f64>)> {
    check_target(target)?;
    let probs = crm_probs(grid, patients, prior, summary)?;
    Ok((closest_to_target(&probs, target), probs))
}

/// Next dose for the whole cohort from the trial's current labels and history.
pub fn crm_recommend(state: &TrialState) -> Result<CrmRecommendation> {
    let c = &state.config;
    recommend(&state.grid, &state.patients, &state.tried_doses, &c.prior, c.target, c.posterior_summary, c.no_skip)
}

pub fn crm_final_mtd(state: &TrialState) -> Result<DoseLevel> {
    if state.phase != Phase::Final {
        return Err(Error::Phase { expected: Phase::Final, actual: state.phase });
    }
    let c = &state.config;
    final_mtd(&state.grid, &state.patients, &c.prior, c.target, c.posterior_summary).map(|(d, _)| d)
}

fn check_target(target: f64) -> Result<()> {
    if target > 0.0 && target < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("target toxicity {target} must lie in (0, 1)")))
    }
}
