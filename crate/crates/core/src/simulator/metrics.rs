//! Operating characteristics: criteria-selection classes, per-subgroup dose
//! selection distributions, PCS and WPS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioTruth;
use crate::trial::DoseLevel;

use super::engine::ReplicateOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCategory {
    None,
    CorrectOnly,
    CorrectWithOthers,
    Incorrect,
}

/// Classifies the final covariate set against the truly active covariates.
pub fn classify_selection(final_selected: &[usize], scenario: &ScenarioTruth) -> SelectionCategory {
    let truth = &scenario.split_covariates;
    if final_selected.is_empty() {
        return SelectionCategory::None;
    }
    if truth.is_empty() {
        return SelectionCategory::Incorrect;
    }
    let has_all = truth.iter().all(|c| final_selected.contains(c));
    if !has_all {
        SelectionCategory::Incorrect
    } else if final_selected.len() == truth.len() {
        SelectionCategory::CorrectOnly
    } else {
        SelectionCategory::CorrectWithOthers
    }
}

/// How patients are pooled into a subgroup's dose-selection distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every enrolled patient counts once across all replicates.
    #[default]
    Patient,
    /// Each replicate contributes its within-replicate distribution once.
    Replicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupDistribution {
    /// Probability that each dose (index `level - 1`) is recommended.
    pub distribution: Vec<f64>,
    pub patients: usize,
    /// Per-replicate patient counts by recommended dose; kept for standard errors.
    #[serde(skip)]
    pub per_replicate: Vec<Vec<usize>>,
}

/// Pools each replicate's recommended doses by true subgroup.
///
/// A subgroup with no patients in some replicate gets no contribution from it.
pub fn subgroup_dose_distribution(
    replicates: &[ReplicateOutcome],
    scenario: &ScenarioTruth,
    n_doses: usize,
    weighting: Weighting,
) -> Vec<SubgroupDistribution> {
    let k = scenario.subgroups.len();
    let mut per_replicate: Vec<Vec<Vec<usize>>> = vec![Vec::with_capacity(replicates.len()); k];
    for rep in replicates {
        let mut counts = vec![vec![0usize; n_doses]; k];
        if let Some(table) = &rep.table {
            for z in &rep.covariates {
                counts[scenario.subgroup_for(z)][table.dose_for(z) - 1] += 1;
            }
        }
        for (g, c) in counts.into_iter().enumerate() {
            per_replicate[g].push(c);
        }
    }
    per_replicate
        .into_iter()
        .map(|reps| {
            let patients: usize = reps.iter().flatten().sum();
            let mut distribution = vec![0.0; n_doses];
            match weighting {
                Weighting::Patient => {
                    for c in &reps {
                        for (d, n) in distribution.iter_mut().zip(c) {
                            *d += *n as f64;
                        }
                    }
                    if patients > 0 {
                        distribution.iter_mut().for_each(|d| *d /= patients as f64);
                    }
                }
                Weighting::Replicate => {
                    let mut votes = 0usize;
                    for c in &reps {
                        let n: usize = c.iter().sum();
                        if n == 0 {
                            continue;
                        }
                        votes += 1;
                        for (d, x) in distribution.iter_mut().zip(c) {
                            *d += *x as f64 / n as f64;
                        }
                    }
                    if votes > 0 {
                        distribution.iter_mut().for_each(|d| *d /= votes as f64);
                    }
                }
            }
            SubgroupDistribution { distribution, patients, per_replicate: reps }
        })
        .collect()
}

/// Probability of correct selection: mass at the true MTD.
pub fn compute_pcs(distribution: &[f64], true_mtd: DoseLevel) -> f64 {
    distribution[true_mtd - 1]
}

/// Closeness weights: 1 at the dose nearest target, 0 at the farthest.
pub fn wps_weights(truth_row: &[f64], target: f64) -> Result<Vec<f64>> {
    let dist: Vec<f64> = truth_row.iter().map(|r| (r - target).abs()).collect();
    let max = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > min) {
        return Err(Error::DegenerateWeights);
    }
    Ok(dist.iter().map(|d| (max - d) / (max - min)).collect())
}

/// Weighted probability of selection.
pub fn compute_wps(distribution: &[f64], truth_row: &[f64], target: f64) -> Result<f64> {
    let w = wps_weights(truth_row, target)?;
    Ok(w.iter().zip(distribution).map(|(w, p)| w * p).sum())
}

/// Ratio estimate `sum(x) / sum(n)` with a replicate-clustered standard error.
pub(crate) fn clustered_ratio(x: &[f64], n: &[f64]) -> (f64, f64) {
    let total_n: f64 = n.iter().sum();
    if total_n == 0.0 {
        return (0.0, 0.0);
    }
    let ratio = x.iter().sum::<f64>() / total_n;
    let r = x.len() as f64;
    if r < 2.0 {
        return (ratio, 0.0);
    }
    let ss: f64 = x.iter().zip(n).map(|(xi, ni)| (xi - ratio * ni).powi(2)).sum();
    let mean_n = total_n / r;
    (ratio, (ss / (r * (r - 1.0))).sqrt() / mean_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn classification_examples() {
        let s3 = ScenarioTruth::builtin(3).unwrap();
        assert_eq!(classify_selection(&[1], &s3), SelectionCategory::CorrectOnly);
        assert_eq!(classify_selection(&[0, 1], &s3), SelectionCategory::CorrectWithOthers);
        assert_eq!(classify_selection(&[], &s3), SelectionCategory::None);
        assert_eq!(classify_selection(&[2], &s3), SelectionCategory::Incorrect);
        assert_eq!(classify_selection(&[0, 2], &s3), SelectionCategory::Incorrect);
        let s5 = ScenarioTruth::builtin(5).unwrap();
        assert_eq!(classify_selection(&[2], &s5), SelectionCategory::Incorrect);
        assert_eq!(classify_selection(&[], &s5), SelectionCategory::None);
    }

    #[test]
    fn wps_weights_scenario_five() {
        let s5 = ScenarioTruth::builtin(5).unwrap();
        let w = wps_weights(&s5.subgroups[0].probs, 0.25).unwrap();
        // |r - 0.25| = (.17, 0, .20, .35, .45, .50); weights = (0.5 - d) / 0.5
        let expected = [0.66, 1.00, 0.60, 0.30, 0.10, 0.00];
        for (a, b) in w.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn pcs_and_wps_edge_cases() {
        let row = [0.08, 0.25, 0.45, 0.60, 0.70, 0.75];
        let point = |j: usize| (1..=6).map(|i| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>();
        assert_eq!(compute_pcs(&point(2), 2), 1.0);
        assert_abs_diff_eq!(compute_wps(&point(6), &row, 0.25).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(compute_wps(&point(2), &row, 0.25).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(compute_wps(&point(1), &[0.25; 6], 0.25), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn published_distribution_reproduces_wps() {
        let row = [0.08, 0.25, 0.45, 0.60, 0.70, 0.75];
        let dist = [0.17, 0.63, 0.17, 0.02, 0.0, 0.0];
        assert_abs_diff_eq!(compute_wps(&dist, &row, 0.25).unwrap(), 0.85, epsilon = 0.01);
    }

    #[test]
    fn clustered_ratio_matches_simple_case() {
        let (r, se) = clustered_ratio(&[1.0, 0.0, 1.0, 0.0], &[1.0; 4]);
        assert_abs_diff_eq!(r, 0.5);
        // binomial-like: sqrt(sum (x - .5)^2 / (4 * 3)) = sqrt(1/12)
        assert_abs_diff_eq!(se, (1.0f64 / 12.0).sqrt(), epsilon = 1e-15);
    }
}
