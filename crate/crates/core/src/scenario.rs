//! True dose-toxicity scenarios used by the simulator.

use serde::{Deserialize, Serialize};

use crate::crm::closest_to_target;
use crate::error::{Error, Result};
use crate::trial::DoseLevel;

/// Target used by the built-in scenarios.
pub const BUILTIN_TARGET: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    /// Values of the split covariates that define this subgroup.
    pub pattern: Vec<u8>,
    /// True DLT probability at each dose.
    pub probs: Vec<f64>,
    pub true_mtd: DoseLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub id: usize,
    pub name: String,
    /// Covariates (0-based) that truly shift toxicity; empty for a homogeneous population.
    pub split_covariates: Vec<usize>,
    /// Ordered by increasing true MTD.
    pub subgroups: Vec<Subgroup>,
}

impl ScenarioTruth {
    /// Builds a scenario from `(pattern, probabilities)` rows, deriving each
    /// subgroup's true MTD as the dose closest to `target`.
    pub fn new(
        id: usize,
        name: impl Into<String>,
        split_covariates: Vec<usize>,
        rows: Vec<(Vec<u8>, Vec<f64>)>,
        target: f64,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if rows.len() != 1 << split_covariates.len() {
            return bad(format!(
                "{} split covariates need {} rows, got {}",
                split_covariates.len(),
                1usize << split_covariates.len(),
                rows.len()
            ));
        }
        let n_doses = rows[0].1.len();
        let mut subgroups = Vec::with_capacity(rows.len());
        for (pattern, probs) in rows {
            if pattern.len() != split_covariates.len() || pattern.iter().any(|v| *v > 1) {
                return bad(format!("subgroup pattern {pattern:?} does not match the split covariates"));
            }
            if probs.len() != n_doses {
                return bad("all truth rows need the same number of doses".into());
            }
            if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
                return bad(format!("truth row {probs:?} has values outside (0, 1)"));
            }
            if probs.windows(2).any(|w| w[1] < w[0]) {
                return bad(format!("truth row {probs:?} is decreasing"));
            }
            let true_mtd = closest_to_target(&probs, target);
            subgroups.push(Subgroup { pattern, probs, true_mtd });
        }
        let mut seen: Vec<&Vec<u8>> = subgroups.iter().map(|s| &s.pattern).collect();
        seen.sort();
        seen.dedup();
        if seen.len() != subgroups.len() {
            return bad("duplicate subgroup patterns".into());
        }
        subgroups.sort_by_key(|s| s.true_mtd);
        Ok(Self { id, name: name.into(), split_covariates, subgroups })
    }

    /// Scenarios 1–5 for three covariates and six doses; 1–4 split on `z2`.
    pub fn builtin(id: usize) -> Option<Self> {
        let z2 = |hi: [f64; 6], lo: [f64; 6]| (vec![1], vec![(vec![1], hi.to_vec()), (vec![0], lo.to_vec())]);
        let (split, rows) = match id {
            1 => z2([0.25, 0.45, 0.60, 0.75, 0.85, 0.90], [0.02, 0.25, 0.45, 0.60, 0.75, 0.85]),
            2 => z2([0.05, 0.25, 0.45, 0.60, 0.75, 0.85], [0.02, 0.05, 0.25, 0.45, 0.60, 0.75]),
            3 => z2([0.05, 0.25, 0.45, 0.60, 0.75, 0.85], [0.02, 0.05, 0.08, 0.25, 0.45, 0.60]),
            4 => z2([0.05, 0.08, 0.25, 0.45, 0.60, 0.70], [0.01, 0.01, 0.02, 0.05, 0.08, 0.25]),
            5 => (vec![], vec![(vec![], vec![0.08, 0.25, 0.45, 0.60, 0.70, 0.75])]),
            _ => return None,
        };
        Some(Self::new(id, format!("Scenario {id}"), split, rows, BUILTIN_TARGET).expect("built-in scenario is valid"))
    }

    pub fn all_builtin() -> Vec<Self> {
        (1..=5).filter_map(Self::builtin).collect()
    }

    pub fn n_doses(&self) -> usize {
        self.subgroups[0].probs.len()
    }

    /// Subgroup index for a full covariate vector.
    pub fn subgroup_for(&self, z: &[u8]) -> usize {
        let key: Vec<u8> = self.split_covariates.iter().map(|&c| z[c]).collect();
        self.subgroups.iter().position(|s| s.pattern == key).expect("subgroups cover every pattern")
    }

    /// True DLT probability for a patient with covariates `z` at `dose`.
    pub fn dlt_prob(&self, z: &[u8], dose: DoseLevel) -> f64 {
        self.subgroups[self.subgroup_for(z)].probs[dose - 1]
    }

    /// Checks that every covariate index is below `m` and each stored MTD
    /// matches `target`.
    pub fn validate(&self, m: usize, n_doses: usize, target: f64) -> Result<()> {
        if let Some(c) = self.split_covariates.iter().find(|c| **c >= m) {
            return Err(Error::InvalidArgument(format!("scenario {} splits on covariate {c} but M = {m}", self.id)));
        }
        if self.n_doses() != n_doses {
            return Err(Error::InvalidArgument(format!(
                "scenario {} has {} doses, design has {n_doses}",
                self.id,
                self.n_doses()
            )));
        }
        for s in &self.subgroups {
            if closest_to_target(&s.probs, target) != s.true_mtd {
                return Err(Error::InvalidArgument(format!(
                    "scenario {} subgroup {:?}: true MTD disagrees with target {target}",
                    self.id, s.pattern
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_true_mtds() {
        let mtds: Vec<Vec<usize>> = ScenarioTruth::all_builtin()
            .iter()
            .map(|s| s.subgroups.iter().map(|g| g.true_mtd).collect())
            .collect();
        assert_eq!(mtds, vec![vec![1, 2], vec![2, 3], vec![2, 4], vec![3, 6], vec![2]]);
    }

    #[test]
    fn builtins_split_on_z2() {
        for id in 1..=4 {
            let s = ScenarioTruth::builtin(id).unwrap();
            assert_eq!(s.split_covariates, vec![1]);
            assert_eq!(s.subgroups[0].pattern, vec![1], "z2 = 1 carries the lower MTD");
            s.validate(3, 6, 0.25).unwrap();
        }
        assert!(ScenarioTruth::builtin(5).unwrap().split_covariates.is_empty());
        assert!(ScenarioTruth::builtin(6).is_none());
    }

    #[test]
    fn dlt_prob_lookup() {
        let s5 = ScenarioTruth::builtin(5).unwrap();
        assert_eq!(s5.dlt_prob(&[1, 0, 1], 2), 0.25);
        let s4 = ScenarioTruth::builtin(4).unwrap();
        assert_eq!(s4.dlt_prob(&[0, 0, 0], 6), 0.25);
        assert_eq!(s4.dlt_prob(&[0, 1, 0], 3), 0.25);
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(ScenarioTruth::new(9, "x", vec![0], vec![(vec![1], vec![0.1, 0.3])], 0.25).is_err());
        assert!(ScenarioTruth::new(9, "x", vec![], vec![(vec![], vec![0.3, 0.1])], 0.25).is_err());
        assert!(ScenarioTruth::new(9, "x", vec![], vec![(vec![], vec![0.0, 0.1])], 0.25).is_err());
        let s = ScenarioTruth::builtin(1).unwrap();
        assert!(s.validate(1, 6, 0.25).is_err());
        assert!(s.validate(3, 5, 0.25).is_err());
    }
}
