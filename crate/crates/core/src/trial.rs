//! Trial domain types and the structural rules shared by every design.
//!
//! Dose levels are 1-based throughout (`1..=J`), matching how doses are
//! reported clinically. Vectors indexed by dose therefore use `level - 1`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{dose_labels, logit};
use crate::pcrm::{DesignConfig, SelectionEvent};
use crate::scenario::ScenarioTruth;

/// 1-based dose level index.
pub type DoseLevel = usize;

/// Version tag written into every persisted trial-state document.
pub const STATE_VERSION: &str = "pcrm-state-v1";

/// Ordered doses with their prior DLT guesses and working-model labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseGrid {
    pub levels: Vec<String>,
    pub skeleton: Vec<f64>,
    pub labels: Vec<f64>,
}

impl DoseGrid {
    /// Builds a grid whose labels satisfy `logit(p0j) = intercept + slope * label`.
    pub fn from_skeleton(skeleton: Vec<f64>, intercept: f64, prior_slope: f64) -> Result<Self> {
        if skeleton.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "dose grid needs at least 2 doses, got {}",
                skeleton.len()
            )));
        }
        if skeleton.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("skeleton must be strictly increasing".into()));
        }
        let labels = dose_labels(&skeleton, intercept, prior_slope)?;
        let levels = (1..=skeleton.len()).map(|j| format!("D{j}")).collect();
        Ok(Self { levels, skeleton, labels })
    }

    pub fn len(&self) -> usize {
        self.skeleton.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skeleton.is_empty()
    }

    /// Working-model label for a 1-based dose level.
    pub fn label(&self, level: DoseLevel) -> f64 {
        self.labels[level - 1]
    }

    pub fn contains(&self, level: DoseLevel) -> bool {
        (1..=self.len()).contains(&level)
    }

    /// Replaces the labels with `(logit(p*) - intercept) / slope` for updated
    /// probabilities `p*`.
    pub(crate) fn relabel(&mut self, probs: &[f64], intercept: f64, slope: f64) -> Result<()> {
        let labels = probs
            .iter()
            .map(|&p| logit(p).map(|l| (l - intercept) / slope))
            .collect::<Result<Vec<_>>>()?;
        if labels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("updated dose labels are not strictly increasing".into()));
        }
        self.labels = labels;
        Ok(())
    }
}

/// Names of the binary patient covariates under screening.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub names: Vec<String>,
}

impl CovariateSpec {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::InvalidArgument("covariate names must be unique".into()));
        }
        Ok(Self { names })
    }

    /// `z1..zM`.
    pub fn numbered(m: usize) -> Self {
        Self { names: (1..=m).map(|i| format!("z{i}")).collect() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: usize,
    /// Length-M vector of 0/1 flags; 1 means the patient meets the broadened criterion.
    pub covariates: Vec<u8>,
    pub dose_level: DoseLevel,
    pub dlt: u8,
    pub cohort_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    StageI,
    StageII,
    Final,
}

/// Full sequential history of one trial.
///
/// Mutated only through [`crate::pcrm::step`]; every other operation reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub config: DesignConfig,
    pub grid: DoseGrid,
    pub patients: Vec<PatientRecord>,
    pub phase: Phase,
    /// Selected covariate indices (0-based) in order of inclusion.
    pub selected: Vec<usize>,
    pub tried_doses: BTreeSet<DoseLevel>,
    pub labels_updated: bool,
    /// Audit trail of every inclusion and removal test.
    pub events: Vec<SelectionEvent>,
}

impl TrialState {
    /// Fresh trial: resolves the skeleton and computes the initial dose labels.
    pub fn new(config: DesignConfig) -> Result<Self> {
        config.validate()?;
        let skeleton = config.resolve_skeleton()?;
        let grid = DoseGrid::from_skeleton(skeleton, config.prior.intercept, config.label_slope)?;
        let phase = if config.n1 == 0 { Phase::StageII } else { Phase::StageI };
        Ok(Self {
            config,
            grid,
            patients: Vec::new(),
            phase,
            selected: Vec::new(),
            tried_doses: BTreeSet::new(),
            labels_updated: false,
            events: Vec::new(),
        })
    }

    pub fn n_covariates(&self) -> usize {
        self.config.covariates.len()
    }

    pub fn n_doses(&self) -> usize {
        self.grid.len()
    }

    /// Patients still to be enrolled before the trial reaches `N_max`.
    pub fn remaining(&self) -> usize {
        self.config.n_max.saturating_sub(self.patients.len())
    }

    /// Completed enrollment cohorts.
    pub fn cohorts(&self) -> usize {
        self.patients.len() / self.config.cohort_size.max(1)
    }

    pub fn lowest_untried_at_or_below(&self, proposed: DoseLevel) -> DoseLevel {
        lowest_untried_at_or_below(&self.tried_doses, proposed)
    }

    /// `(label, dlt)` pairs under the current labels.
    pub fn label_outcomes(&self) -> Vec<(f64, u8)> {
        self.patients.iter().map(|p| (self.grid.label(p.dose_level), p.dlt)).collect()
    }

    /// Checks the structural invariants (used after deserialization).
    pub fn check_invariants(&self) -> Result<()> {
        let m = self.n_covariates();
        let mut seen = BTreeSet::new();
        for &s in &self.selected {
            if s >= m || !seen.insert(s) {
                return Err(Error::StateFile(format!("invalid selected covariate index {s}")));
            }
        }
        if self.phase == Phase::StageI && !self.selected.is_empty() {
            return Err(Error::StateFile("stage I trial cannot have selected covariates".into()));
        }
        let tried: BTreeSet<_> = self.patients.iter().map(|p| p.dose_level).collect();
        if tried != self.tried_doses {
            return Err(Error::StateFile("tried_doses disagrees with patient history".into()));
        }
        for p in &self.patients {
            if p.covariates.len() != m {
                return Err(Error::StateFile(format!("patient {} has wrong covariate count", p.id)));
            }
            if !self.grid.contains(p.dose_level) {
                return Err(Error::StateFile(format!("patient {} dose outside grid", p.id)));
            }
        }
        Ok(())
    }

    /// Serializes to the canonical `pcrm-state-v1` JSON document.
    pub fn to_json(&self) -> Result<String> {
        let doc = StateDocumentRef { version: STATE_VERSION, state: self };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StateDocument = serde_json::from_str(text)?;
        if doc.version != STATE_VERSION {
            return Err(Error::StateFile(format!(
                "unsupported state version {:?}, expected {STATE_VERSION:?}",
                doc.version
            )));
        }
        doc.state.check_invariants()?;
        Ok(doc.state)
    }
}

#[derive(Serialize)]
struct StateDocumentRef<'a> {
    version: &'a str,
    #[serde(flatten)]
    state: &'a TrialState,
}

#[derive(Deserialize)]
struct StateDocument {
    version: String,
    #[serde(flatten)]
    state: TrialState,
}

/// Serde adapter that writes a [`TrialState`] as its versioned document and
/// checks version and invariants on the way back in.
pub mod state_document {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{StateDocument, StateDocumentRef, TrialState, STATE_VERSION};

    pub fn serialize<S: Serializer>(state: &TrialState, serializer: S) -> Result<S::Ok, S::Error> {
        StateDocumentRef { version: STATE_VERSION, state }.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<TrialState, D::Error> {
        let doc = StateDocument::deserialize(deserializer)?;
        if doc.version != STATE_VERSION {
            return Err(D::Error::custom(format!("unsupported state version {:?}", doc.version)));
        }
        doc.state.check_invariants().map_err(D::Error::custom)?;
        Ok(doc.state)
    }
}

/// No-skip clamp: an untried dose above the highest tried dose may only be
/// reached one level at a time.
///
/// Returns `proposed` when it is tried, when nothing has been tried yet, or
/// when it lies at or below the highest tried level. Otherwise returns the
/// lowest untried level above the highest tried one.
pub fn lowest_untried_at_or_below(tried: &BTreeSet<DoseLevel>, proposed: DoseLevel) -> DoseLevel {
    let Some(&highest) = tried.last() else {
        return proposed;
    };
    if proposed <= highest || tried.contains(&proposed) {
        return proposed;
    }
    (highest + 1..proposed).find(|l| !tried.contains(l)).unwrap_or(proposed)
}

/// Truth-table row (0-based) that a patient falls into under `scenario`.
pub fn subgroup_of(patient: &PatientRecord, scenario: &ScenarioTruth) -> usize {
    scenario.subgroup_for(&patient.covariates)
}
