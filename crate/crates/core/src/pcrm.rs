//! Precision CRM: a one-sample CRM lead-in followed by sequential covariate
//! inclusion/removal and covariate-pattern-specific dosing.
//!
//! A trial advances one enrollment cohort at a time:
//!
//! 1. [`recommend_cohort`] issues doses for the next cohort's covariate patterns.
//! 2. The caller observes outcomes and hands the records to [`step`].
//! 3. Once `N_max` patients are in, [`finalize`] produces the per-pattern MTD table.
//!
//! Stage I (the first `N1` patients) doses everybody with the one-sample CRM.
//! At `N1` the dose labels are rescaled to the Stage I posterior, and from the
//! next cohort on each cohort triggers one inclusion test followed by one
//! removal test.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::crm::{self, closest_to_target};
use crate::error::{Error, Result};
use crate::estimation::{
    calibrate_skeleton, fit_with, CrmPrior, FitOptions, FittedModel, LogisticRow, PValueMethod, PosteriorSummary,
};
use crate::trial::{lowest_untried_at_or_below, CovariateSpec, DoseLevel, PatientRecord, Phase, TrialState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkeletonSource {
    Explicit { values: Vec<f64> },
    /// Indifference-interval calibration anchored at prior MTD `nu` (1-based).
    Calibrated { nu: usize, delta: f64 },
}

/// Which selection count indexes the inclusion threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdIndexing {
    /// `alpha * (M - q) / M` with `q` covariates already selected.
    #[default]
    AlreadySelected,
    /// `alpha * (M - q - 1) / M`: the threshold of the covariate about to enter.
    NextIndex,
}

/// Model used to test a candidate covariate for inclusion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateModel {
    /// Dose + currently selected covariates + candidate.
    #[default]
    Adjusted,
    /// Dose + candidate only.
    Marginal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoSkipScope {
    /// Tried doses are pooled over all patients.
    #[default]
    Global,
    /// Tried doses are tracked per pattern of the selected covariates.
    PerPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignConfig {
    pub n_doses: usize,
    pub covariates: CovariateSpec,
    /// Target DLT probability `p_T`.
    pub target: f64,
    /// Stage I sample size.
    pub n1: usize,
    pub n_max: usize,
    pub cohort_size: usize,
    pub start_dose: DoseLevel,
    pub alpha: f64,
    pub prior: CrmPrior,
    pub skeleton: SkeletonSource,
    pub no_skip: bool,
    pub no_skip_scope: NoSkipScope,
    /// Slope used to map skeleton probabilities to dose labels.
    pub label_slope: f64,
    /// Rescale labels to the Stage I posterior at `N1`.
    pub label_update: bool,
    pub threshold_indexing: ThresholdIndexing,
    pub candidate_model: CandidateModel,
    pub p_value_method: PValueMethod,
    pub posterior_summary: PosteriorSummary,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            n_doses: 6,
            covariates: CovariateSpec::numbered(3),
            target: 0.25,
            n1: 15,
            n_max: 45,
            cohort_size: 3,
            start_dose: 2,
            alpha: 0.20,
            prior: CrmPrior::default(),
            skeleton: SkeletonSource::Calibrated { nu: 2, delta: 0.08 },
            no_skip: true,
            no_skip_scope: NoSkipScope::Global,
            label_slope: 1.0,
            label_update: true,
            threshold_indexing: ThresholdIndexing::AlreadySelected,
            candidate_model: CandidateModel::Adjusted,
            p_value_method: PValueMethod::Wald,
            posterior_summary: PosteriorSummary::PlugIn,
        }
    }
}

impl DesignConfig {
    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::field(field, msg));
        if self.n_doses < 2 {
            return bad("n_doses", format!("must be at least 2, got {}", self.n_doses));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return bad("target", format!("must lie in (0, 1), got {}", self.target));
        }
        if self.cohort_size == 0 {
            return bad("cohort_size", "must be positive".into());
        }
        if self.n_max == 0 {
            return bad("n_max", "must be positive".into());
        }
        if self.n1 > self.n_max {
            return bad("n1", format!("Stage I size {} exceeds n_max {}", self.n1, self.n_max));
        }
        if self.n1 % self.cohort_size != 0 {
            return bad("n1", format!("{} is not a multiple of cohort_size {}", self.n1, self.cohort_size));
        }
        if (self.n_max - self.n1) % self.cohort_size != 0 {
            return bad(
                "n_max",
                format!("n_max - n1 = {} is not a multiple of cohort_size {}", self.n_max - self.n1, self.cohort_size),
            );
        }
        if !(1..=self.n_doses).contains(&self.start_dose) {
            return bad("start_dose", format!("{} outside 1..={}", self.start_dose, self.n_doses));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha", format!("must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.label_slope > 0.0) {
            return bad("label_slope", format!("must be positive, got {}", self.label_slope));
        }
        if self.covariates.is_empty() {
            return bad("covariates", "at least one covariate is required".into());
        }
        self.prior.validate().map_err(|e| Error::field("prior", e.to_string()))?;
        match &self.skeleton {
            SkeletonSource::Explicit { values } => {
                if values.len() != self.n_doses {
                    return bad("skeleton", format!("has {} entries, n_doses is {}", values.len(), self.n_doses));
                }
                if values.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || values.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("skeleton", format!("must be strictly increasing in (0, 1), got {values:?}"));
                }
            }
            SkeletonSource::Calibrated { .. } => {
                self.resolve_skeleton().map_err(|e| Error::field("calibration", e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn resolve_skeleton(&self) -> Result<Vec<f64>> {
        match &self.skeleton {
            SkeletonSource::Explicit { values } => Ok(values.clone()),
            SkeletonSource::Calibrated { nu, delta } => {
                calibrate_skeleton(self.target, self.n_doses, *nu, *delta, self.prior.intercept)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionTest {
    Inclusion,
    Removal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionAction {
    Included { covariate: usize, p_value: f64 },
    Removed { covariate: usize, p_value: f64 },
    NoChange,
}

/// Audit record of one inclusion or removal test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub cohort_index: usize,
    pub test: SelectionTest,
    pub action: SelectionAction,
    pub threshold: f64,
    /// `(covariate, p-value)` for every covariate examined.
    pub p_values: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Threshold for admitting one more covariate when `q` of `m` are selected.
pub fn inclusion_threshold(q: usize, m: usize, alpha: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    alpha * m.saturating_sub(q) as f64 / m as f64
}

fn inclusion_threshold_with(q: usize, m: usize, alpha: f64, indexing: ThresholdIndexing) -> f64 {
    match indexing {
        ThresholdIndexing::AlreadySelected => inclusion_threshold(q, m, alpha),
        ThresholdIndexing::NextIndex => inclusion_threshold(q + 1, m, alpha),
    }
}

/// Threshold above which one of `q` selected covariates is removed.
pub fn exclusion_threshold(q: usize, alpha: f64) -> Result<f64> {
    if q == 0 {
        return Err(Error::NothingSelected);
    }
    Ok(alpha / q as f64)
}

fn rows(state: &TrialState) -> Vec<LogisticRow<'_>> {
    state
        .patients
        .iter()
        .map(|p| LogisticRow { label: state.grid.label(p.dose_level), covariates: &p.covariates, dlt: p.dlt })
        .collect()
}

fn fit_on(state: &TrialState, covariates: &[usize]) -> Result<FittedModel> {
    let opts = FitOptions { p_value: state.config.p_value_method };
    fit_with(&rows(state), state.config.prior.intercept, covariates, opts)
}

/// Joint fixed-intercept fit on the currently selected covariates.
pub fn current_fit(state: &TrialState) -> Result<Option<FittedModel>> {
    if state.selected.is_empty() || state.patients.is_empty() {
        return Ok(None);
    }
    fit_on(state, &state.selected).map(Some)
}

/// Inclusion test over the unselected covariates.
pub fn try_include(state: &TrialState) -> Result<(Option<usize>, SelectionEvent)> {
    let m = state.n_covariates();
    let q = state.selected.len();
    let threshold = inclusion_threshold_with(q, m, state.config.alpha, state.config.threshold_indexing);
    let mut event = SelectionEvent {
        cohort_index: state.cohorts(),
        test: SelectionTest::Inclusion,
        action: SelectionAction::NoChange,
        threshold,
        p_values: Vec::new(),
        note: None,
    };
    if state.phase != Phase::StageII {
        return Err(Error::Phase { expected: Phase::StageII, actual: state.phase });
    }
    let mut degenerate = Vec::new();
    for candidate in (0..m).filter(|c| !state.selected.contains(c)) {
        let columns: Vec<usize> = match state.config.candidate_model {
            CandidateModel::Adjusted => state.selected.iter().copied().chain([candidate]).collect(),
            CandidateModel::Marginal => vec![candidate],
        };
        let fit = fit_on(state, &columns)?;
        let p = if fit.converged { fit.p_value(candidate).unwrap_or(1.0) } else { 1.0 };
        if !fit.converged {
            degenerate.push(candidate);
        }
        event.p_values.push((candidate, p));
    }
    if !degenerate.is_empty() {
        event.note = Some(format!("degenerate fit for candidates {degenerate:?}; treated as p = 1"));
    }
    let best = event
        .p_values
        .iter()
        .copied()
        .fold(None::<(usize, f64)>, |best, cur| match best {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        });
    match best {
        Some((covariate, p_value)) if p_value < threshold => {
            event.action = SelectionAction::Included { covariate, p_value };
            Ok((Some(covariate), event))
        }
        _ => Ok((None, event)),
    }
}

/// Removal test on the joint model of the selected covariates.
pub fn try_remove(state: &TrialState) -> Result<(Option<usize>, SelectionEvent)> {
    let q = state.selected.len();
    let threshold = exclusion_threshold(q, state.config.alpha)?;
    let mut event = SelectionEvent {
        cohort_index: state.cohorts(),
        test: SelectionTest::Removal,
        action: SelectionAction::NoChange,
        threshold,
        p_values: Vec::new(),
        note: None,
    };
    let fit = fit_on(state, &state.selected)?;
    if !fit.converged {
        event.note = Some("degenerate joint fit; no removal this cohort".into());
        return Ok((None, event));
    }
    event.p_values = state.selected.iter().copied().zip(fit.p_values.iter().copied()).collect();
    let worst = event
        .p_values
        .iter()
        .copied()
        .fold(None::<(usize, f64)>, |w, cur| match w {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        });
    match worst {
        Some((covariate, p_value)) if p_value > threshold => {
            event.action = SelectionAction::Removed { covariate, p_value };
            Ok((Some(covariate), event))
        }
        _ => Ok((None, event)),
    }
}

/// Values of the selected covariates, in selection order.
pub fn restrict(z: &[u8], selected: &[usize]) -> Vec<u8> {
    selected.iter().map(|&c| z[c]).collect()
}

fn tried_for_pattern(state: &TrialState, pattern: &[u8]) -> BTreeSet<DoseLevel> {
    state
        .patients
        .iter()
        .filter(|p| restrict(&p.covariates, &state.selected) == pattern)
        .map(|p| p.dose_level)
        .collect()
}

/// Per-patient Stage II doses from the joint covariate model.
///
/// Falls back to the one-sample CRM dose for everyone when no covariate is
/// selected or the joint fit is unusable (degenerate or non-positive dose effect).
pub fn assign_next_cohort(state: &TrialState, patterns: &[Vec<u8>]) -> Result<Vec<DoseLevel>> {
    if state.phase != Phase::StageII {
        return Err(Error::Phase { expected: Phase::StageII, actual: state.phase });
    }
    Ok(plan_stage_two(state, patterns)?.doses)
}

fn plan_stage_two(state: &TrialState, patterns: &[Vec<u8>]) -> Result<CohortPlan> {
    let fit = current_fit(state)?.filter(FittedModel::usable);
    let Some(fit) = fit else {
        let dose = crm::crm_recommend(state)?.dose_level;
        return Ok(CohortPlan { doses: vec![dose; patterns.len()], basis: AssignmentBasis::Crm });
    };
    let c = &state.config;
    let doses = patterns
        .iter()
        .map(|z| {
            let probs: Vec<f64> = state.grid.labels.iter().map(|&x| fit.prob(x, z)).collect();
            let choice = closest_to_target(&probs, c.target);
            if !c.no_skip {
                return choice;
            }
            match c.no_skip_scope {
                NoSkipScope::Global => lowest_untried_at_or_below(&state.tried_doses, choice),
                NoSkipScope::PerPattern => {
                    let tried = tried_for_pattern(state, &restrict(z, &state.selected));
                    let tried = if tried.is_empty() { state.tried_doses.clone() } else { tried };
                    lowest_untried_at_or_below(&tried, choice)
                }
            }
        })
        .collect();
    Ok(CohortPlan { doses, basis: AssignmentBasis::Covariate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentBasis {
    StartDose,
    Crm,
    Covariate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortPlan {
    pub doses: Vec<DoseLevel>,
    pub basis: AssignmentBasis,
}

fn check_patterns(state: &TrialState, patterns: &[Vec<u8>]) -> Result<()> {
    let expected = state.config.cohort_size;
    if patterns.len() != expected {
        return Err(Error::CohortSize { expected, got: patterns.len() });
    }
    let m = state.n_covariates();
    for z in patterns {
        if z.len() != m {
            return Err(Error::InvalidArgument(format!("covariate vector has {} entries, expected {m}", z.len())));
        }
        if let Some(v) = z.iter().find(|v| **v > 1) {
            return Err(Error::InvalidArgument(format!("covariate value {v} is not binary")));
        }
    }
    Ok(())
}

/// Doses for the next cohort, whatever the phase.
pub fn recommend_cohort(state: &TrialState, patterns: &[Vec<u8>]) -> Result<CohortPlan> {
    check_patterns(state, patterns)?;
    if state.phase == Phase::Final {
        return Err(Error::Phase { expected: Phase::StageII, actual: Phase::Final });
    }
    if state.patients.is_empty() {
        return Ok(CohortPlan { doses: vec![state.config.start_dose; patterns.len()], basis: AssignmentBasis::StartDose });
    }
    match state.phase {
        Phase::StageI => {
            let dose = crm::crm_recommend(state)?.dose_level;
            Ok(CohortPlan { doses: vec![dose; patterns.len()], basis: AssignmentBasis::Crm })
        }
        _ => plan_stage_two(state, patterns),
    }
}

/// Appends one cohort of observed outcomes and advances the design.
pub fn step(state: &TrialState, cohort: Vec<PatientRecord>) -> Result<(TrialState, Vec<SelectionEvent>)> {
    if state.phase == Phase::Final {
        return Err(Error::Phase { expected: Phase::StageII, actual: Phase::Final });
    }
    let expected = state.config.cohort_size;
    if cohort.len() != expected {
        return Err(Error::CohortSize { expected, got: cohort.len() });
    }
    let m = state.n_covariates();
    for p in &cohort {
        if p.covariates.len() != m || p.covariates.iter().any(|v| *v > 1) {
            return Err(Error::InvalidArgument(format!("patient {} has an invalid covariate vector", p.id)));
        }
        if !state.grid.contains(p.dose_level) {
            return Err(Error::InvalidArgument(format!("dose level {} outside the grid", p.dose_level)));
        }
        if p.dlt > 1 {
            return Err(Error::NonBinaryOutcome(p.dlt));
        }
    }

    let mut next = state.clone();
    let cohort_index = state.cohorts();
    for mut p in cohort {
        p.id = next.patients.len() + 1;
        p.cohort_index = cohort_index;
        next.tried_doses.insert(p.dose_level);
        next.patients.push(p);
    }

    let n = next.patients.len();
    let mut events = Vec::new();
    match next.phase {
        Phase::StageI if n >= next.config.n1 => {
            if next.config.label_update {
                update_labels(&mut next)?;
            }
            next.phase = Phase::StageII;
        }
        Phase::StageII => {
            let (included, event) = try_include(&next)?;
            events.push(event);
            if let Some(c) = included {
                next.selected.push(c);
            }
            if !next.selected.is_empty() {
                let (removed, event) = try_remove(&next)?;
                events.push(event);
                if let Some(c) = removed {
                    next.selected.retain(|s| *s != c);
                }
            }
        }
        _ => {}
    }
    if n >= next.config.n_max {
        next.phase = Phase::Final;
    }
    next.events.extend(events.iter().cloned());
    Ok((next, events))
}

fn update_labels(state: &mut TrialState) -> Result<()> {
    let c = &state.config;
    let probs = crm::crm_probs(&state.grid, &state.patients, &c.prior, c.posterior_summary)?;
    let (intercept, slope) = (c.prior.intercept, c.label_slope);
    state.grid.relabel(&probs, intercept, slope)?;
    state.labels_updated = true;
    Ok(())
}

/// Rebuilds the selected set from the audit trail.
pub fn replay_selection(events: &[SelectionEvent]) -> Vec<usize> {
    let mut selected = Vec::new();
    for e in events {
        match e.action {
            SelectionAction::Included { covariate, .. } => selected.push(covariate),
            SelectionAction::Removed { covariate, .. } => selected.retain(|c| *c != covariate),
            SelectionAction::NoChange => {}
        }
    }
    selected
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtdEntry {
    /// Values of the selected covariates, in selection order.
    pub pattern: Vec<u8>,
    pub dose_level: DoseLevel,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinalModel {
    OneSample,
    Covariate { fit: FittedModel },
}

/// Recommended dose per pattern of the finally selected covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtdTable {
    pub selected: Vec<usize>,
    pub entries: Vec<MtdEntry>,
    pub model: FinalModel,
    /// The covariate fit was degenerate and the one-sample estimate was used.
    pub fallback: bool,
}

impl MtdTable {
    /// Recommended dose for a patient's full covariate vector.
    pub fn dose_for(&self, z: &[u8]) -> DoseLevel {
        if self.entries.len() == 1 {
            return self.entries[0].dose_level;
        }
        let key = restrict(z, &self.selected);
        self.entries.iter().find(|e| e.pattern == key).map(|e| e.dose_level).expect("table covers every pattern")
    }
}

/// All `2^k` 0/1 patterns over `k` covariates, first covariate varying slowest.
pub fn all_patterns(k: usize) -> Vec<Vec<u8>> {
    (0..1usize << k).map(|bits| (0..k).map(|i| ((bits >> (k - 1 - i)) & 1) as u8).collect()).collect()
}

/// One-sample MTD table from the CRM posterior on all data. With `fallback`
/// the selected covariates are kept and every pattern gets the pooled dose.
pub fn one_sample_table(state: &TrialState, fallback: bool) -> Result<MtdTable> {
    let c = &state.config;
    let (dose, probs) = crm::final_mtd(&state.grid, &state.patients, &c.prior, c.target, c.posterior_summary)?;
    let selected = if fallback { state.selected.clone() } else { Vec::new() };
    let entries = all_patterns(selected.len())
        .into_iter()
        .map(|pattern| MtdEntry { pattern, dose_level: dose, probs: probs.clone() })
        .collect();
    Ok(MtdTable {
        selected,
        entries,
        model: FinalModel::OneSample,
        fallback,
    })
}

/// Final subpopulation MTD table.
pub fn finalize(state: &TrialState) -> Result<MtdTable> {
    if state.phase != Phase::Final {
        return Err(Error::NotFinal { remaining: state.remaining() });
    }
    let Some(fit) = current_fit(state)? else {
        return one_sample_table(state, false);
    };
    if !fit.usable() {
        return one_sample_table(state, true);
    }
    let k = state.selected.len();
    let mut z = vec![0u8; state.n_covariates()];
    let entries = all_patterns(k)
        .into_iter()
        .map(|pattern| {
            for (&c, &v) in state.selected.iter().zip(&pattern) {
                z[c] = v;
            }
            let probs: Vec<f64> = state.grid.labels.iter().map(|&x| fit.prob(x, &z)).collect();
            MtdEntry { dose_level: closest_to_target(&probs, state.config.target), pattern, probs }
        })
        .collect();
    Ok(MtdTable { selected: state.selected.clone(), entries, model: FinalModel::Covariate { fit }, fallback: false })
}

/// Current estimated toxicity curve and recommended dose for every pattern of
/// the selected covariates (one row when none are selected).
pub fn pattern_curves(state: &TrialState) -> Result<Vec<MtdEntry>> {
    if let Some(fit) = current_fit(state)?.filter(FittedModel::usable) {
        let mut z = vec![0u8; state.n_covariates()];
        return Ok(all_patterns(state.selected.len())
            .into_iter()
            .map(|pattern| {
                for (&c, &v) in state.selected.iter().zip(&pattern) {
                    z[c] = v;
                }
                let probs: Vec<f64> = state.grid.labels.iter().map(|&x| fit.prob(x, &z)).collect();
                MtdEntry { dose_level: closest_to_target(&probs, state.config.target), pattern, probs }
            })
            .collect());
    }
    Ok(one_sample_table(state, false)?.entries)
}
