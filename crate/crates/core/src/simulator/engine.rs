//! Replicate execution and grid aggregation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{draw_patient, PatientDraw};
use super::metrics::{
    classify_selection, clustered_ratio, compute_pcs, compute_wps, subgroup_dose_distribution, wps_weights,
    SelectionCategory, Weighting,
};
use crate::crm;
use crate::error::{Error, Result};
use crate::pcrm::{self, DesignConfig, MtdEntry, MtdTable};
use crate::scenario::ScenarioTruth;
use crate::trial::{DoseGrid, PatientRecord, Phase, TrialState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Pcrm,
    OneSample,
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::Pcrm => "pcrm",
            Design::OneSample => "one_sample",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Pcrm,
    OneSample,
    #[default]
    Both,
}

impl Comparator {
    pub fn designs(self) -> &'static [Design] {
        match self {
            Comparator::Pcrm => &[Design::Pcrm],
            Comparator::OneSample => &[Design::OneSample],
            Comparator::Both => &[Design::Pcrm, Design::OneSample],
        }
    }
}

/// What one simulated trial produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub selected: Vec<usize>,
    /// `None` only when the replicate failed before it could be finalized.
    pub table: Option<MtdTable>,
    /// Covariate vectors of every enrolled patient.
    pub covariates: Vec<Vec<u8>>,
    /// Per-patient assigned doses, in enrollment order.
    pub doses: Vec<usize>,
    pub failed: bool,
    pub fallback: bool,
}

/// Runs one P-CRM trial to `design.n_max` patients.
pub fn run_pcrm_replicate(
    design: &DesignConfig,
    scenario: &ScenarioTruth,
    prevalence: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(TrialState, MtdTable)> {
    let mut state = TrialState::new(design.clone())?;
    while state.phase != Phase::Final {
        let draws: Vec<PatientDraw> = (0..design.cohort_size).map(|_| draw_patient(rng, prevalence)).collect();
        let patterns: Vec<Vec<u8>> = draws.iter().map(|d| d.covariates.clone()).collect();
        let plan = pcrm::recommend_cohort(&state, &patterns)?;
        let cohort = draws
            .into_iter()
            .zip(plan.doses)
            .map(|(d, dose)| PatientRecord {
                id: 0,
                dlt: d.outcome(scenario, dose),
                covariates: d.covariates,
                dose_level: dose,
                cohort_index: 0,
            })
            .collect();
        state = pcrm::step(&state, cohort)?.0;
    }
    let table = pcrm::finalize(&state)?;
    Ok((state, table))
}

/// Plain one-sample CRM on the same patient stream; never looks at covariates.
///
/// With `label_update_at = Some(n)` the dose labels are rescaled to the
/// posterior after `n` patients, exactly as the P-CRM does at the end of Stage I.
pub fn run_one_sample_replicate(
    design: &DesignConfig,
    scenario: &ScenarioTruth,
    prevalence: &[f64],
    rng: &mut ChaCha8Rng,
    label_update_at: Option<usize>,
) -> Result<(Vec<PatientRecord>, MtdTable)> {
    design.validate()?;
    let c = design;
    let mut grid = DoseGrid::from_skeleton(c.resolve_skeleton()?, c.prior.intercept, c.label_slope)?;
    let mut patients: Vec<PatientRecord> = Vec::with_capacity(c.n_max);
    let mut tried = std::collections::BTreeSet::new();
    while patients.len() < c.n_max {
        let dose = if patients.is_empty() {
            c.start_dose
        } else {
            crm::recommend(&grid, &patients, &tried, &c.prior, c.target, c.posterior_summary, c.no_skip)?.dose_level
        };
        let cohort_index = patients.len() / c.cohort_size;
        for _ in 0..c.cohort_size {
            let d = draw_patient(rng, prevalence);
            patients.push(PatientRecord {
                id: patients.len() + 1,
                dlt: d.outcome(scenario, dose),
                covariates: d.covariates,
                dose_level: dose,
                cohort_index,
            });
        }
        tried.insert(dose);
        if label_update_at == Some(patients.len()) {
            let probs = crm::crm_probs(&grid, &patients, &c.prior, c.posterior_summary)?;
            grid.relabel(&probs, c.prior.intercept, c.label_slope)?;
        }
    }
    let (dose, probs) = crm::final_mtd(&grid, &patients, &c.prior, c.target, c.posterior_summary)?;
    let table = MtdTable {
        selected: Vec::new(),
        entries: vec![MtdEntry { pattern: Vec::new(), dose_level: dose, probs }],
        model: pcrm::FinalModel::OneSample,
        fallback: false,
    };
    Ok((patients, table))
}

/// Runs one replicate of `design`, converting failures into flagged outcomes.
pub fn run_replicate(
    kind: Design,
    design: &DesignConfig,
    scenario: &ScenarioTruth,
    prevalence: &[f64],
    seed: u64,
) -> ReplicateOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = match kind {
        Design::Pcrm => run_pcrm_replicate(design, scenario, prevalence, &mut rng).map(|(s, t)| (s.patients, t)),
        Design::OneSample => run_one_sample_replicate(design, scenario, prevalence, &mut rng, None),
    };
    match result {
        Ok((patients, table)) => ReplicateOutcome {
            selected: table.selected.clone(),
            fallback: table.fallback,
            table: Some(table),
            covariates: patients.iter().map(|p| p.covariates.clone()).collect(),
            doses: patients.iter().map(|p| p.dose_level).collect(),
            failed: false,
        },
        Err(_) => ReplicateOutcome {
            selected: Vec::new(),
            table: None,
            covariates: Vec::new(),
            doses: Vec::new(),
            failed: true,
            fallback: false,
        },
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for replicate `r` of one grid cell; a pure function of its inputs.
pub fn replicate_seed(master_seed: u64, scenario: usize, prevalence: f64, n_max: usize, r: usize) -> u64 {
    [scenario as u64, prevalence.to_bits(), n_max as u64, r as u64]
        .into_iter()
        .fold(splitmix(master_seed), |h, v| splitmix(h ^ v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenarios: Vec<ScenarioTruth>,
    /// Common prevalence of every covariate, one grid value per entry.
    pub prevalences: Vec<f64>,
    pub n_max: Vec<usize>,
    pub replicates: usize,
    pub design: DesignConfig,
    pub comparator: Comparator,
    pub master_seed: u64,
    pub weighting: Weighting,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioTruth::all_builtin(),
            prevalences: vec![0.50, 0.25],
            n_max: vec![30, 45, 60, 72],
            replicates: 2000,
            design: DesignConfig::default(),
            comparator: Comparator::Both,
            master_seed: 20_240_601,
            weighting: Weighting::Patient,
            threads: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::field("replicates", "must be at least 1"));
        }
        for (field, empty) in [
            ("scenarios", self.scenarios.is_empty()),
            ("prevalences", self.prevalences.is_empty()),
            ("n_max", self.n_max.is_empty()),
        ] {
            if empty {
                return Err(Error::field(field, "must be non-empty"));
            }
        }
        if let Some(p) = self.prevalences.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::field("prevalences", format!("{p} must lie in (0, 1)")));
        }
        for &n in &self.n_max {
            self.design.clone().with_n_max(n).validate()?;
        }
        let m = self.design.covariates.len();
        for s in &self.scenarios {
            s.validate(m, self.design.n_doses, self.design.target)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    /// Percentages of replicates; the four classes sum to 100.
    pub none: f64,
    pub correct_only: f64,
    pub correct_with_others: f64,
    pub incorrect: f64,
    /// Monte Carlo standard errors in percentage points, same order.
    pub se: [f64; 4],
}

impl SelectionTable {
    fn from_categories(cats: &[SelectionCategory]) -> Self {
        let r = cats.len() as f64;
        let pct = |c: SelectionCategory| 100.0 * cats.iter().filter(|x| **x == c).count() as f64 / r;
        let se = |p: f64| 100.0 * ((p / 100.0) * (1.0 - p / 100.0) / r).sqrt();
        let none = pct(SelectionCategory::None);
        let correct_only = pct(SelectionCategory::CorrectOnly);
        let correct_with_others = pct(SelectionCategory::CorrectWithOthers);
        let incorrect = pct(SelectionCategory::Incorrect);
        Self {
            none,
            correct_only,
            correct_with_others,
            incorrect,
            se: [se(none), se(correct_only), se(correct_with_others), se(incorrect)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupMetrics {
    /// 1-based subgroup number, ordered by increasing true MTD.
    pub subgroup: usize,
    pub pattern: Vec<u8>,
    pub true_mtd: usize,
    pub patients: usize,
    pub distribution: Vec<f64>,
    pub pcs: f64,
    pub pcs_se: f64,
    pub wps: f64,
    pub wps_se: f64,
}

/// Aggregated operating characteristics of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: usize,
    pub prevalence: f64,
    pub n_max: usize,
    pub design: Design,
    pub replicates: usize,
    pub failed: usize,
    pub fallbacks: usize,
    pub selection: SelectionTable,
    pub subgroups: Vec<SubgroupMetrics>,
}

/// Aggregates replicate outcomes (in replicate order) into a report.
pub fn aggregate(
    outcomes: &[ReplicateOutcome],
    scenario: &ScenarioTruth,
    prevalence: f64,
    n_max: usize,
    design: Design,
    target: f64,
    weighting: Weighting,
) -> Result<MetricsReport> {
    let cats: Vec<SelectionCategory> = outcomes.iter().map(|o| classify_selection(&o.selected, scenario)).collect();
    let n_doses = scenario.n_doses();
    let dists = subgroup_dose_distribution(outcomes, scenario, n_doses, weighting);
    let mut subgroups = Vec::with_capacity(dists.len());
    for (k, (dist, truth)) in dists.iter().zip(&scenario.subgroups).enumerate() {
        let weights = wps_weights(&truth.probs, target)?;
        let pcs = compute_pcs(&dist.distribution, truth.true_mtd);
        let wps = compute_wps(&dist.distribution, &truth.probs, target)?;
        let (pcs_se, wps_se) = match weighting {
            Weighting::Patient => {
                let n: Vec<f64> = dist.per_replicate.iter().map(|c| c.iter().sum::<usize>() as f64).collect();
                let hits: Vec<f64> = dist.per_replicate.iter().map(|c| c[truth.true_mtd - 1] as f64).collect();
                let weighted: Vec<f64> =
                    dist.per_replicate.iter().map(|c| c.iter().zip(&weights).map(|(x, w)| *x as f64 * w).sum()).collect();
                (clustered_ratio(&hits, &n).1, clustered_ratio(&weighted, &n).1)
            }
            Weighting::Replicate => {
                let per: Vec<(f64, f64)> = dist
                    .per_replicate
                    .iter()
                    .filter_map(|c| {
                        let n = c.iter().sum::<usize>() as f64;
                        (n > 0.0).then(|| {
                            let w: f64 = c.iter().zip(&weights).map(|(x, w)| *x as f64 * w).sum();
                            (c[truth.true_mtd - 1] as f64 / n, w / n)
                        })
                    })
                    .collect();
                let ones = vec![1.0; per.len()];
                let a: Vec<f64> = per.iter().map(|p| p.0).collect();
                let b: Vec<f64> = per.iter().map(|p| p.1).collect();
                (clustered_ratio(&a, &ones).1, clustered_ratio(&b, &ones).1)
            }
        };
        subgroups.push(SubgroupMetrics {
            subgroup: k + 1,
            pattern: truth.pattern.clone(),
            true_mtd: truth.true_mtd,
            patients: dist.patients,
            distribution: dist.distribution.clone(),
            pcs,
            pcs_se,
            wps,
            wps_se,
        });
    }
    Ok(MetricsReport {
        scenario: scenario.id,
        prevalence,
        n_max,
        design,
        replicates: outcomes.len(),
        failed: outcomes.iter().filter(|o| o.failed).count(),
        fallbacks: outcomes.iter().filter(|o| o.fallback).count(),
        selection: SelectionTable::from_categories(&cats),
        subgroups,
    })
}

/// Runs one grid cell's replicates in parallel; output order is replicate order.
pub fn run_cell(
    config: &SimConfig,
    scenario: &ScenarioTruth,
    prevalence: f64,
    n_max: usize,
    design: Design,
) -> Result<MetricsReport> {
    let dc = config.design.clone().with_n_max(n_max);
    let prev = vec![prevalence; dc.covariates.len()];
    let outcomes: Vec<ReplicateOutcome> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(config.master_seed, scenario.id, prevalence, n_max, r);
            run_replicate(design, &dc, scenario, &prev, seed)
        })
        .collect();
    aggregate(&outcomes, scenario, prevalence, n_max, design, dc.target, config.weighting)
}

/// Every (scenario, prevalence, N_max, design) cell of the configured grid.
pub fn run_grid(config: &SimConfig) -> Result<Vec<MetricsReport>> {
    config.validate()?;
    let run = || -> Result<Vec<MetricsReport>> {
        let mut reports = Vec::new();
        for scenario in &config.scenarios {
            for &prevalence in &config.prevalences {
                for &n_max in &config.n_max {
                    for &design in config.comparator.designs() {
                        reports.push(run_cell(config, scenario, prevalence, n_max, design)?);
                    }
                }
            }
        }
        Ok(reports)
    };
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_across_cells_and_replicates() {
        let a = replicate_seed(1, 1, 0.5, 45, 0);
        assert_ne!(a, replicate_seed(1, 1, 0.5, 45, 1));
        assert_ne!(a, replicate_seed(1, 2, 0.5, 45, 0));
        assert_ne!(a, replicate_seed(1, 1, 0.25, 45, 0));
        assert_ne!(a, replicate_seed(1, 1, 0.5, 30, 0));
        assert_ne!(a, replicate_seed(2, 1, 0.5, 45, 0));
        assert_eq!(a, replicate_seed(1, 1, 0.5, 45, 0));
    }

    #[test]
    fn single_replicate_report_equals_its_replicate() {
        let s = ScenarioTruth::builtin(4).unwrap();
        let dc = DesignConfig::default().with_n_max(30);
        let out = run_replicate(Design::Pcrm, &dc, &s, &[0.5; 3], 7);
        assert!(!out.failed);
        let report = aggregate(&[out.clone()], &s, 0.5, 30, Design::Pcrm, 0.25, Weighting::Patient).unwrap();
        let cat = classify_selection(&out.selected, &s);
        let sel = &report.selection;
        let pct = [sel.none, sel.correct_only, sel.correct_with_others, sel.incorrect];
        let idx = [
            SelectionCategory::None,
            SelectionCategory::CorrectOnly,
            SelectionCategory::CorrectWithOthers,
            SelectionCategory::Incorrect,
        ]
        .iter()
        .position(|c| *c == cat)
        .unwrap();
        for (i, p) in pct.iter().enumerate() {
            assert_eq!(*p, if i == idx { 100.0 } else { 0.0 });
        }
        let table = out.table.as_ref().unwrap();
        for g in &report.subgroups {
            let mine: Vec<usize> = out
                .covariates
                .iter()
                .filter(|z| s.subgroups[s.subgroup_for(z)].pattern == g.pattern)
                .map(|z| table.dose_for(z))
                .collect();
            assert_eq!(g.patients, mine.len());
            let hits = mine.iter().filter(|d| **d == g.true_mtd).count();
            assert_eq!(g.pcs, hits as f64 / mine.len() as f64);
        }
    }

    #[test]
    fn one_sample_comparator_doses_subgroups_identically() {
        let s = ScenarioTruth::builtin(4).unwrap();
        let dc = DesignConfig::default().with_n_max(30);
        for seed in 0..10 {
            let out = run_replicate(Design::OneSample, &dc, &s, &[0.5; 3], seed);
            let table = out.table.unwrap();
            assert_eq!(table.entries.len(), 1);
            let doses: Vec<_> = out.covariates.iter().map(|z| table.dose_for(z)).collect();
            assert!(doses.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut c = SimConfig { replicates: 0, ..Default::default() };
        assert!(c.validate().is_err());
        c.replicates = 1;
        c.prevalences = vec![1.0];
        assert!(c.validate().is_err());
        c.prevalences = vec![0.5];
        c.n_max = vec![31];
        assert!(c.validate().is_err());
    }
}
