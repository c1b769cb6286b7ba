//! Simulation config files.
//!
//! ```toml
//! replicates = 2000
//! master_seed = 20240601
//! prevalences = [0.5, 0.25]
//! n_max = [30, 45, 60, 72]
//! comparator = "both"
//! scenarios = [1, 2, 3, 4, 5]
//!
//! [design]
//! target = 0.25
//!
//! [design.calibration]
//! nu = 2
//! delta = 0.08
//! ```
//!
//! Custom truth tables go in `[[scenario]]` blocks with inline rows.

use std::fmt;
use std::path::Path;

use pcrm_core::estimation::{CrmPrior, PValueMethod, PosteriorSummary};
use pcrm_core::pcrm::{CandidateModel, NoSkipScope, SkeletonSource, ThresholdIndexing};
use pcrm_core::simulator::{Comparator, SimConfig, Weighting};
use pcrm_core::{CovariateSpec, DesignConfig, Error as CoreError, ScenarioTruth};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        write!(f, ": ")?;
        if let Some(field) = &self.field {
            write!(f, "{field}: ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimFile {
    replicates: Option<usize>,
    master_seed: Option<u64>,
    prevalences: Option<Vec<f64>>,
    n_max: Option<Vec<usize>>,
    comparator: Option<Comparator>,
    weighting: Option<Weighting>,
    threads: Option<usize>,
    /// Built-in scenario ids.
    scenarios: Option<Vec<usize>>,
    #[serde(default)]
    scenario: Vec<ScenarioFile>,
    design: Option<DesignFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    id: usize,
    name: Option<String>,
    #[serde(default)]
    split_covariates: Vec<usize>,
    subgroups: Vec<SubgroupFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubgroupFile {
    #[serde(default)]
    pattern: Vec<u8>,
    probs: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    n_doses: Option<usize>,
    covariates: Option<Vec<String>>,
    target: Option<f64>,
    n1: Option<usize>,
    cohort_size: Option<usize>,
    start_dose: Option<usize>,
    alpha: Option<f64>,
    skeleton: Option<Vec<f64>>,
    calibration: Option<CalibrationFile>,
    prior: Option<CrmPrior>,
    no_skip: Option<bool>,
    no_skip_scope: Option<NoSkipScope>,
    label_slope: Option<f64>,
    label_update: Option<bool>,
    threshold_indexing: Option<ThresholdIndexing>,
    candidate_model: Option<CandidateModel>,
    p_value_method: Option<PValueMethod>,
    posterior_summary: Option<PosteriorSummary>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    nu: usize,
    delta: f64,
}

/// Line (1-based) of `key = ...` inside its table; falls back to the header
/// of a table named `field`, then to the header of the enclosing table.
fn locate(source: &str, field: &str) -> Option<usize> {
    let (table, key) = field.rsplit_once('.').unwrap_or(("", field));
    let mut current = String::new();
    let (mut own_header, mut parent_header) = (None, None);
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == field && own_header.is_none() {
                own_header = Some(i + 1);
            }
            if current == table && parent_header.is_none() {
                parent_header = Some(i + 1);
            }
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    own_header.or(parent_header)
}

struct Diag<'a> {
    file: &'a str,
    source: &'a str,
}

impl Diag<'_> {
    fn field(&self, field: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.file.to_string(),
            line: locate(self.source, field),
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    fn core(&self, prefix: &str, err: CoreError) -> ConfigError {
        match err {
            CoreError::Field { field, message } => {
                let full = if prefix.is_empty() { field } else { format!("{prefix}.{field}") };
                self.field(&full, message)
            }
            other => ConfigError { file: self.file.to_string(), line: None, field: None, message: other.to_string() },
        }
    }
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Parses and validates a simulation config.
pub fn parse_sim_config(source: &str, file: &str) -> Result<SimConfig, ConfigError> {
    let diag = Diag { file, source };
    let raw: SimFile = toml::from_str(source).map_err(|e| ConfigError {
        file: file.to_string(),
        line: e.span().map(|s| line_of_offset(source, s.start)),
        field: None,
        message: e.message().to_string(),
    })?;

    let design_file = raw.design.ok_or_else(|| {
        diag.field("design", "missing [design] table; it must give `skeleton` or a [design.calibration] table")
    })?;
    let design = design_config(design_file, &diag)?;

    let mut scenarios = Vec::new();
    for id in raw.scenarios.unwrap_or_else(|| if raw.scenario.is_empty() { vec![1, 2, 3, 4, 5] } else { vec![] }) {
        let s = ScenarioTruth::builtin(id)
            .ok_or_else(|| diag.field("scenarios", format!("unknown built-in scenario {id}; choose 1-5")))?;
        scenarios.push(s);
    }
    for s in raw.scenario {
        let rows = s.subgroups.into_iter().map(|g| (g.pattern, g.probs)).collect();
        let truth = ScenarioTruth::new(s.id, s.name.unwrap_or_else(|| format!("Scenario {}", s.id)), s.split_covariates, rows, design.target)
            .map_err(|e| diag.field("scenario", format!("scenario {}: {}", s.id, strip_prefix(&e))))?;
        scenarios.push(truth);
    }
    let mut ids: Vec<usize> = scenarios.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(diag.field("scenarios", "scenario ids must be unique"));
    }

    let defaults = SimConfig::default();
    let config = SimConfig {
        scenarios,
        prevalences: raw.prevalences.unwrap_or(defaults.prevalences),
        n_max: raw.n_max.unwrap_or(defaults.n_max),
        replicates: raw.replicates.unwrap_or(defaults.replicates),
        design,
        comparator: raw.comparator.unwrap_or(defaults.comparator),
        master_seed: raw.master_seed.unwrap_or(defaults.master_seed),
        weighting: raw.weighting.unwrap_or(defaults.weighting),
        threads: raw.threads,
    };
    validate_sim(&config, &diag)?;
    Ok(config)
}

fn strip_prefix(e: &CoreError) -> String {
    match e {
        CoreError::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}

fn validate_sim(config: &SimConfig, diag: &Diag<'_>) -> Result<(), ConfigError> {
    let m = config.design.covariates.len();
    for s in &config.scenarios {
        s.validate(m, config.design.n_doses, config.design.target).map_err(|e| {
            let field = if s.id <= 5 && ScenarioTruth::builtin(s.id).as_ref() == Some(s) { "scenarios" } else { "scenario" };
            diag.field(field, strip_prefix(&e))
        })?;
    }
    for &n in &config.n_max {
        config.design.clone().with_n_max(n).validate().map_err(|e| match e {
            CoreError::Field { field, message } if field == "n_max" || field == "n1" => {
                diag.field("n_max", format!("N_max {n}: {field} {message}"))
            }
            other => diag.core("design", other),
        })?;
    }
    config.validate().map_err(|e| diag.core("", e))
}

fn design_config(d: DesignFile, diag: &Diag<'_>) -> Result<DesignConfig, ConfigError> {
    let base = DesignConfig::default();
    let skeleton = match (d.skeleton, d.calibration) {
        (Some(values), None) => SkeletonSource::Explicit { values },
        (None, Some(c)) => SkeletonSource::Calibrated { nu: c.nu, delta: c.delta },
        (Some(_), Some(_)) => {
            return Err(diag.field("design.skeleton", "give either `skeleton` or [design.calibration], not both"))
        }
        (None, None) => {
            return Err(diag.field(
                "design.skeleton",
                "missing: set `skeleton = [...]` or add a [design.calibration] table with `nu` and `delta`",
            ))
        }
    };
    let covariates = match d.covariates {
        Some(names) => CovariateSpec::new(names).map_err(|e| diag.field("design.covariates", strip_prefix(&e)))?,
        None => base.covariates.clone(),
    };
    let config = DesignConfig {
        n_doses: d.n_doses.unwrap_or(base.n_doses),
        covariates,
        target: d.target.unwrap_or(base.target),
        n1: d.n1.unwrap_or(base.n1),
        n_max: base.n_max,
        cohort_size: d.cohort_size.unwrap_or(base.cohort_size),
        start_dose: d.start_dose.unwrap_or(base.start_dose),
        alpha: d.alpha.unwrap_or(base.alpha),
        prior: d.prior.unwrap_or(base.prior),
        skeleton,
        no_skip: d.no_skip.unwrap_or(base.no_skip),
        no_skip_scope: d.no_skip_scope.unwrap_or(base.no_skip_scope),
        label_slope: d.label_slope.unwrap_or(base.label_slope),
        label_update: d.label_update.unwrap_or(base.label_update),
        threshold_indexing: d.threshold_indexing.unwrap_or(base.threshold_indexing),
        candidate_model: d.candidate_model.unwrap_or(base.candidate_model),
        p_value_method: d.p_value_method.unwrap_or(base.p_value_method),
        posterior_summary: d.posterior_summary.unwrap_or(base.posterior_summary),
    };
    let probe = config.clone().with_n_max(config.n1.max(config.cohort_size));
    probe.validate().map_err(|e| match e {
        CoreError::Field { ref field, .. } if field == "n_max" => diag.core("design", e),
        CoreError::Field { field, message } if field == "skeleton" || field == "calibration" => {
            diag.field(&format!("design.{field}"), message)
        }
        other => diag.core("design", other),
    })?;
    Ok(config)
}

pub fn load_sim_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let file = path.display().to_string();
    let source = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { file: file.clone(), line: None, field: None, message: e.to_string() })?;
    parse_sim_config(&source, &file)
}

/// The full simulation grid (five scenarios, two prevalences, four sample sizes) as a config file.
pub const DEFAULT_GRID: &str = r#"replicates = 2000
master_seed = 20240601
prevalences = [0.5, 0.25]
n_max = [30, 45, 60, 72]
comparator = "both"
weighting = "patient"
scenarios = [1, 2, 3, 4, 5]

[design]
n_doses = 6
covariates = ["z1", "z2", "z3"]
target = 0.25
n1 = 15
cohort_size = 3
start_dose = 2
alpha = 0.20

[design.calibration]
nu = 2
delta = 0.08

[design.prior]
mean = 0.0
variance = 1.34
intercept = 3.0
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_parses() {
        let c = parse_sim_config(DEFAULT_GRID, "grid.toml").unwrap();
        assert_eq!(c.scenarios.len(), 5);
        assert_eq!(c.n_max, vec![30, 45, 60, 72]);
        assert_eq!(c.design, DesignConfig::default());
        assert_eq!(c.comparator, Comparator::Both);
    }

    #[test]
    fn missing_skeleton_names_the_field() {
        let src = "replicates = 10\n\n[design]\ntarget = 0.25\n";
        let e = parse_sim_config(src, "c.toml").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("design.skeleton"));
        assert_eq!(e.line, Some(3));
        assert!(e.to_string().starts_with("c.toml:3: design.skeleton: missing"), "{e}");
    }

    #[test]
    fn bad_values_point_at_their_line() {
        let src = "replicates = 10\n[design]\nalpha = 1.5\n[design.calibration]\nnu = 2\ndelta = 0.08\n";
        let e = parse_sim_config(src, "c.toml").unwrap_err();
        assert_eq!((e.field.as_deref(), e.line), (Some("design.alpha"), Some(3)));

        let src = "prevalences = [0.5, 1.5]\n[design]\nskeleton = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]\n";
        let e = parse_sim_config(src, "c.toml").unwrap_err();
        assert_eq!((e.field.as_deref(), e.line), (Some("prevalences"), Some(1)));

        let src = "replicates = 0\n[design]\nskeleton = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]\n";
        let e = parse_sim_config(src, "c.toml").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("replicates"));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let src = "replicates = 10\n[design\n";
        let e = parse_sim_config(src, "c.toml").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = parse_sim_config("replicats = 3\n[design]\nskeleton=[0.1,0.2]\n", "c.toml").unwrap_err();
        assert_eq!(e.line, Some(1));
        assert!(e.message.contains("replicats"));
    }

    #[test]
    fn both_skeleton_sources_conflict() {
        let src = "[design]\nskeleton = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]\n[design.calibration]\nnu = 2\ndelta = 0.08\n";
        let e = parse_sim_config(src, "c.toml").unwrap_err();
        assert_eq!((e.field.as_deref(), e.line), (Some("design.skeleton"), Some(2)));
    }

    #[test]
    fn inline_scenarios() {
        let src = r#"scenarios = []
[design]
skeleton = [0.05, 0.12, 0.25, 0.40, 0.55, 0.68]

[[scenario]]
id = 9
split_covariates = [0]
subgroups = [
  { pattern = [0], probs = [0.05, 0.10, 0.25, 0.40, 0.55, 0.70] },
  { pattern = [1], probs = [0.25, 0.40, 0.55, 0.70, 0.80, 0.90] },
]
"#;
        let c = parse_sim_config(src, "c.toml").unwrap();
        assert_eq!(c.scenarios.len(), 1);
        assert_eq!(c.scenarios[0].subgroups[0].true_mtd, 1);
        assert_eq!(c.scenarios[0].subgroups[1].true_mtd, 3);

        let bad = src.replace("split_covariates = [0]", "split_covariates = [7]");
        let e = parse_sim_config(&bad, "c.toml").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("scenario"));
        assert_eq!(e.line, Some(5));
    }

    #[test]
    fn n_max_must_fit_the_cohorts() {
        let src = "n_max = [46]\n[design]\nskeleton = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]\n";
        let e = parse_sim_config(src, "c.toml").unwrap_err();
        assert_eq!((e.field.as_deref(), e.line), (Some("n_max"), Some(1)));
    }
}
