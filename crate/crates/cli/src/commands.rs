use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pcrm_core::estimation::{calibrate_skeleton, dose_labels};
use pcrm_core::simulator::{run_grid, MetricsReport, SimConfig};

use crate::config::load_sim_config;
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

/// Files written by [`simulate`].
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub reports: Vec<MetricsReport>,
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub json: PathBuf,
}

pub fn apply_overrides(config: &mut SimConfig, seed: Option<u64>, threads: Option<usize>) {
    if let Some(s) = seed {
        config.master_seed = s;
    }
    if threads.is_some() {
        config.threads = threads;
    }
}

pub fn simulate(config_path: &Path, out_dir: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<SimulationOutput> {
    let mut config = load_sim_config(config_path)?;
    apply_overrides(&mut config, seed, threads);
    let reports = run_grid(&config)?;
    write_outputs(&reports, out_dir)
}

pub fn write_outputs(reports: &[MetricsReport], out_dir: &Path) -> Result<SimulationOutput> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let csv = out_dir.join("results.csv");
    let summary = out_dir.join("summary.txt");
    let json = out_dir.join("results.json");
    report::write_csv(reports, fs::File::create(&csv).with_context(|| format!("writing {}", csv.display()))?)?;
    fs::write(&summary, report::summary_table(reports))?;
    fs::write(&json, report::to_json(reports)?)?;
    Ok(SimulationOutput { reports: reports.to_vec(), csv, summary, json })
}

pub fn skeleton_text(target: f64, doses: usize, nu: usize, delta: f64, intercept: f64) -> Result<String> {
    let skeleton = calibrate_skeleton(target, doses, nu, delta, intercept)?;
    let labels = dose_labels(&skeleton, intercept, 1.0)?;
    let mut out = String::new();
    writeln!(out, "{:>5} {:>10} {:>10}", "dose", "skeleton", "label")?;
    for (j, (p, d)) in skeleton.iter().zip(&labels).enumerate() {
        writeln!(out, "{:>5} {:>10.6} {:>10.6}", j + 1, p, d)?;
    }
    Ok(out)
}

pub fn render_report(input: &Path, format: ReportFormat) -> Result<String> {
    let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let reports = report::read_csv(file).with_context(|| format!("reading {}", input.display()))?;
    Ok(match format {
        ReportFormat::Table => report::summary_table(&reports),
        ReportFormat::Json => report::to_json(&reports)? + "\n",
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            report::write_csv(&reports, &mut buf)?;
            String::from_utf8(buf)?
        }
    })
}
