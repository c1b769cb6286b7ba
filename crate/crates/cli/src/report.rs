//! Report writers: long-format CSV, a plain-text summary table, and JSON.

use std::fmt::Write as _;
use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use pcrm_core::simulator::{Design, MetricsReport, SelectionTable, SubgroupMetrics};
use serde::{Deserialize, Serialize};

/// One CSV row: a (scenario, prevalence, N_max, design, subgroup, dose) cell.
/// Cell-level columns repeat on every row so the file is self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scenario: usize,
    pub prevalence: f64,
    pub n_max: usize,
    pub design: Design,
    pub replicates: usize,
    pub failed: usize,
    pub fallbacks: usize,
    pub sel_none: f64,
    pub sel_correct_only: f64,
    pub sel_correct_with_others: f64,
    pub sel_incorrect: f64,
    pub sel_none_se: f64,
    pub sel_correct_only_se: f64,
    pub sel_correct_with_others_se: f64,
    pub sel_incorrect_se: f64,
    pub subgroup: usize,
    /// Split-covariate values as a digit string; empty for a homogeneous population.
    pub pattern: String,
    pub true_mtd: usize,
    pub patients: usize,
    pub pcs: f64,
    pub pcs_se: f64,
    pub wps: f64,
    pub wps_se: f64,
    pub dose: usize,
    pub prob: f64,
}

pub fn to_rows(reports: &[MetricsReport]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for r in reports {
        let s = &r.selection;
        for g in &r.subgroups {
            for (j, p) in g.distribution.iter().enumerate() {
                rows.push(CsvRow {
                    scenario: r.scenario,
                    prevalence: r.prevalence,
                    n_max: r.n_max,
                    design: r.design,
                    replicates: r.replicates,
                    failed: r.failed,
                    fallbacks: r.fallbacks,
                    sel_none: s.none,
                    sel_correct_only: s.correct_only,
                    sel_correct_with_others: s.correct_with_others,
                    sel_incorrect: s.incorrect,
                    sel_none_se: s.se[0],
                    sel_correct_only_se: s.se[1],
                    sel_correct_with_others_se: s.se[2],
                    sel_incorrect_se: s.se[3],
                    subgroup: g.subgroup,
                    pattern: g.pattern.iter().map(|v| char::from(b'0' + v)).collect(),
                    true_mtd: g.true_mtd,
                    patients: g.patients,
                    pcs: g.pcs,
                    pcs_se: g.pcs_se,
                    wps: g.wps,
                    wps_se: g.wps_se,
                    dose: j + 1,
                    prob: *p,
                });
            }
        }
    }
    rows
}

/// Rebuilds reports from CSV rows written by [`write_csv`].
pub fn from_rows(rows: &[CsvRow]) -> Result<Vec<MetricsReport>> {
    let mut reports: Vec<MetricsReport> = Vec::new();
    for row in rows {
        let same_cell = reports.last().is_some_and(|r| {
            r.scenario == row.scenario && r.prevalence == row.prevalence && r.n_max == row.n_max && r.design == row.design
        });
        if !same_cell {
            reports.push(MetricsReport {
                scenario: row.scenario,
                prevalence: row.prevalence,
                n_max: row.n_max,
                design: row.design,
                replicates: row.replicates,
                failed: row.failed,
                fallbacks: row.fallbacks,
                selection: SelectionTable {
                    none: row.sel_none,
                    correct_only: row.sel_correct_only,
                    correct_with_others: row.sel_correct_with_others,
                    incorrect: row.sel_incorrect,
                    se: [row.sel_none_se, row.sel_correct_only_se, row.sel_correct_with_others_se, row.sel_incorrect_se],
                },
                subgroups: Vec::new(),
            });
        }
        let report = reports.last_mut().expect("pushed above");
        if report.subgroups.last().map(|g| g.subgroup) != Some(row.subgroup) {
            let pattern = row
                .pattern
                .chars()
                .map(|c| match c {
                    '0' => Ok(0u8),
                    '1' => Ok(1u8),
                    other => bail!("pattern {:?} has non-binary digit {other:?}", row.pattern),
                })
                .collect::<Result<Vec<u8>>>()?;
            report.subgroups.push(SubgroupMetrics {
                subgroup: row.subgroup,
                pattern,
                true_mtd: row.true_mtd,
                patients: row.patients,
                distribution: Vec::new(),
                pcs: row.pcs,
                pcs_se: row.pcs_se,
                wps: row.wps,
                wps_se: row.wps_se,
            });
        }
        let group = report.subgroups.last_mut().expect("pushed above");
        if row.dose != group.distribution.len() + 1 {
            bail!(
                "scenario {} N_max {} subgroup {}: dose {} out of order",
                row.scenario,
                row.n_max,
                row.subgroup,
                row.dose
            );
        }
        group.distribution.push(row.prob);
    }
    Ok(reports)
}

pub fn write_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in to_rows(reports) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsReport>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("CSV record {}", i + 1)))
        .collect::<Result<Vec<CsvRow>>>()?;
    from_rows(&rows)
}

pub fn to_json(reports: &[MetricsReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

fn pattern_label(pattern: &[u8]) -> String {
    if pattern.is_empty() {
        "all".into()
    } else {
        pattern.iter().map(|v| char::from(b'0' + v)).collect()
    }
}

/// Plain-text summary: criteria selection, then per-subgroup dose selection.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Probability of criteria selection (%)");
    let _ = writeln!(
        out,
        "{:<5} {:>5} {:>5} {:<10} {:>6} {:>8} {:>8} {:>9} {:>6} {:>9}",
        "scen", "prev", "N", "design", "none", "correct", "+others", "incorrect", "failed", "fallbacks"
    );
    for r in reports {
        let s = &r.selection;
        let _ = writeln!(
            out,
            "S{:<4} {:>5.2} {:>5} {:<10} {:>6.1} {:>8.1} {:>8.1} {:>9.1} {:>6} {:>9}",
            r.scenario,
            r.prevalence,
            r.n_max,
            r.design.as_str(),
            s.none,
            s.correct_only,
            s.correct_with_others,
            s.incorrect,
            r.failed,
            r.fallbacks
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Dose selection by subgroup (patient share per dose level)");
    let n_doses = reports.iter().flat_map(|r| &r.subgroups).map(|g| g.distribution.len()).max().unwrap_or(0);
    let mut header = format!("{:<5} {:>5} {:>5} {:<10} {:>7} {:>4}", "scen", "prev", "N", "design", "pattern", "MTD");
    for j in 1..=n_doses {
        let _ = write!(header, " {:>5}", format!("d{j}"));
    }
    let _ = writeln!(out, "{header} {:>5} {:>5}", "PCS", "WPS");
    for r in reports {
        for g in &r.subgroups {
            let mut line = format!(
                "S{:<4} {:>5.2} {:>5} {:<10} {:>7} {:>4}",
                r.scenario,
                r.prevalence,
                r.n_max,
                r.design.as_str(),
                pattern_label(&g.pattern),
                g.true_mtd
            );
            for p in &g.distribution {
                let _ = write!(line, " {p:>5.2}");
            }
            let _ = writeln!(out, "{line} {:>5.2} {:>5.2}", g.pcs, g.wps);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use pcrm_core::simulator::{run_grid, Comparator, SimConfig};
    use pcrm_core::ScenarioTruth;

    fn small_grid() -> Vec<MetricsReport> {
        let cfg = SimConfig {
            scenarios: vec![ScenarioTruth::builtin(2).unwrap(), ScenarioTruth::builtin(5).unwrap()],
            prevalences: vec![0.5],
            n_max: vec![30],
            replicates: 8,
            comparator: Comparator::Both,
            ..SimConfig::default()
        };
        run_grid(&cfg).unwrap()
    }

    #[test]
    fn csv_round_trips_exactly() {
        let reports = small_grid();
        let mut buf = Vec::new();
        write_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        // 2 designs x (2 subgroups + 1 subgroup) x 6 doses, plus the header
        assert_eq!(text.lines().count(), 1 + 2 * 3 * 6);
        assert_eq!(read_csv(buf.as_slice()).unwrap(), reports);
    }

    #[test]
    fn summary_lists_every_cell() {
        let reports = small_grid();
        let s = summary_table(&reports);
        assert!(s.contains("Probability of criteria selection"));
        assert_eq!(s.lines().filter(|l| l.starts_with("S2 ")).count(), 2 + 4);
        assert!(s.lines().any(|l| l.starts_with("S5 ") && l.contains(" all ")));
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let reports = small_grid();
        let mut buf = Vec::new();
        write_csv(&reports[..1], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 2);
        assert!(read_csv(lines.join("\n").as_bytes()).is_err());
        assert!(read_csv("scenario,prevalence\n1,oops\n".as_bytes()).is_err());
    }
}
