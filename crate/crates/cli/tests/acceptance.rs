//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Run with `cargo test -p pcrm-cli --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use pcrm_core::simulator::{run_grid, Comparator, Design, MetricsReport, SimConfig};
use pcrm_core::ScenarioTruth;

#[allow(dead_code)]
#[path = "../../core/tests/oracles.rs"]
mod oracles;
#[allow(dead_code)]
#[path = "../../core/tests/properties.rs"]
mod properties;

const REPLICATES: usize = 2000;

struct Outcome {
    name: &'static str,
    details: Vec<String>,
    pass: bool,
}

fn run_checks(name: &'static str, checks: Vec<(&'static str, fn())>) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (label, f) in checks {
        let start = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(f)).is_ok();
        pass &= ok;
        details.push(format!("{} {label} ({:.1?})", if ok { "ok  " } else { "FAIL" }, start.elapsed()));
    }
    Outcome { name, details, pass }
}

/// Compares observed against expected within `tol`, recording a detail line.
fn within(details: &mut Vec<String>, what: String, observed: f64, expected: f64, tol: f64) -> bool {
    let ok = (observed - expected).abs() <= tol;
    details.push(format!("{} {what}: {observed:.3} vs {expected} (tol {tol})", if ok { "ok  " } else { "FAIL" }));
    ok
}

fn at_most(details: &mut Vec<String>, what: String, observed: f64, bound: f64) -> bool {
    let ok = observed <= bound;
    details.push(format!("{} {what}: {observed:.3} vs at most {bound}", if ok { "ok  " } else { "FAIL" }));
    ok
}

fn cell(reports: &[MetricsReport], scenario: usize, prevalence: f64, n_max: usize, design: Design) -> &MetricsReport {
    reports
        .iter()
        .find(|r| r.scenario == scenario && r.prevalence == prevalence && r.n_max == n_max && r.design == design)
        .unwrap_or_else(|| panic!("missing cell S{scenario} prev {prevalence} N {n_max} {design:?}"))
}

fn grid(scenarios: &[usize], prevalences: &[f64], n_max: &[usize], comparator: Comparator) -> Vec<MetricsReport> {
    let config = SimConfig {
        scenarios: scenarios.iter().map(|&s| ScenarioTruth::builtin(s).unwrap()).collect(),
        prevalences: prevalences.to_vec(),
        n_max: n_max.to_vec(),
        replicates: REPLICATES,
        comparator,
        ..SimConfig::default()
    };
    run_grid(&config).unwrap()
}

/// Correct-criterion percentage for scenarios 1-4, none-selected for scenario 5.
fn selection_criterion(name: &'static str, reports: &[MetricsReport], n_max: usize, expected: [[f64; 5]; 2]) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (prevalence, row) in [0.50, 0.25].into_iter().zip(expected) {
        for (s, target) in (1..=5).zip(row) {
            let r = cell(reports, s, prevalence, n_max, Design::Pcrm);
            let (label, observed) =
                if s == 5 { ("none selected", r.selection.none) } else { ("correct criterion", r.selection.correct_only) };
            pass &= r.failed == 0;
            pass &= within(&mut details, format!("S{s} prev {prevalence} N {n_max} {label} %"), observed, target, 5.0);
        }
    }
    Outcome { name, details, pass }
}

fn subgroup_spot(
    details: &mut Vec<String>,
    r: &MetricsReport,
    true_mtd: usize,
    pcs: Option<(f64, f64)>,
    wps: Option<(f64, f64)>,
) -> bool {
    let tag = format!("S{} N {} {} MTD-{true_mtd}", r.scenario, r.n_max, r.design.as_str());
    let Some(g) = r.subgroups.iter().find(|g| g.true_mtd == true_mtd) else {
        details.push(format!("FAIL {tag}: no subgroup with that true MTD"));
        return false;
    };
    let mut ok = true;
    if let Some((expected, tol)) = pcs {
        ok &= within(details, format!("{tag} PCS"), g.pcs, expected, tol);
    }
    if let Some((expected, tol)) = wps {
        ok &= within(details, format!("{tag} WPS"), g.wps, expected, tol);
    }
    ok
}

fn main() {
    let start = Instant::now();
    let mut outcomes = vec![
        run_checks("Oracle suites", oracles::checks()),
        run_checks("Property suites", properties::checks().into_iter().chain(service::checks()).collect()),
    ];

    let main_grid = grid(&[1, 2, 3, 4, 5], &[0.50, 0.25], &[45, 60, 72], Comparator::Pcrm);
    outcomes.push(selection_criterion(
        "Table 1: criteria selection, N_max 45",
        &main_grid,
        45,
        [[48.0, 44.0, 68.0, 73.0, 56.0], [43.0, 41.0, 67.0, 79.0, 63.0]],
    ));
    let t60 = selection_criterion(
        "Tables 2-3: criteria selection, N_max 60 and 72",
        &main_grid,
        60,
        [[57.0, 52.0, 76.0, 76.0, 56.0], [50.0, 48.0, 73.0, 82.0, 58.0]],
    );
    let t72 = selection_criterion(
        "",
        &main_grid,
        72,
        [[64.0, 58.0, 78.0, 77.0, 56.0], [54.0, 52.0, 76.0, 83.0, 55.0]],
    );
    outcomes.push(Outcome {
        name: t60.name,
        pass: t60.pass && t72.pass,
        details: t60.details.into_iter().chain(t72.details).collect(),
    });

    let s1 = grid(&[1], &[0.50], &[30], Comparator::Pcrm);
    let s45 = grid(&[4, 5], &[0.50], &[72], Comparator::OneSample);
    let mut details = Vec::new();
    let mut pass = subgroup_spot(&mut details, &s1[0], 1, Some((0.64, 0.05)), Some((0.87, 0.05)));
    pass &= subgroup_spot(&mut details, cell(&main_grid, 4, 0.50, 72, Design::Pcrm), 6, Some((0.78, 0.05)), Some((0.84, 0.05)));
    pass &= subgroup_spot(&mut details, cell(&main_grid, 5, 0.50, 45, Design::Pcrm), 2, Some((0.63, 0.05)), Some((0.85, 0.05)));
    outcomes.push(Outcome { name: "Table 4: P-CRM dose selection spots", details, pass });

    let mut details = Vec::new();
    let mut pass = subgroup_spot(&mut details, cell(&s45, 5, 0.50, 72, Design::OneSample), 2, Some((0.92, 0.04)), None);
    let s4 = cell(&s45, 4, 0.50, 72, Design::OneSample);
    pass &= subgroup_spot(&mut details, s4, 6, None, Some((0.18, 0.05)));
    let mtd6 = s4.subgroups.iter().find(|g| g.true_mtd == 6).map_or(f64::NAN, |g| g.pcs);
    pass &= at_most(&mut details, "S4 N 72 one_sample MTD-6 PCS".into(), mtd6, 0.03);
    outcomes.push(Outcome { name: "Table 5: one-sample CRM dose selection spots", details, pass });

    let mut all = true;
    for o in &outcomes {
        println!("{} {}", if o.pass { "PASS" } else { "FAIL" }, o.name);
        for d in &o.details {
            println!("    {d}");
        }
        all &= o.pass;
    }
    println!(
        "{} of {} criteria passed in {:.0?}",
        outcomes.iter().filter(|o| o.pass).count(),
        outcomes.len(),
        start.elapsed()
    );
    if !all {
        std::process::exit(1);
    }
}
