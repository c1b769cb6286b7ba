//! Monte Carlo simulation of P-CRM and one-sample CRM trials.

mod engine;
mod generate;
mod metrics;

pub use engine::{
    aggregate, replicate_seed, run_cell, run_grid, run_one_sample_replicate, run_pcrm_replicate, run_replicate,
    Comparator, Design, MetricsReport, ReplicateOutcome, SelectionTable, SimConfig, SubgroupMetrics,
};
pub use generate::{draw_patient, generate_patient, PatientDraw};
pub use metrics::{
    classify_selection, compute_pcs, compute_wps, subgroup_dose_distribution, wps_weights, SelectionCategory,
    SubgroupDistribution, Weighting,
};
