//! Precision continual reassessment method (P-CRM) for phase I dose finding.
//!
//! The design screens binary patient covariates for association with
//! toxicity while a trial runs and recommends a maximum tolerated dose per
//! covariate pattern. This crate holds the design engine, its numerics, and a
//! Monte Carlo simulator for operating characteristics.
//!
//! Modules:
//! - [`trial`]: dose grid, patient history, the no-skip rule.
//! - [`estimation`]: fixed-intercept logistic MLE, CRM posterior quadrature,
//!   skeleton calibration.
//! - [`crm`]: one-sample CRM recommendations.
//! - [`pcrm`]: the two-stage covariate-selection state machine.
//! - [`scenario`] / [`simulator`]: truth tables, replicates, metrics.

pub mod crm;
pub mod error;
pub mod estimation;
pub mod pcrm;
pub mod scenario;
pub mod simulator;
pub mod trial;

pub use error::{Error, Result};
pub use estimation::{CrmPrior, FittedModel};
pub use pcrm::{finalize, recommend_cohort, step, DesignConfig, MtdTable, SelectionEvent};
pub use scenario::ScenarioTruth;
pub use trial::{CovariateSpec, DoseGrid, DoseLevel, PatientRecord, Phase, TrialState};
