//! Operator surfaces for the P-CRM design: batch simulation, skeleton
//! calibration, report rendering and the trial-conduct HTTP service.

pub mod commands;
pub mod config;
pub mod report;
pub mod service;

pub use config::{load_sim_config, parse_sim_config, ConfigError};
