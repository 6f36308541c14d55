//! Experiment orchestration: test functions, reproducible parallel Monte
//! Carlo, configuration and reports.

pub mod config;
pub mod cylinder;
pub mod experiment;
pub mod plot;
pub mod reduce;
pub mod report;
pub mod rng;
