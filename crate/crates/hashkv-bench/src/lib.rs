//! Workload generator, experiment driver, and metrics reporting for the
//! hashkv store and its baselines.

pub mod report;
pub mod runner;
pub mod workload;
