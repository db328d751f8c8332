//! Workloads, metrics, the causal checker and experiment orchestration.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod oracle;
pub mod suites;
pub mod trace;
pub mod workload;
pub mod world;

pub use config::{ExperimentConfig, FaultSpec, Protocol};
pub use experiment::{run_experiment, run_with_trace, RunOutput};
pub use metrics::{MetricsReport, Summary};
pub use oracle::{check_causal, CausalChecker, OracleEvent, Verdict, Violation};
pub use suites::{run_suite, SuiteName, SuiteOutput};
