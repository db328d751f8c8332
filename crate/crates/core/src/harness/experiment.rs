//! Single-run entry points.

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::MetricsReport;
use crate::harness::world::World;

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    /// JSON-lines trace, when requested.
    pub trace: Option<String>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    Ok(run_with_trace(cfg, false)?.report)
}

pub fn run_with_trace(cfg: &ExperimentConfig, trace: bool) -> Result<RunOutput> {
    let (report, trace) = World::new(cfg, trace)?.run()?;
    Ok(RunOutput { report, trace })
}
