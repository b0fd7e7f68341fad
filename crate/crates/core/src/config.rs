//! Solver settings.

use serde::Serialize;

use crate::fwcycles::HarvestConfig;

/// How much of the run is recorded in the report trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    None,
    #[default]
    Summary,
    /// Also every candidate decision of the trial phase.
    Full,
}

/// Settings for [`crate::patcher::solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SolveConfig {
    pub harvest: HarvestConfig,
    pub node_limit: u64,
    pub pruning: bool,
    pub threads: usize,
    pub trace: TraceLevel,
    pub max_rounds: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            harvest: HarvestConfig::default(),
            node_limit: 1_000_000,
            pruning: true,
            threads: 1,
            trace: TraceLevel::Summary,
            max_rounds: 64,
        }
    }
}
