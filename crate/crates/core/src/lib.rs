//! Symmetric TSP heuristic built on derangements, perfect matchings and a
//! modified Floyd-Warshall cycle search, with exact oracles for small sizes.

pub mod config;
pub mod fixtures;
pub mod fwcycles;
pub mod instance;
pub mod oracle;
pub mod patcher;
pub mod permutation;
pub mod phase1;
pub mod reduced;

pub use config::{SolveConfig, TraceLevel};
pub use fwcycles::{harvest_cycles, CycleClass, CycleRecord, HarvestConfig};
pub use instance::{load_matrix, CostMatrix};
pub use patcher::{solve, tour_search, SearchConfig, SolveOutcome, SolveReport};
pub use permutation::{PerfectMatching, Permutation, Tour};
