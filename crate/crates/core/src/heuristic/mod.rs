//! Heuristic alignment procedure driven by Poisson significance tests.

mod search;
mod stats;

pub use search::{
    run_alignment, Decision, HeuristicConfig, HeuristicSearch, Outcome, Phase, SearchEvent,
    SearchTrace,
};
pub use stats::{background_threshold, decision_threshold, w_statistic};
