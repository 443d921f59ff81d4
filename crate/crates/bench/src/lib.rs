//! Shared fixtures for the benchmarks.

use step_core::pruner::Pruner;
use step_core::store::{generate_synthetic, SyntheticSpec};
use step_core::trainer::{TrainConfig, Trainer};
use step_core::TemporalGraph;

/// The synthetic fixture with `n_events` events and default dimensions.
pub fn fixture(n_events: usize) -> TemporalGraph {
    generate_synthetic(&SyntheticSpec { n_events, ..Default::default() }).expect("valid spec").graph
}

/// An untrained pruner with the default model dimensions; inference cost
/// does not depend on the weights.
pub fn default_pruner() -> Pruner {
    let g = fixture(2000);
    Trainer::new(&g, TrainConfig::default()).expect("valid config").model().pruner()
}
