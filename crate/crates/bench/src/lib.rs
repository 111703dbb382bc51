//! Fixtures shared by the benchmarks.

use pollwait::pipeline::{run_target, Dataset, PipelineConfig};
use pollwait::synth::{simulate, ScenarioConfig, SimOutput};
use pollwait::VoterRow;

pub fn scenario(n_places: usize) -> ScenarioConfig {
    ScenarioConfig {
        n_places,
        voters_per_place: 100.0,
        ..ScenarioConfig::default()
    }
}

pub fn fixture(n_places: usize) -> (SimOutput, Dataset) {
    let sim = simulate(&scenario(n_places)).expect("default scenario is valid");
    let ds = Dataset::from_sim(&sim);
    (sim, ds)
}

/// Likely-voter rows for the target day at the default radius.
pub fn voter_rows(ds: &Dataset) -> Vec<VoterRow> {
    run_target(ds, &PipelineConfig::default())
        .expect("pipeline")
        .day
        .rows
}
