//! Shared fixtures for the `gvfl` benchmarks.

use gvfl::graph::{make_split, partition, synth_sbm};
use gvfl::{DefenseConfig, Graph, GvflSystem, PartitionMode, SbmConfig, SeededRng, TrainConfig};

/// Cora-sized three-block SBM.
pub fn cora_like(seed: u64) -> Graph {
    let cfg = SbmConfig {
        block_sizes: vec![900, 900, 900],
        intra_p: 0.004,
        inter_p: 0.0003,
        feat_dim: 64,
        noise: 0.8,
    };
    synth_sbm(&cfg, &mut SeededRng::new(seed)).expect("valid SBM config")
}

/// Untrained two-participant system over `graph`.
pub fn system(graph: &Graph, epochs: usize) -> GvflSystem {
    let rng = SeededRng::new(0);
    let part = partition(graph, 2, PartitionMode::DualSplit, &mut rng.named("partition")).unwrap();
    let split = make_split(graph, &mut rng.named("split"), 20, 300, 600).unwrap();
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    GvflSystem::new(graph, &part, split, config, DefenseConfig::default(), &rng).unwrap()
}
