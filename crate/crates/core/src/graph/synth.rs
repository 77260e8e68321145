use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SeededRng, SparseSymMatrix};

/// Stochastic block model with class-indicative features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    /// Nodes per block; block `b` is class `b`.
    pub block_sizes: Vec<usize>,
    pub intra_p: f64,
    pub inter_p: f64,
    /// Must be at least the number of blocks.
    pub feat_dim: usize,
    /// Standard deviation of Gaussian feature noise.
    pub noise: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            block_sizes: vec![60; 4],
            intra_p: 0.08,
            inter_p: 0.005,
            feat_dim: 32,
            noise: 0.5,
        }
    }
}

/// Samples a graph from `cfg`. Feature `x_v` is the one-hot of the class,
/// tiled across `feat_dim` columns (column `j` indicates class `j mod C`),
/// plus `N(0, noise²)`.
pub fn synth_sbm(cfg: &SbmConfig, rng: &mut SeededRng) -> Result<Graph> {
    let c = cfg.block_sizes.len();
    if c == 0 || cfg.block_sizes.contains(&0) {
        return Err(Error::InvalidArgument("blocks must be non-empty".into()));
    }
    if cfg.feat_dim < c {
        return Err(Error::InvalidArgument(format!(
            "feat_dim {} is smaller than the {c} classes",
            cfg.feat_dim
        )));
    }
    for p in [cfg.intra_p, cfg.inter_p] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("edge probability {p} outside [0, 1]")));
        }
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise {} must be >= 0", cfg.noise)));
    }
    let labels: Vec<usize> = cfg
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = labels.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { cfg.intra_p } else { cfg.inter_p };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let adjacency = SparseSymMatrix::from_edges(n, edges)?;
    let mut features = DenseMatrix::zeros(n, cfg.feat_dim);
    for v in 0..n {
        for j in 0..cfg.feat_dim {
            let base = if j % c == labels[v] { 1.0 } else { 0.0 };
            let eps: f64 = StandardNormal.sample(rng);
            features.set(v, j, base + cfg.noise * eps);
        }
    }
    Graph::new(adjacency, features, labels, c)
}
