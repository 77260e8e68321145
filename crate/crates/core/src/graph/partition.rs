use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SeededRng, SparseSymMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// Two participants, each holding half of the feature columns and half of
    /// the edges.
    DualSplit,
    /// `K` participants splitting the feature columns; every participant
    /// keeps the full edge set.
    FeatureOnly,
}

/// Per-participant feature columns and edge shards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerticalPartition {
    mode: PartitionMode,
    columns: Vec<Vec<usize>>,
    edge_shards: Vec<SparseSymMatrix>,
}

impl VerticalPartition {
    /// Builds a partition from explicit column lists. In dual-split mode the
    /// edge shards must be given; in feature-only mode every shard is the full
    /// adjacency.
    pub fn from_parts(
        graph: &Graph,
        mode: PartitionMode,
        columns: Vec<Vec<usize>>,
        edge_shards: Option<Vec<SparseSymMatrix>>,
    ) -> Result<Self> {
        let k = columns.len();
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 participants, got {k}"
            )));
        }
        let f = graph.features().cols();
        let mut seen = vec![false; f];
        for &c in columns.iter().flatten() {
            if c >= f || std::mem::replace(&mut seen[c], true) {
                return Err(Error::InvalidArgument(format!(
                    "column lists must partition 0..{f}; column {c} is out of range or repeated"
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "column lists must cover 0..{f}"
            )));
        }
        let edge_shards = match (mode, edge_shards) {
            (PartitionMode::FeatureOnly, None) => vec![graph.adjacency().clone(); k],
            (PartitionMode::FeatureOnly, Some(shards)) => {
                if shards.iter().any(|s| s != graph.adjacency()) {
                    return Err(Error::InvalidArgument(
                        "feature-only shards must equal the full adjacency".into(),
                    ));
                }
                shards
            }
            (PartitionMode::DualSplit, None) => {
                return Err(Error::InvalidArgument("dual-split mode needs edge shards".into()))
            }
            (PartitionMode::DualSplit, Some(shards)) => {
                if k != 2 || shards.len() != 2 {
                    return Err(Error::InvalidArgument(
                        "dual-split mode requires exactly 2 participants".into(),
                    ));
                }
                shards
            }
        };
        Ok(Self {
            mode,
            columns,
            edge_shards,
        })
    }

    pub fn mode(&self) -> PartitionMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self, participant: usize) -> &[usize] {
        &self.columns[participant]
    }

    pub fn adjacency(&self, participant: usize) -> &SparseSymMatrix {
        &self.edge_shards[participant]
    }

    /// Feature shard of one participant, columns in recorded order.
    pub fn features(&self, graph: &Graph, participant: usize) -> Result<DenseMatrix> {
        graph.features().select_cols(&self.columns[participant])
    }
}

/// Random vertical partition.
///
/// Columns are shuffled and cut into `k` contiguous runs whose sizes differ by
/// at most one (the first `F mod k` participants get the extra column). In
/// dual-split mode the shuffled edge list is cut in half, participant 0
/// receiving the extra edge when `|E|` is odd.
pub fn partition(
    graph: &Graph,
    k: usize,
    mode: PartitionMode,
    rng: &mut SeededRng,
) -> Result<VerticalPartition> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 participants, got {k}"
        )));
    }
    if mode == PartitionMode::DualSplit && k != 2 {
        return Err(Error::InvalidArgument(format!(
            "dual-split mode requires exactly 2 participants, got {k}"
        )));
    }
    let f = graph.features().cols();
    let mut cols: Vec<usize> = (0..f).collect();
    cols.shuffle(rng);
    let (base, extra) = (f / k, f % k);
    let mut columns = Vec::with_capacity(k);
    let mut start = 0;
    for m in 0..k {
        let len = base + usize::from(m < extra);
        columns.push(cols[start..start + len].to_vec());
        start += len;
    }

    let shards = match mode {
        PartitionMode::FeatureOnly => None,
        PartitionMode::DualSplit => {
            let mut edges: Vec<(usize, usize)> = graph.adjacency().edges().collect();
            edges.shuffle(rng);
            let half = edges.len().div_ceil(2);
            let n = graph.n();
            Some(vec![
                SparseSymMatrix::from_edges(n, edges[..half].iter().copied())?,
                SparseSymMatrix::from_edges(n, edges[half..].iter().copied())?,
            ])
        }
    };
    VerticalPartition::from_parts(graph, mode, columns, shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synth_sbm, SbmConfig};
    use std::collections::HashSet;

    fn toy() -> Graph {
        let cfg = SbmConfig {
            block_sizes: vec![15, 15, 13],
            intra_p: 0.3,
            inter_p: 0.05,
            feat_dim: 23,
            noise: 0.2,
        };
        synth_sbm(&cfg, &mut SeededRng::new(5)).unwrap()
    }

    #[test]
    fn columns_are_near_equal_and_reconstruct_features() {
        let g = toy();
        for k in 2..=6 {
            let p = partition(&g, k, PartitionMode::FeatureOnly, &mut SeededRng::new(k as u64)).unwrap();
            let sizes: Vec<usize> = (0..k).map(|m| p.columns(m).len()).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            assert_eq!(sizes.iter().sum::<usize>(), 23);
            let shards: Vec<DenseMatrix> = (0..k).map(|m| p.features(&g, m).unwrap()).collect();
            let refs: Vec<&DenseMatrix> = shards.iter().collect();
            let joined = DenseMatrix::hstack(&refs).unwrap();
            let order: Vec<usize> = (0..k).flat_map(|m| p.columns(m).to_vec()).collect();
            assert_eq!(joined, g.features().select_cols(&order).unwrap());
            for m in 0..k {
                assert_eq!(p.adjacency(m), g.adjacency());
            }
        }
    }

    #[test]
    fn split_of_1433_columns() {
        let cols = 1433;
        let g = Graph::new(
            SparseSymMatrix::zeros(2),
            DenseMatrix::zeros(2, cols),
            vec![0, 1],
            2,
        )
        .unwrap();
        let p = partition(&g, 2, PartitionMode::FeatureOnly, &mut SeededRng::new(0)).unwrap();
        assert_eq!((p.columns(0).len(), p.columns(1).len()), (717, 716));
    }

    #[test]
    fn dual_split_partitions_edges() {
        let g = toy();
        let p = partition(&g, 2, PartitionMode::DualSplit, &mut SeededRng::new(9)).unwrap();
        let a: HashSet<_> = p.adjacency(0).edges().collect();
        let b: HashSet<_> = p.adjacency(1).edges().collect();
        assert!(a.is_disjoint(&b));
        let all: HashSet<_> = g.adjacency().edges().collect();
        assert_eq!(a.union(&b).copied().collect::<HashSet<_>>(), all);
        assert_eq!(a.len() + b.len(), g.stats().edges);
        assert!(a.len().abs_diff(b.len()) <= 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let g = toy();
        let a = partition(&g, 2, PartitionMode::DualSplit, &mut SeededRng::new(4)).unwrap();
        let b = partition(&g, 2, PartitionMode::DualSplit, &mut SeededRng::new(4)).unwrap();
        let c = partition(&g, 2, PartitionMode::DualSplit, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn dual_mode_requires_two_participants() {
        let g = toy();
        assert!(partition(&g, 3, PartitionMode::DualSplit, &mut SeededRng::new(0)).is_err());
        assert!(partition(&g, 1, PartitionMode::FeatureOnly, &mut SeededRng::new(0)).is_err());
    }
}
