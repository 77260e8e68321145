//! Graph substrate: loading, normalisation, vertical partitioning, splits and
//! synthetic generators.

mod io;
mod partition;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{normalize_with_degrees, DenseMatrix, SparseSymMatrix};

pub use io::{convert_citation, load_graph, write_graph, ConversionSummary};
pub use partition::{partition, PartitionMode, VerticalPartition};
pub use split::{make_split, SplitSpec};
pub use synth::{synth_sbm, SbmConfig};

/// Undirected node-classification graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    adjacency: SparseSymMatrix,
    features: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    /// Original label token for each class id.
    class_names: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
}

impl Graph {
    pub fn new(
        adjacency: SparseSymMatrix,
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let class_names = (0..num_classes).map(|c| c.to_string()).collect();
        Self::with_class_names(adjacency, features, labels, class_names)
    }

    pub fn with_class_names(
        adjacency: SparseSymMatrix,
        features: DenseMatrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = adjacency.n();
        if features.rows() != n || labels.len() != n {
            return Err(Error::shape(
                "Graph::new",
                format!("{n} nodes"),
                format!("{} feature rows, {} labels", features.rows(), labels.len()),
            ));
        }
        for &(i, j, v) in adjacency.entries() {
            if i == j {
                return Err(Error::InvalidArgument(format!("self-loop on node {i}")));
            }
            if v != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "adjacency must be binary, found {v} at ({i}, {j})"
                )));
            }
        }
        let num_classes = class_names.len();
        if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::ClassOutOfRange {
                class: c,
                num_classes,
            });
        }
        Ok(Self {
            adjacency,
            features,
            labels,
            num_classes,
            class_names,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn adjacency(&self) -> &SparseSymMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: self.n(),
            edges: self.adjacency.num_edges(),
            features: self.features.cols(),
            classes: self.num_classes,
        }
    }

    /// Replaces the features with an `n × n` identity, for graphs without
    /// node attributes.
    pub fn with_identity_features(mut self) -> Self {
        self.features = DenseMatrix::identity(self.n());
        self
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}`; isolated nodes get `D_ii = 1` from the self-loop.
pub fn normalize(adjacency: &SparseSymMatrix) -> SparseSymMatrix {
    normalize_with_degrees(adjacency).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use rand::Rng;

    /// Independent dense construction of the normalised adjacency.
    fn dense_normalize(a: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let hat = DenseMatrix::from_fn(n, n, |i, j| a.get(i, j) + if i == j { 1.0 } else { 0.0 });
        let d: Vec<f64> = (0..n).map(|i| hat.row(i).iter().sum()).collect();
        DenseMatrix::from_fn(n, n, |i, j| hat.get(i, j) / (d[i] * d[j]).sqrt())
    }

    #[test]
    fn isolated_node_normalises_to_one() {
        let s = normalize(&SparseSymMatrix::zeros(1));
        assert_eq!(s.to_dense().as_slice(), &[1.0]);
    }

    #[test]
    fn two_node_edge_is_all_halves() {
        let s = normalize(&SparseSymMatrix::from_edges(2, [(0, 1)]).unwrap());
        for &v in s.to_dense().as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_dense_oracle_and_is_bounded() {
        for seed in 0..10 {
            let mut rng = SeededRng::new(seed);
            let n = 10;
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < 0.3 {
                        edges.push((u, v));
                    }
                }
            }
            let a = SparseSymMatrix::from_edges(n, edges).unwrap();
            let got = normalize(&a).to_dense();
            let expect = dense_normalize(&a.to_dense());
            for i in 0..n {
                for j in 0..n {
                    assert!((got.get(i, j) - expect.get(i, j)).abs() < 1e-12);
                    assert_eq!(got.get(i, j), got.get(j, i));
                    let v = got.get(i, j);
                    if a.get(i, j) != 0.0 || i == j {
                        assert!(v > 0.0 && v <= 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn graph_rejects_bad_labels() {
        let a = SparseSymMatrix::zeros(2);
        let x = DenseMatrix::zeros(2, 1);
        assert!(matches!(
            Graph::new(a, x, vec![0, 2], 2),
            Err(Error::ClassOutOfRange { .. })
        ));
    }
}
