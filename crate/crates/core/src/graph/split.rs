use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Disjoint train/validation/test node sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn new(train: Vec<usize>, val: Vec<usize>, test: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &v in train.iter().chain(&val).chain(&test) {
            if v >= n {
                return Err(Error::NodeOutOfRange {
                    id: v,
                    n,
                    context: "split",
                });
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidArgument(format!(
                    "node {v} appears in more than one split"
                )));
            }
        }
        let sorted = |mut v: Vec<usize>| {
            v.sort_unstable();
            v
        };
        Ok(Self {
            train: sorted(train),
            val: sorted(val),
            test: sorted(test),
        })
    }
}

/// Stratified split: `per_class_train` nodes of every class for training,
/// then `val_size` and `test_size` nodes drawn from the remainder.
pub fn make_split(
    graph: &Graph,
    rng: &mut SeededRng,
    per_class_train: usize,
    val_size: usize,
    test_size: usize,
) -> Result<SplitSpec> {
    if per_class_train == 0 {
        return Err(Error::InvalidArgument(
            "per_class_train = 0 gives an empty training set".into(),
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); graph.num_classes()];
    for (v, &c) in graph.labels().iter().enumerate() {
        by_class[c].push(v);
    }
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for (c, mut nodes) in by_class.into_iter().enumerate() {
        if nodes.len() < per_class_train {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {} nodes, fewer than {per_class_train} requested for training",
                nodes.len()
            )));
        }
        nodes.shuffle(rng);
        train.extend_from_slice(&nodes[..per_class_train]);
        rest.extend_from_slice(&nodes[per_class_train..]);
    }
    rest.sort_unstable();
    rest.shuffle(rng);
    if rest.len() < val_size + test_size {
        return Err(Error::InvalidArgument(format!(
            "only {} nodes remain after training selection, {} requested for val+test",
            rest.len(),
            val_size + test_size
        )));
    }
    let val = rest[..val_size].to_vec();
    let test = rest[val_size..val_size + test_size].to_vec();
    SplitSpec::new(train, val, test, graph.n())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synth_sbm, SbmConfig};

    fn toy() -> Graph {
        let cfg = SbmConfig {
            block_sizes: vec![40, 40, 40],
            intra_p: 0.1,
            inter_p: 0.01,
            feat_dim: 5,
            noise: 0.1,
        };
        synth_sbm(&cfg, &mut SeededRng::new(1)).unwrap()
    }

    #[test]
    fn stratified_and_disjoint() {
        let g = toy();
        let s = make_split(&g, &mut SeededRng::new(3), 5, 20, 50).unwrap();
        assert_eq!(s.train.len(), 15);
        for c in 0..3 {
            assert_eq!(s.train.iter().filter(|&&v| g.labels()[v] == c).count(), 5);
        }
        assert_eq!((s.val.len(), s.test.len()), (20, 50));
        assert!(s.train.iter().all(|v| !s.test.contains(v) && !s.val.contains(v)));
        assert!(s.val.iter().all(|v| !s.test.contains(v)));
    }

    #[test]
    fn deterministic() {
        let g = toy();
        let a = make_split(&g, &mut SeededRng::new(8), 5, 20, 50).unwrap();
        let b = make_split(&g, &mut SeededRng::new(8), 5, 20, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_train_is_an_error() {
        assert!(make_split(&toy(), &mut SeededRng::new(0), 0, 10, 10).is_err());
    }

    #[test]
    fn infeasible_sizes_are_errors() {
        let g = toy();
        assert!(make_split(&g, &mut SeededRng::new(0), 41, 0, 0).is_err());
        assert!(make_split(&g, &mut SeededRng::new(0), 20, 50, 50).is_err());
    }

    #[test]
    fn seven_classes_twenty_each() {
        let cfg = SbmConfig {
            block_sizes: vec![30; 7],
            intra_p: 0.1,
            inter_p: 0.0,
            feat_dim: 7,
            noise: 0.0,
        };
        let g = synth_sbm(&cfg, &mut SeededRng::new(0)).unwrap();
        let s = make_split(&g, &mut SeededRng::new(0), 20, 30, 30).unwrap();
        assert_eq!(s.train.len(), 140);
    }
}
