use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Symmetric sparse matrix stored as its upper triangle (diagonal included).
///
/// Each unordered coordinate `{i, j}` is stored once with `i <= j`; an
/// expanded CSR view holding both orientations is built on construction and
/// backs all row access and products.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SparseRepr", into = "SparseRepr")]
pub struct SparseSymMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SparseRepr {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TryFrom<SparseRepr> for SparseSymMatrix {
    type Error = Error;

    fn try_from(repr: SparseRepr) -> Result<Self> {
        SparseSymMatrix::from_entries(repr.n, repr.entries)
    }
}

impl From<SparseSymMatrix> for SparseRepr {
    fn from(m: SparseSymMatrix) -> Self {
        SparseRepr {
            n: m.n,
            entries: m.entries,
        }
    }
}

impl SparseSymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self::build(n, Vec::new())
    }

    pub fn identity(n: usize) -> Self {
        Self::build(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    /// Builds from coordinates in either orientation. Explicit zeros are dropped.
    ///
    /// Fails on out-of-range ids, non-finite values, or a coordinate given twice
    /// (including once as `(i, j)` and once as `(j, i)`).
    pub fn from_entries(
        n: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut upper = Vec::new();
        for (i, j, v) in entries {
            for id in [i, j] {
                if id >= n {
                    return Err(Error::NodeOutOfRange {
                        id,
                        n,
                        context: "sparse entry",
                    });
                }
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite sparse value at ({i}, {j})"
                )));
            }
            upper.push((i.min(j), i.max(j), v));
        }
        upper.sort_by_key(|a| (a.0, a.1));
        if let Some(w) = upper.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidArgument(format!(
                "duplicate sparse coordinate ({}, {})",
                w[0].0, w[0].1
            )));
        }
        upper.retain(|e| e.2 != 0.0);
        Ok(Self::build(n, upper))
    }

    /// Binary adjacency from undirected pairs. Duplicates (in either
    /// orientation) collapse to one edge; self-loops are rejected.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut upper = Vec::new();
        for (u, v) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(Error::NodeOutOfRange {
                        id,
                        n,
                        context: "edge",
                    });
                }
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop on node {u}")));
            }
            upper.push((u.min(v), u.max(v), 1.0));
        }
        upper.sort_by_key(|a| (a.0, a.1));
        upper.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));
        Ok(Self::build(n, upper))
    }

    fn build(n: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, _) in &entries {
            counts[i + 1] += 1;
            if i != j {
                counts[j + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let total = row_ptr[n];
        let mut fill = counts;
        let mut col_idx = vec![0usize; total];
        let mut values = vec![0.0; total];
        for &(i, j, v) in &entries {
            col_idx[fill[i]] = j;
            values[fill[i]] = v;
            fill[i] += 1;
            if i != j {
                col_idx[fill[j]] = i;
                values[fill[j]] = v;
                fill[j] += 1;
            }
        }
        // Rows are filled in ascending column order except where lower-triangle
        // entries interleave, so sort each row.
        for r in 0..n {
            let (s, e) = (row_ptr[r], row_ptr[r + 1]);
            let mut pairs: Vec<(usize, f64)> = col_idx[s..e]
                .iter()
                .copied()
                .zip(values[s..e].iter().copied())
                .collect();
            pairs.sort_by_key(|p| p.0);
            for (k, (c, v)) in pairs.into_iter().enumerate() {
                col_idx[s + k] = c;
                values[s + k] = v;
            }
        }
        Self {
            n,
            entries,
            row_ptr,
            col_idx,
            values,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored upper-triangle entries `(i, j, value)` with `i <= j`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Number of stored off-diagonal pairs (undirected edges).
    pub fn num_edges(&self) -> usize {
        self.entries.iter().filter(|e| e.0 != e.1).count()
    }

    /// Number of nonzeros in the expanded matrix.
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Undirected off-diagonal pairs `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries
            .iter()
            .filter(|e| e.0 != e.1)
            .map(|&(u, v, _)| (u, v))
    }

    /// Column indices and values of row `i` in the expanded matrix.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.n || j >= self.n {
            return 0.0;
        }
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.get(i, j) != 0.0
    }

    /// Row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Count of nonzero neighbours per node, excluding the diagonal.
    pub fn degree(&self, i: usize) -> usize {
        self.row(i).0.iter().filter(|&&c| c != i).count()
    }

    /// Sparse-dense product `self × m`.
    pub fn spmm(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        if m.rows() != self.n {
            return Err(Error::shape(
                "spmm",
                format!("{} rows", self.n),
                format!("{} rows", m.rows()),
            ));
        }
        let mut out = DenseMatrix::zeros(self.n, m.cols());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                for (o, &x) in out_row.iter_mut().zip(m.row(j)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// Single output row of `self × m`.
    pub fn spmm_row(&self, i: usize, m: &DenseMatrix) -> Vec<f64> {
        let mut out = vec![0.0; m.cols()];
        let (cols, vals) = self.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            for (o, &x) in out.iter_mut().zip(m.row(j)) {
                *o += v * x;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.entries {
            d.set(i, j, v);
            d.set(j, i, v);
        }
        d
    }

    /// Copy with the symmetric entry `{u, v}` set to `value` (removed if zero).
    pub fn with_value(&self, u: usize, v: usize, value: f64) -> Result<Self> {
        if u >= self.n || v >= self.n {
            return Err(Error::NodeOutOfRange {
                id: u.max(v),
                n: self.n,
                context: "sparse update",
            });
        }
        let key = (u.min(v), u.max(v));
        let mut entries: Vec<_> = self
            .entries
            .iter()
            .copied()
            .filter(|e| (e.0, e.1) != key)
            .collect();
        if value != 0.0 {
            let pos = entries.partition_point(|e| (e.0, e.1) < key);
            entries.insert(pos, (key.0, key.1, value));
        }
        Ok(Self::build(self.n, entries))
    }

    /// Binary toggle of the pair `{u, v}`: `a ← 1 − a`.
    pub fn toggled(&self, u: usize, v: usize) -> Result<Self> {
        let current = self.get(u, v);
        self.with_value(u, v, 1.0 - current)
    }

    /// `‖self − other‖₀` over the expanded `n × n` matrices.
    pub fn l0_distance(&self, other: &SparseSymMatrix) -> usize {
        let mut count = 0;
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        let weight = |e: &(usize, usize, f64)| if e.0 == e.1 { 1 } else { 2 };
        while i < a.len() || j < b.len() {
            let ka = a.get(i).map(|e| (e.0, e.1));
            let kb = b.get(j).map(|e| (e.0, e.1));
            match (ka, kb) {
                (Some(x), Some(y)) if x == y => {
                    if a[i].2 != b[j].2 {
                        count += weight(&a[i]);
                    }
                    i += 1;
                    j += 1;
                }
                (Some(x), Some(y)) if x < y => {
                    count += weight(&a[i]);
                    i += 1;
                }
                (Some(_), None) => {
                    count += weight(&a[i]);
                    i += 1;
                }
                _ => {
                    count += weight(&b[j]);
                    j += 1;
                }
            }
        }
        count
    }

    /// Sub-matrix containing only the listed undirected pairs of `self`.
    pub fn restrict_to(&self, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::from_entries(self.n, pairs.iter().map(|&(u, v)| (u, v, self.get(u, v))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use rand::Rng;

    fn random_graph(n: usize, p: f64, seed: u64) -> SparseSymMatrix {
        let mut rng = SeededRng::new(seed).stream(0);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        SparseSymMatrix::from_edges(n, edges).unwrap()
    }

    #[test]
    fn identity_spmm_is_identity() {
        let m = DenseMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(SparseSymMatrix::identity(4).spmm(&m).unwrap(), m);
    }

    #[test]
    fn single_edge_permutes() {
        let s = SparseSymMatrix::from_edges(2, [(0, 1)]).unwrap();
        let x = DenseMatrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(s.spmm(&x).unwrap().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn spmm_matches_dense_oracle() {
        for seed in 0..20 {
            let n = 10 + (seed as usize % 41);
            let s = random_graph(n, 0.2, seed);
            let s = SparseSymMatrix::from_entries(
                n,
                s.entries()
                    .iter()
                    .map(|&(i, j, _)| (i, j, 0.5 + (i * j) as f64 * 0.01))
                    .chain((0..n).map(|i| (i, i, 1.0 / (i + 1) as f64))),
            )
            .unwrap();
            let m = DenseMatrix::from_fn(n, 5, |i, j| ((i + 1) as f64 * 0.3 - j as f64).cos());
            let got = s.spmm(&m).unwrap();
            let dense = s.to_dense().matmul(&m).unwrap();
            for (a, b) in got.as_slice().iter().zip(dense.as_slice()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
            for i in 0..n {
                assert_eq!(s.spmm_row(i, &m), got.row(i));
            }
        }
    }

    #[test]
    fn spmm_shape_error() {
        let s = SparseSymMatrix::identity(3);
        assert!(s.spmm(&DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn duplicate_coordinates_rejected() {
        let err = SparseSymMatrix::from_entries(3, [(0, 1, 1.0), (1, 0, 2.0)]);
        assert!(err.is_err());
    }

    #[test]
    fn from_edges_dedups_and_symmetrises() {
        let s = SparseSymMatrix::from_edges(3, [(0, 1), (1, 0), (1, 2)]).unwrap();
        assert_eq!(s.num_edges(), 2);
        assert_eq!(s.get(1, 0), 1.0);
        assert_eq!(s.get(2, 1), 1.0);
        assert_eq!(s.get(0, 2), 0.0);
        assert!(SparseSymMatrix::from_edges(3, [(1, 1)]).is_err());
    }

    #[test]
    fn toggling_counts_twice() {
        let a = random_graph(12, 0.3, 7);
        let b = a.toggled(2, 9).unwrap();
        assert_eq!(a.l0_distance(&b), 2);
        assert_eq!(b.get(2, 9), 1.0 - a.get(2, 9));
        let c = b.toggled(9, 2).unwrap();
        assert_eq!(c, a);
        assert_eq!(a.l0_distance(&a), 0);
    }

    #[test]
    fn serde_round_trip() {
        let a = random_graph(9, 0.4, 3);
        let json = serde_json::to_string(&a).unwrap();
        let back: SparseSymMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }
}
