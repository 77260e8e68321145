//! Tape-based reverse-mode differentiation over dense matrices and symmetric
//! sparse adjacency matrices.
//!
//! Operations append nodes to a [`Tape`] and compute their value eagerly.
//! [`Tape::backward`] walks the nodes in exact reverse order. Dense leaves
//! created with [`Tape::param`] receive full gradients. Sparse leaves created
//! with [`Tape::sparse_param`] receive gradients only on a declared set of
//! directed coordinates, each treated as an independent entry `A[u][v]`, which
//! includes coordinates that are currently zero.

use std::collections::HashMap;
use std::sync::Arc;

use super::dense::{gemm, DenseMatrix};
use super::sparse::SparseSymMatrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Directed coordinates on which a sparse node carries gradients.
#[derive(Debug)]
struct Support {
    coords: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
}

impl Support {
    fn new(coords: Vec<(usize, usize)>) -> Self {
        let index = coords.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        Self { coords, index }
    }

    /// `self.coords` followed by any coordinate of `extra` not already present.
    fn extended(&self, extra: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut coords = self.coords.clone();
        let mut index = self.index.clone();
        for c in extra {
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(c) {
                e.insert(coords.len());
                coords.push(c);
            }
        }
        Self { coords, index }
    }
}

enum Value {
    Dense(DenseMatrix),
    Sparse {
        matrix: SparseSymMatrix,
        support: Option<Arc<Support>>,
    },
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    RowSoftmax(Var),
    CrossEntropy {
        probs: Var,
        picks: Vec<(usize, usize)>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: DenseMatrix,
        picks: Vec<(usize, usize)>,
    },
    Mse(Var, Var),
    Sum(Var),
    Normalize {
        input: Var,
        degrees: Vec<f64>,
    },
    SpMM(Var, Var),
}

struct Node {
    op: Op,
    value: Value,
    requires_grad: bool,
}

enum Grad {
    Dense(DenseMatrix),
    Sparse(Vec<f64>),
}

/// Record of operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Value, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_dense(&mut self, op: Op, value: DenseMatrix, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(op, Value::Dense(value), requires_grad)
    }

    /// Untracked dense input; its gradient is always zero.
    pub fn constant(&mut self, m: DenseMatrix) -> Var {
        self.push(Op::Leaf, Value::Dense(m), false)
    }

    /// Trainable dense leaf.
    pub fn param(&mut self, m: DenseMatrix) -> Var {
        self.push(Op::Leaf, Value::Dense(m), true)
    }

    pub fn sparse_constant(&mut self, s: SparseSymMatrix) -> Var {
        self.push(
            Op::Leaf,
            Value::Sparse {
                matrix: s,
                support: None,
            },
            false,
        )
    }

    /// Sparse leaf whose gradient is materialised on `candidates`.
    ///
    /// Each undirected pair `(u, v)` contributes both directed coordinates
    /// `(u, v)` and `(v, u)`. Diagonal pairs are rejected.
    pub fn sparse_param(&mut self, s: SparseSymMatrix, candidates: &[(usize, usize)]) -> Result<Var> {
        let n = s.n();
        let mut coords = Vec::with_capacity(candidates.len() * 2);
        for &(u, v) in candidates {
            if u >= n || v >= n {
                return Err(Error::NodeOutOfRange {
                    id: u.max(v),
                    n,
                    context: "gradient candidate",
                });
            }
            if u == v {
                return Err(Error::InvalidArgument(format!(
                    "gradient candidate ({u}, {v}) is on the diagonal"
                )));
            }
            coords.push((u, v));
            coords.push((v, u));
        }
        let base = Support::new(Vec::new()).extended(coords);
        Ok(self.push(
            Op::Leaf,
            Value::Sparse {
                matrix: s,
                support: Some(Arc::new(base)),
            },
            true,
        ))
    }

    /// Dense value of `v`. Panics if `v` is sparse.
    pub fn value(&self, v: Var) -> &DenseMatrix {
        match &self.nodes[v.0].value {
            Value::Dense(m) => m,
            Value::Sparse { .. } => panic!("node {} is sparse", v.0),
        }
    }

    /// Sparse value of `v`. Panics if `v` is dense.
    pub fn sparse_value(&self, v: Var) -> &SparseSymMatrix {
        match &self.nodes[v.0].value {
            Value::Sparse { matrix, .. } => matrix,
            Value::Dense(_) => panic!("node {} is dense", v.0),
        }
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    fn dense_operand(&self, op: &'static str, v: Var) -> Result<&DenseMatrix> {
        match &self.nodes[v.0].value {
            Value::Dense(m) => Ok(m),
            Value::Sparse { .. } => Err(Error::shape(op, "dense operand", "sparse operand")),
        }
    }

    fn sparse_operand(&self, op: &'static str, v: Var) -> Result<(&SparseSymMatrix, Option<&Arc<Support>>)> {
        match &self.nodes[v.0].value {
            Value::Sparse { matrix, support } => Ok((matrix, support.as_ref())),
            Value::Dense(_) => Err(Error::shape(op, "sparse operand", "dense operand")),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .dense_operand("matmul", a)?
            .matmul(self.dense_operand("matmul", b)?)?;
        Ok(self.push_dense(Op::MatMul(a, b), value, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.dense_operand("add", a)?.add(self.dense_operand("add", b)?)?;
        Ok(self.push_dense(Op::Add(a, b), value, &[a, b]))
    }

    /// `m + 1·bias`, broadcasting a `1 × cols` row over every row of `m`.
    pub fn add_row(&mut self, m: Var, bias: Var) -> Result<Var> {
        let mv = self.dense_operand("add_row", m)?;
        let bv = self.dense_operand("add_row", bias)?;
        if bv.rows() != 1 || bv.cols() != mv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("1x{}", mv.cols()),
                format!("{}x{}", bv.rows(), bv.cols()),
            ));
        }
        let mut value = mv.clone();
        let b = bv.row(0).to_vec();
        for i in 0..value.rows() {
            for (x, &bj) in value.row_mut(i).iter_mut().zip(&b) {
                *x += bj;
            }
        }
        Ok(self.push_dense(Op::AddRow(m, bias), value, &[m, bias]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.dense_operand("relu", a)?.map(|v| v.max(0.0));
        Ok(self.push_dense(Op::Relu(a), value, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats = parts
            .iter()
            .map(|&p| self.dense_operand("concat_cols", p))
            .collect::<Result<Vec<_>>>()?;
        let value = DenseMatrix::hstack(&mats)?;
        Ok(self.push_dense(Op::ConcatCols(parts.to_vec()), value, parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.dense_operand("slice_cols", a)?.slice_cols(start, end)?;
        Ok(self.push_dense(Op::SliceCols(a, start), value, &[a]))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let value = self.dense_operand("select_rows", a)?.select_rows(rows)?;
        Ok(self.push_dense(Op::SelectRows(a, rows.to_vec()), value, &[a]))
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let value = row_softmax(self.dense_operand("row_softmax", a)?);
        Ok(self.push_dense(Op::RowSoftmax(a), value, &[a]))
    }

    /// `−Σ_{l ∈ mask} ln probs[l, labels[l]]` over probability rows.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        let p = self.dense_operand("cross_entropy", probs)?;
        let picks = check_picks(p, labels, mask)?;
        let loss: f64 = picks
            .iter()
            .map(|&(r, c)| -p.get(r, c).max(f64::MIN_POSITIVE).ln())
            .sum();
        let value = DenseMatrix::filled(1, 1, loss);
        Ok(self.push_dense(Op::CrossEntropy { probs, picks }, value, &[probs]))
    }

    /// Cross-entropy of `row_softmax(logits)`, fused so the logit gradient is
    /// exactly `probs − onehot` on masked rows.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        let z = self.dense_operand("softmax_cross_entropy", logits)?;
        let picks = check_picks(z, labels, mask)?;
        let probs = row_softmax(z);
        let mut loss = 0.0;
        for &(r, c) in &picks {
            let row = z.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[c];
        }
        let value = DenseMatrix::filled(1, 1, loss);
        Ok(self.push_dense(
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                picks,
            },
            value,
            &[logits],
        ))
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.dense_operand("mse", a)?;
        let bv = self.dense_operand("mse", b)?;
        av.check_same_shape("mse", bv)?;
        let value = DenseMatrix::filled(1, 1, mse(av, bv));
        Ok(self.push_dense(Op::Mse(a, b), value, &[a, b]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = DenseMatrix::filled(1, 1, self.dense_operand("sum", a)?.sum());
        Ok(self.push_dense(Op::Sum(a), value, &[a]))
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D = diag(rowsum(A + I))`.
    ///
    /// When `a` carries a gradient support, the output support extends it with
    /// the full pattern of the result so degree terms can be back-propagated.
    pub fn normalize(&mut self, a: Var) -> Result<Var> {
        let (matrix, support) = self.sparse_operand("normalize", a)?;
        let (value, degrees) = normalize_with_degrees(matrix);
        let support = support.map(|s| {
            let pattern = (0..value.n()).flat_map(|i| {
                value.row(i).0.iter().map(move |&j| (i, j)).collect::<Vec<_>>()
            });
            Arc::new(s.extended(pattern))
        });
        let requires_grad = self.nodes[a.0].requires_grad;
        Ok(self.push(
            Op::Normalize { input: a, degrees },
            Value::Sparse {
                matrix: value,
                support,
            },
            requires_grad,
        ))
    }

    /// Sparse-dense product.
    pub fn spmm(&mut self, s: Var, m: Var) -> Result<Var> {
        let (sv, _) = self.sparse_operand("spmm", s)?;
        let value = sv.spmm(self.dense_operand("spmm", m)?)?;
        Ok(self.push_dense(Op::SpMM(s, m), value, &[s, m]))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let v = self.dense_operand("backward", loss)?;
        if v.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                op: "backward",
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        self.backward_from(loss, DenseMatrix::filled(1, 1, 1.0))
    }

    /// Reverse pass seeded with an explicit upstream gradient for `output`.
    pub fn backward_from(&self, output: Var, seed: DenseMatrix) -> Result<Gradients> {
        let out = self.dense_operand("backward_from", output)?;
        out.check_same_shape("backward_from", &seed)?;
        let mut grads: Vec<Option<Grad>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Grad::Dense(seed));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &grad, &mut grads);
            grads[idx] = Some(grad);
        }

        let supports = self
            .nodes
            .iter()
            .map(|n| match &n.value {
                Value::Sparse { support, .. } => support.clone(),
                Value::Dense(_) => None,
            })
            .collect();
        Ok(Gradients {
            grads,
            supports,
            leaf: self.nodes.iter().map(|n| matches!(n.op, Op::Leaf)).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, grad: &Grad, grads: &mut [Option<Grad>]) {
        let node = &self.nodes[idx];
        match (&node.op, grad) {
            (Op::Leaf, _) => {}
            (Op::MatMul(a, b), Grad::Dense(g)) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.wants(*a) {
                    let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut ga, 0.0);
                    accumulate_dense(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = DenseMatrix::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut gb, 0.0);
                    accumulate_dense(grads, *b, gb);
                }
            }
            (Op::Add(a, b), Grad::Dense(g)) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate_dense(grads, v, g.clone());
                    }
                }
            }
            (Op::AddRow(m, bias), Grad::Dense(g)) => {
                if self.wants(*m) {
                    accumulate_dense(grads, *m, g.clone());
                }
                if self.wants(*bias) {
                    let mut gb = DenseMatrix::zeros(1, g.cols());
                    for row in g.row_iter() {
                        for (acc, &x) in gb.row_mut(0).iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                    accumulate_dense(grads, *bias, gb);
                }
            }
            (Op::Relu(a), Grad::Dense(g)) => {
                if self.wants(*a) {
                    let x = self.value(*a);
                    let ga = g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate_dense(grads, *a, ga);
                }
            }
            (Op::ConcatCols(parts), Grad::Dense(g)) => {
                let mut start = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    if self.wants(p) {
                        let gp = g.slice_cols(start, start + width).expect("concat slice");
                        accumulate_dense(grads, p, gp);
                    }
                    start += width;
                }
            }
            (Op::SliceCols(a, start), Grad::Dense(g)) => {
                if self.wants(*a) {
                    let av = self.value(*a);
                    let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                    for i in 0..g.rows() {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate_dense(grads, *a, ga);
                }
            }
            (Op::SelectRows(a, rows), Grad::Dense(g)) => {
                if self.wants(*a) {
                    let av = self.value(*a);
                    let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                    for (k, &r) in rows.iter().enumerate() {
                        for (acc, &x) in ga.row_mut(r).iter_mut().zip(g.row(k)) {
                            *acc += x;
                        }
                    }
                    accumulate_dense(grads, *a, ga);
                }
            }
            (Op::RowSoftmax(a), Grad::Dense(g)) => {
                if self.wants(*a) {
                    let p = match &node.value {
                        Value::Dense(m) => m,
                        Value::Sparse { .. } => unreachable!(),
                    };
                    let mut ga = DenseMatrix::zeros(p.rows(), p.cols());
                    for i in 0..p.rows() {
                        let (pr, gr) = (p.row(i), g.row(i));
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for (k, out) in ga.row_mut(i).iter_mut().enumerate() {
                            *out = pr[k] * (gr[k] - dot);
                        }
                    }
                    accumulate_dense(grads, *a, ga);
                }
            }
            (Op::CrossEntropy { probs, picks }, Grad::Dense(g)) => {
                if self.wants(*probs) {
                    let p = self.value(*probs);
                    let scale = g.get(0, 0);
                    let mut gp = DenseMatrix::zeros(p.rows(), p.cols());
                    for &(r, c) in picks {
                        let pv = p.get(r, c).max(f64::MIN_POSITIVE);
                        gp.set(r, c, gp.get(r, c) - scale / pv);
                    }
                    accumulate_dense(grads, *probs, gp);
                }
            }
            (
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    picks,
                },
                Grad::Dense(g),
            ) => {
                if self.wants(*logits) {
                    let scale = g.get(0, 0);
                    let mut gz = DenseMatrix::zeros(probs.rows(), probs.cols());
                    for &(r, c) in picks {
                        for (k, out) in gz.row_mut(r).iter_mut().enumerate() {
                            *out += scale * probs.get(r, k);
                            if k == c {
                                *out -= scale;
                            }
                        }
                    }
                    accumulate_dense(grads, *logits, gz);
                }
            }
            (Op::Mse(a, b), Grad::Dense(g)) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let factor = 2.0 * g.get(0, 0) / av.len().max(1) as f64;
                let diff = av.zip_map(bv, |x, y| factor * (x - y));
                if self.wants(*b) {
                    accumulate_dense(grads, *b, diff.scale(-1.0));
                }
                if self.wants(*a) {
                    accumulate_dense(grads, *a, diff);
                }
            }
            (Op::Sum(a), Grad::Dense(g)) => {
                if self.wants(*a) {
                    let av = self.value(*a);
                    accumulate_dense(grads, *a, DenseMatrix::filled(av.rows(), av.cols(), g.get(0, 0)));
                }
            }
            (Op::SpMM(s, m), Grad::Dense(g)) => {
                let (sv, support) = self.sparse_operand("spmm", *s).expect("sparse operand");
                let mv = self.value(*m);
                if self.wants(*m) {
                    let gm = sv.spmm(g).expect("spmm backward shape");
                    accumulate_dense(grads, *m, gm);
                }
                if self.wants(*s) {
                    let support = support.expect("tracked sparse node has a support");
                    let gs: Vec<f64> = support
                        .coords
                        .iter()
                        .map(|&(i, j)| g.row(i).iter().zip(mv.row(j)).map(|(x, y)| x * y).sum())
                        .collect();
                    accumulate_sparse(grads, *s, gs);
                }
            }
            (Op::Normalize { input, degrees }, Grad::Sparse(g)) => {
                if self.wants(*input) {
                    let (out, out_support) = match &node.value {
                        Value::Sparse { matrix, support } => {
                            (matrix, support.as_ref().expect("normalize support"))
                        }
                        Value::Dense(_) => unreachable!(),
                    };
                    let (_, in_support) = self.sparse_operand("normalize", *input).expect("sparse");
                    let in_support = in_support.expect("tracked sparse node has a support");
                    // Σ_j g[u][j]·Ã[u][j] + Σ_i g[i][u]·Ã[i][u]
                    let mut row_terms = vec![0.0; out.n()];
                    for (k, &(i, j)) in out_support.coords.iter().enumerate() {
                        let a = out.get(i, j);
                        if a != 0.0 {
                            row_terms[i] += g[k] * a;
                            row_terms[j] += g[k] * a;
                        }
                    }
                    let gin: Vec<f64> = in_support
                        .coords
                        .iter()
                        .enumerate()
                        .map(|(k, &(u, v))| {
                            // Input coordinates are a prefix of the output support.
                            g[k] / (degrees[u] * degrees[v]).sqrt()
                                - row_terms[u] / (2.0 * degrees[u])
                        })
                        .collect();
                    accumulate_sparse(grads, *input, gin);
                }
            }
            _ => unreachable!("gradient kind does not match node kind"),
        }
    }
}

fn accumulate_dense(grads: &mut [Option<Grad>], v: Var, g: DenseMatrix) {
    match &mut grads[v.0] {
        Some(Grad::Dense(acc)) => acc.add_assign(&g),
        slot => *slot = Some(Grad::Dense(g)),
    }
}

fn accumulate_sparse(grads: &mut [Option<Grad>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(Grad::Sparse(acc)) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot => *slot = Some(Grad::Sparse(g)),
    }
}

fn check_picks(m: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<Vec<(usize, usize)>> {
    mask.iter()
        .map(|&r| {
            if r >= m.rows() || r >= labels.len() {
                return Err(Error::NodeOutOfRange {
                    id: r,
                    n: m.rows().min(labels.len()),
                    context: "loss mask",
                });
            }
            let c = labels[r];
            if c >= m.cols() {
                return Err(Error::ClassOutOfRange {
                    class: c,
                    num_classes: m.cols(),
                });
            }
            Ok((r, c))
        })
        .collect()
}

/// Gradients produced by one reverse pass.
pub struct Gradients {
    grads: Vec<Option<Grad>>,
    supports: Vec<Option<Arc<Support>>>,
    leaf: Vec<bool>,
}

impl Gradients {
    /// Dense gradient of `v`, or `None` if `v` is constant or unreachable.
    pub fn dense(&self, v: Var) -> Option<&DenseMatrix> {
        match self.grads.get(v.0)? {
            Some(Grad::Dense(m)) => Some(m),
            _ => None,
        }
    }

    /// Dense gradient of `v`, zero-filled when `v` did not receive one.
    pub fn dense_or_zeros(&self, v: Var, tape: &Tape) -> DenseMatrix {
        self.dense(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            DenseMatrix::zeros(r, c)
        })
    }

    /// Gradient of the directed entry `(u, v)` of a sparse leaf, or `None` if
    /// the coordinate was not declared as a candidate.
    pub fn sparse_entry(&self, var: Var, u: usize, v: usize) -> Option<f64> {
        let support = self.supports.get(var.0)?.as_ref()?;
        let k = *support.index.get(&(u, v))?;
        match &self.grads[var.0] {
            Some(Grad::Sparse(g)) => Some(g[k]),
            _ => Some(0.0),
        }
    }

    /// All declared directed coordinates of a sparse leaf with their gradients.
    pub fn sparse(&self, var: Var) -> Vec<((usize, usize), f64)> {
        let Some(Some(support)) = self.supports.get(var.0) else {
            return Vec::new();
        };
        let g = match &self.grads[var.0] {
            Some(Grad::Sparse(g)) => Some(g),
            _ => None,
        };
        let len = if self.leaf[var.0] { support.coords.len() } else { g.map_or(0, Vec::len) };
        support.coords[..len]
            .iter()
            .enumerate()
            .map(|(k, &c)| (c, g.map_or(0.0, |g| g[k])))
            .collect()
    }
}

/// Row-wise softmax with max subtraction.
pub fn row_softmax(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Mean of squared elementwise differences. Shapes must match.
pub fn mse(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.len().max(1) as f64;
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// `−Σ_{l ∈ mask} ln probs[l, labels[l]]`.
pub fn cross_entropy(probs: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    let picks = check_picks(probs, labels, mask)?;
    Ok(picks
        .iter()
        .map(|&(r, c)| -probs.get(r, c).max(f64::MIN_POSITIVE).ln())
        .sum())
}

pub(crate) fn normalize_with_degrees(a: &SparseSymMatrix) -> (SparseSymMatrix, Vec<f64>) {
    let n = a.n();
    let degrees: Vec<f64> = a.row_sums().iter().map(|s| s + 1.0).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(a.entries().len() + n);
    let mut has_diag = vec![false; n];
    for &(i, j, v) in a.entries() {
        let v = if i == j {
            has_diag[i] = true;
            v + 1.0
        } else {
            v
        };
        entries.push((i, j, v * inv_sqrt[i] * inv_sqrt[j]));
    }
    for i in (0..n).filter(|&i| !has_diag[i]) {
        entries.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
    }
    let out = SparseSymMatrix::from_entries(n, entries).expect("normalised entries are unique");
    (out, degrees)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use rand::Rng;

    fn random_dense(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Central differences of a scalar function over every entry of `x`.
    fn finite_diff(x: &DenseMatrix, f: impl Fn(&DenseMatrix) -> f64) -> DenseMatrix {
        let h = 1e-5;
        let mut out = DenseMatrix::zeros(x.rows(), x.cols());
        for k in 0..x.len() {
            let mut plus = x.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = x.clone();
            minus.as_mut_slice()[k] -= h;
            out.as_mut_slice()[k] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        let num: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
            + b.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let m = t.param(DenseMatrix::from_fn(3, 4, |i, j| (i + j) as f64));
        let s = t.sum(m).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.dense(m).unwrap(), &DenseMatrix::filled(3, 4, 1.0));
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut t = Tape::new();
        let c = t.constant(DenseMatrix::filled(2, 2, 3.0));
        let w = t.param(DenseMatrix::identity(2));
        let p = t.matmul(c, w).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.dense(c).is_none());
        assert_eq!(g.dense_or_zeros(c, &t), DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let m = t.param(DenseMatrix::zeros(2, 2));
        assert!(matches!(t.backward(m), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_b_transpose() {
        let mut rng = SeededRng::new(3);
        let a0 = random_dense(5, 4, &mut rng);
        let b0 = random_dense(4, 3, &mut rng);
        let mut t = Tape::new();
        let a = t.param(a0.clone());
        let b = t.constant(b0.clone());
        let p = t.matmul(a, b).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        let expected = DenseMatrix::filled(5, 3, 1.0).matmul(&b0.transpose()).unwrap();
        let fd = finite_diff(&a0, |x| x.matmul(&b0).unwrap().sum());
        assert!(rel_err(g.dense(a).unwrap(), &expected) < 1e-12);
        assert!(rel_err(g.dense(a).unwrap(), &fd) < 1e-8);
    }

    #[test]
    fn row_softmax_cases() {
        let p = row_softmax(&DenseMatrix::zeros(1, 3));
        for &v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = row_softmax(&DenseMatrix::from_vec(1, 2, vec![1000.0, 0.0]).unwrap());
        assert!(p.is_finite());
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12 && p.get(0, 1) < 1e-300);
        let m = DenseMatrix::from_vec(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let shifted = m.map(|v| v + 17.5);
        let (a, b) = (row_softmax(&m), row_softmax(&shifted));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let onehot = DenseMatrix::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&onehot, &[1], &[0]).unwrap(), 0.0);
        let uniform = DenseMatrix::filled(1, 7, 1.0 / 7.0);
        assert!((cross_entropy(&uniform, &[4], &[0]).unwrap() - 7f64.ln()).abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&uniform, &[7], &[0]),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn softmax_cross_entropy_logit_gradient_is_probs_minus_onehot() {
        let mut rng = SeededRng::new(11);
        let z0 = random_dense(6, 4, &mut rng);
        let labels = vec![0, 3, 1, 2, 2, 0];
        let mask = vec![0, 2, 5];
        let mut t = Tape::new();
        let z = t.param(z0.clone());
        let loss = t.softmax_cross_entropy(z, &labels, &mask).unwrap();
        let g = t.backward(loss).unwrap();
        let p = row_softmax(&z0);
        let mut expected = DenseMatrix::zeros(6, 4);
        for &r in &mask {
            for c in 0..4 {
                expected.set(r, c, p.get(r, c) - if c == labels[r] { 1.0 } else { 0.0 });
            }
        }
        assert!(rel_err(g.dense(z).unwrap(), &expected) < 1e-12);
        let fd = finite_diff(&z0, |x| cross_entropy(&row_softmax(x), &labels, &mask).unwrap());
        assert!(rel_err(g.dense(z).unwrap(), &fd) < 1e-6);

        // The unfused composition agrees with the fused op.
        let mut t2 = Tape::new();
        let z2 = t2.param(z0.clone());
        let p2 = t2.row_softmax(z2).unwrap();
        let l2 = t2.cross_entropy(p2, &labels, &mask).unwrap();
        assert!((t2.scalar(l2) - t.scalar(loss)).abs() < 1e-12);
        let g2 = t2.backward(l2).unwrap();
        assert!(rel_err(g2.dense(z2).unwrap(), &expected) < 1e-10);
    }

    #[test]
    fn mse_cases() {
        let a = DenseMatrix::from_fn(2, 3, |i, j| (i * j) as f64);
        assert_eq!(mse(&a, &a), 0.0);
        assert_eq!(mse(&a.map(|v| v + 1.0), &a), 1.0);
        let mut t = Tape::new();
        let av = t.param(a.map(|v| v * 0.5 + 0.1));
        let bv = t.constant(a.clone());
        let l = t.mse(av, bv).unwrap();
        let g = t.backward(l).unwrap();
        let expected = t.value(av).sub(&a).unwrap().scale(2.0 / 6.0);
        assert!(rel_err(g.dense(av).unwrap(), &expected) < 1e-14);
        let mut t = Tape::new();
        let x = t.param(DenseMatrix::zeros(2, 2));
        let y = t.constant(DenseMatrix::zeros(3, 2));
        assert!(t.mse(x, y).is_err());
    }

    #[test]
    fn mse_of_relu_layer_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed);
            let w0 = random_dense(4, 5, &mut rng);
            let x0 = random_dense(5, 3, &mut rng);
            let target = random_dense(4, 3, &mut rng);
            let loss = |w: &DenseMatrix| {
                let h = w.matmul(&x0).unwrap().map(|v| v.max(0.0));
                mse(&h, &target)
            };
            let mut t = Tape::new();
            let w = t.param(w0.clone());
            let x = t.constant(x0.clone());
            let tv = t.constant(target.clone());
            let wx = t.matmul(w, x).unwrap();
            let h = t.relu(wx).unwrap();
            let l = t.mse(h, tv).unwrap();
            let g = t.backward(l).unwrap();
            let fd = finite_diff(&w0, loss);
            assert!(rel_err(g.dense(w).unwrap(), &fd) < 1e-5, "seed {seed}");
        }
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let forward = |a: &DenseMatrix, b: &DenseMatrix, bias: &DenseMatrix, target: &DenseMatrix| {
            let mut c = DenseMatrix::hstack(&[a, b]).unwrap();
            for i in 0..c.rows() {
                for (x, &y) in c.row_mut(i).iter_mut().zip(bias.row(0)) {
                    *x += y;
                }
            }
            let p = row_softmax(&c.slice_cols(1, 4).unwrap().select_rows(&[3, 0]).unwrap());
            mse(&p.add(&p).unwrap(), target)
        };
        for seed in 0..20 {
            let mut rng = SeededRng::new(100 + seed);
            let a0 = random_dense(4, 3, &mut rng);
            let b0 = random_dense(4, 2, &mut rng);
            let bias0 = random_dense(1, 5, &mut rng);
            let target = random_dense(2, 3, &mut rng);

            let mut t = Tape::new();
            let a = t.param(a0.clone());
            let b = t.param(b0.clone());
            let bias = t.param(bias0.clone());
            let tv = t.constant(target.clone());
            let c = t.concat_cols(&[a, b]).unwrap();
            let c = t.add_row(c, bias).unwrap();
            let s = t.slice_cols(c, 1, 4).unwrap();
            let r = t.select_rows(s, &[3, 0]).unwrap();
            let p = t.row_softmax(r).unwrap();
            let q = t.add(p, p).unwrap();
            let l = t.mse(q, tv).unwrap();
            assert!((t.scalar(l) - forward(&a0, &b0, &bias0, &target)).abs() < 1e-14);
            let g = t.backward(l).unwrap();

            let fa = finite_diff(&a0, |x| forward(x, &b0, &bias0, &target));
            let fb = finite_diff(&b0, |x| forward(&a0, x, &bias0, &target));
            let fbias = finite_diff(&bias0, |x| forward(&a0, &b0, x, &target));
            assert!(rel_err(g.dense(a).unwrap(), &fa) < 1e-4, "seed {seed}");
            assert!(rel_err(g.dense(b).unwrap(), &fb) < 1e-4, "seed {seed}");
            assert!(rel_err(g.dense(bias).unwrap(), &fbias) < 1e-4, "seed {seed}");
        }
    }
}
