//! Participant-side two-layer GCN and SGC models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, DenseMatrix, SeededRng, SparseSymMatrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Gcn,
    Sgc,
}

impl GnnKind {
    pub fn name(self) -> &'static str {
        match self {
            GnnKind::Gcn => "gcn",
            GnnKind::Sgc => "sgc",
        }
    }
}

impl std::str::FromStr for GnnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(GnnKind::Gcn),
            "sgc" => Ok(GnnKind::Sgc),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Two-layer graph model without biases.
///
/// GCN computes `Ã ReLU(Ã X W0) W1` and SGC computes `Ã Ã X W0 W1`, where
/// `Ã` is the renormalised adjacency recomputed from the raw adjacency on
/// every pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    kind: GnnKind,
    w0: DenseMatrix,
    w1: DenseMatrix,
}

/// Tape handles of the two weight matrices.
#[derive(Clone, Copy, Debug)]
pub struct LocalVars {
    pub w0: Var,
    pub w1: Var,
}

impl LocalModel {
    pub fn new(kind: GnnKind, in_dim: usize, hidden: usize, embed_dim: usize, rng: &mut SeededRng) -> Self {
        let w0 = DenseMatrix::glorot_uniform(in_dim, hidden, rng);
        let w1 = DenseMatrix::glorot_uniform(hidden, embed_dim, rng);
        Self { kind, w0, w1 }
    }

    pub fn from_weights(kind: GnnKind, w0: DenseMatrix, w1: DenseMatrix) -> Result<Self> {
        if w0.cols() != w1.rows() {
            return Err(Error::shape(
                "LocalModel::from_weights",
                format!("W1 with {} rows", w0.cols()),
                format!("{} rows", w1.rows()),
            ));
        }
        Ok(Self { kind, w0, w1 })
    }

    pub fn kind(&self) -> GnnKind {
        self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.w0.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w0.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn w0(&self) -> &DenseMatrix {
        &self.w0
    }

    pub fn w1(&self) -> &DenseMatrix {
        &self.w1
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite() && self.w1.is_finite()
    }

    fn check_inputs(&self, adjacency: &SparseSymMatrix, features: &DenseMatrix) -> Result<()> {
        if features.cols() != self.in_dim() {
            return Err(Error::shape(
                "LocalModel::forward",
                format!("{} feature columns", self.in_dim()),
                features.cols().to_string(),
            ));
        }
        if features.rows() != adjacency.n() {
            return Err(Error::shape(
                "LocalModel::forward",
                format!("{} feature rows", adjacency.n()),
                features.rows().to_string(),
            ));
        }
        Ok(())
    }

    /// Node embeddings, `n × d`.
    pub fn forward(&self, adjacency: &SparseSymMatrix, features: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_inputs(adjacency, features)?;
        self.forward_projected(adjacency, &self.project(features)?)
    }

    /// `X W0`, the only part of the forward pass that does not depend on the
    /// adjacency.
    pub fn project(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        features.matmul(&self.w0)
    }

    /// Forward pass from a precomputed [`LocalModel::project`].
    pub fn forward_projected(&self, adjacency: &SparseSymMatrix, projected: &DenseMatrix) -> Result<DenseMatrix> {
        let norm = crate::graph::normalize(adjacency);
        let mut h = norm.spmm(projected)?;
        if self.kind == GnnKind::Gcn {
            h = h.map(|v| v.max(0.0));
        }
        norm.spmm(&h.matmul(&self.w1)?)
    }

    /// Records the forward pass on `tape` from a raw sparse adjacency node.
    pub fn trace(
        &self,
        tape: &mut Tape,
        adjacency: Var,
        features: &DenseMatrix,
        trainable: bool,
    ) -> Result<(Var, LocalVars)> {
        self.check_inputs(tape.sparse_value(adjacency), features)?;
        let (w0, w1) = if trainable {
            (tape.param(self.w0.clone()), tape.param(self.w1.clone()))
        } else {
            (tape.constant(self.w0.clone()), tape.constant(self.w1.clone()))
        };
        let x = tape.constant(features.clone());
        let xw = tape.matmul(x, w0)?;
        let out = self.trace_tail(tape, adjacency, xw, w1)?;
        Ok((out, LocalVars { w0, w1 }))
    }

    fn trace_tail(&self, tape: &mut Tape, adjacency: Var, projected: Var, w1: Var) -> Result<Var> {
        let norm = tape.normalize(adjacency)?;
        let mut h = tape.spmm(norm, projected)?;
        if self.kind == GnnKind::Gcn {
            h = tape.relu(h)?;
        }
        let hw = tape.matmul(h, w1)?;
        tape.spmm(norm, hw)
    }

    /// Forward pass with a tape kept for a later split backward step.
    pub fn begin(&self, adjacency: &SparseSymMatrix, features: &DenseMatrix) -> Result<LocalPass> {
        let mut tape = Tape::new();
        let a = tape.sparse_constant(adjacency.clone());
        let (out, vars) = self.trace(&mut tape, a, features, true)?;
        Ok(LocalPass { tape, out, vars })
    }

    /// One Adam update with gradients `[∂W0, ∂W1]`.
    pub fn apply_gradients(&mut self, grads: &[DenseMatrix; 2], adam: &mut AdamState) -> Result<()> {
        adam.step(&mut [&mut self.w0, &mut self.w1], &[&grads[0], &grads[1]])
    }

    pub fn adam(&self, config: crate::numerics::AdamConfig) -> AdamState {
        AdamState::for_params(config, &[&self.w0, &self.w1])
    }
}

/// A recorded forward pass awaiting the server's gradient.
pub struct LocalPass {
    tape: Tape,
    out: Var,
    vars: LocalVars,
}

impl LocalPass {
    pub fn embedding(&self) -> &DenseMatrix {
        self.tape.value(self.out)
    }

    /// Parameter gradients for an upstream gradient on the embeddings.
    pub fn gradients(&self, upstream: DenseMatrix) -> Result<[DenseMatrix; 2]> {
        let g = self.tape.backward_from(self.out, upstream)?;
        Ok([
            g.dense_or_zeros(self.vars.w0, &self.tape),
            g.dense_or_zeros(self.vars.w1, &self.tape),
        ])
    }
}

/// Split-learning update: back-propagates `upstream = ∂L/∂h_local` through the
/// local model and takes one Adam step.
pub fn local_step(
    model: &mut LocalModel,
    adjacency: &SparseSymMatrix,
    features: &DenseMatrix,
    upstream: DenseMatrix,
    adam: &mut AdamState,
) -> Result<()> {
    let pass = model.begin(adjacency, features)?;
    let grads = pass.gradients(upstream)?;
    model.apply_gradients(&grads, adam)
}

/// Gradient of a loss with respect to both directed entries of a node pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGradient {
    pub u: usize,
    pub v: usize,
    /// `∂L/∂A[u][v]`
    pub uv: f64,
    /// `∂L/∂A[v][u]`
    pub vu: f64,
}

impl PairGradient {
    /// `(g + gᵀ) / 2` at this pair.
    pub fn symmetric(&self) -> f64 {
        0.5 * (self.uv + self.vu)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyGradient {
    pub loss: f64,
    pub pairs: Vec<PairGradient>,
}

/// A frozen model bound to fixed features, for repeated evaluation and
/// adjacency differentiation under different adjacencies.
#[derive(Clone, Debug)]
pub struct AdjacencyProbe<'a> {
    model: &'a LocalModel,
    projected: DenseMatrix,
}

impl<'a> AdjacencyProbe<'a> {
    pub fn new(model: &'a LocalModel, features: &DenseMatrix) -> Result<Self> {
        if features.cols() != model.in_dim() {
            return Err(Error::shape(
                "AdjacencyProbe::new",
                format!("{} feature columns", model.in_dim()),
                features.cols().to_string(),
            ));
        }
        Ok(Self {
            model,
            projected: model.project(features)?,
        })
    }

    pub fn model(&self) -> &LocalModel {
        self.model
    }

    pub fn embeddings(&self, adjacency: &SparseSymMatrix) -> Result<DenseMatrix> {
        self.check_n(adjacency)?;
        self.model.forward_projected(adjacency, &self.projected)
    }

    fn check_n(&self, adjacency: &SparseSymMatrix) -> Result<()> {
        if adjacency.n() != self.projected.rows() {
            return Err(Error::shape(
                "AdjacencyProbe",
                format!("{} nodes", self.projected.rows()),
                adjacency.n().to_string(),
            ));
        }
        Ok(())
    }

    /// Evaluates `loss_fn` on the embeddings and differentiates it with
    /// respect to `A[u][v]` and `A[v][u]` for every candidate pair, through
    /// the normalisation including its degree terms.
    pub fn gradient<F>(
        &self,
        adjacency: &SparseSymMatrix,
        candidates: &[(usize, usize)],
        loss_fn: F,
    ) -> Result<AdjacencyGradient>
    where
        F: FnOnce(&mut Tape, Var) -> Result<Var>,
    {
        self.check_n(adjacency)?;
        let mut tape = Tape::new();
        let a = tape.sparse_param(adjacency.clone(), candidates)?;
        let xw = tape.constant(self.projected.clone());
        let w1 = tape.constant(self.model.w1.clone());
        let emb = self.model.trace_tail(&mut tape, a, xw, w1)?;
        let loss = loss_fn(&mut tape, emb)?;
        let grads = tape.backward(loss)?;
        let pairs = candidates
            .iter()
            .map(|&(u, v)| PairGradient {
                u,
                v,
                uv: grads.sparse_entry(a, u, v).unwrap_or(0.0),
                vu: grads.sparse_entry(a, v, u).unwrap_or(0.0),
            })
            .collect();
        Ok(AdjacencyGradient {
            loss: tape.scalar(loss),
            pairs,
        })
    }
}

/// One-shot form of [`AdjacencyProbe::gradient`].
pub fn grad_wrt_adjacency<F>(
    model: &LocalModel,
    adjacency: &SparseSymMatrix,
    features: &DenseMatrix,
    candidates: &[(usize, usize)],
    loss_fn: F,
) -> Result<AdjacencyGradient>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    AdjacencyProbe::new(model, features)?.gradient(adjacency, candidates, loss_fn)
}
