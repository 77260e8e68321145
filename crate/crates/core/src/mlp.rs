//! Fully connected ReLU networks used for the server, the shadow server, the
//! generative regression network and surrogate heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{row_softmax, AdamState, DenseMatrix, Gradients, SeededRng, Tape, Var};

/// `x → ReLU(x W_0 + b_0) → … → x W_L + b_L`; the last layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    weights: Vec<DenseMatrix>,
    biases: Vec<DenseMatrix>,
}

/// Tape handles of one traced [`Mlp`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases for `widths = [in, h_1, …, out]`.
    pub fn new(widths: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "MLP widths must have at least two positive entries, got {widths:?}"
            )));
        }
        let weights = widths
            .windows(2)
            .map(|w| DenseMatrix::glorot_uniform(w[0], w[1], rng))
            .collect();
        let biases = widths[1..].iter().map(|&w| DenseMatrix::zeros(1, w)).collect();
        Ok(Self { weights, biases })
    }

    pub fn from_layers(weights: Vec<DenseMatrix>, biases: Vec<DenseMatrix>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidArgument(
                "MLP needs one bias per weight matrix and at least one layer".into(),
            ));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if b.shape() != (1, w.cols()) {
                return Err(Error::shape("Mlp::from_layers", format!("1×{}", w.cols()), format!("{:?}", b.shape())));
            }
            if l > 0 && weights[l - 1].cols() != w.rows() {
                return Err(Error::shape(
                    "Mlp::from_layers",
                    format!("{} input rows in layer {l}", weights[l - 1].cols()),
                    w.rows().to_string(),
                ));
            }
        }
        Ok(Self { weights, biases })
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.weights[0].rows())
            .chain(self.weights.iter().map(DenseMatrix::cols))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].cols()
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[DenseMatrix] {
        &self.biases
    }

    /// Output-layer responses for each row of `x`.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("Mlp::forward", format!("{} columns", self.input_dim()), x.cols().to_string()));
        }
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w)?;
            for r in 0..h.rows() {
                for (v, &bias) in h.row_mut(r).iter_mut().zip(b.as_slice()) {
                    *v += bias;
                    if l < last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(h)
    }

    /// Row-wise softmax of [`Mlp::forward`].
    pub fn probabilities(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(row_softmax(&self.forward(x)?))
    }

    /// Records the forward pass on `tape`. Parameters become trainable leaves
    /// when `trainable`, constants otherwise.
    pub fn trace(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<(Var, MlpVars)> {
        let leaf = |tape: &mut Tape, m: &DenseMatrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let mut vars = MlpVars {
            weights: Vec::with_capacity(self.weights.len()),
            biases: Vec::with_capacity(self.weights.len()),
        };
        let last = self.weights.len() - 1;
        let mut h = x;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = leaf(tape, w);
            let bv = leaf(tape, b);
            h = tape.matmul(h, wv)?;
            h = tape.add_row(h, bv)?;
            if l < last {
                h = tape.relu(h)?;
            }
            vars.weights.push(wv);
            vars.biases.push(bv);
        }
        Ok((h, vars))
    }

    /// Fresh Adam state covering every parameter.
    pub fn adam(&self, config: crate::numerics::AdamConfig) -> AdamState {
        let params: Vec<&DenseMatrix> = self.weights.iter().chain(&self.biases).collect();
        AdamState::for_params(config, &params)
    }

    /// One Adam update from the gradients of a traced pass.
    pub fn apply_gradients(
        &mut self,
        vars: &MlpVars,
        grads: &Gradients,
        tape: &Tape,
        adam: &mut AdamState,
    ) -> Result<()> {
        let g: Vec<DenseMatrix> = vars
            .weights
            .iter()
            .chain(&vars.biases)
            .map(|&v| grads.dense_or_zeros(v, tape))
            .collect();
        self.step(&g, adam)
    }

    /// One Adam update from gradients ordered as all weights, then all biases.
    pub fn step(&mut self, grads: &[DenseMatrix], adam: &mut AdamState) -> Result<()> {
        let g_refs: Vec<&DenseMatrix> = grads.iter().collect();
        let mut params: Vec<&mut DenseMatrix> = self.weights.iter_mut().chain(self.biases.iter_mut()).collect();
        adam.step(&mut params, &g_refs)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(DenseMatrix::is_finite)
    }
}

impl MlpVars {
    pub fn weights(&self) -> &[Var] {
        &self.weights
    }

    pub fn biases(&self) -> &[Var] {
        &self.biases
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::AdamConfig;
    use rand::Rng;

    fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn widths_round_trip() {
        let m = Mlp::new(&[32, 512, 256, 16], &mut SeededRng::new(0)).unwrap();
        assert_eq!(m.widths(), vec![32, 512, 256, 16]);
        assert!(Mlp::new(&[3], &mut SeededRng::new(0)).is_err());
        assert!(Mlp::new(&[3, 0, 2], &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn trace_matches_forward() {
        let mut rng = SeededRng::new(1);
        let m = Mlp::new(&[5, 7, 3], &mut rng).unwrap();
        let x = random(4, 5, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (out, _) = m.trace(&mut tape, xv, true).unwrap();
        let direct = m.forward(&x).unwrap();
        for (a, b) in tape.value(out).as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed);
            let m = Mlp::new(&[4, 6, 3], &mut rng).unwrap();
            let x = random(3, 4, &mut rng);
            let labels = [0, 2, 1];
            let loss = |x: &DenseMatrix| {
                crate::numerics::cross_entropy(&m.probabilities(x).unwrap(), &labels, &[0, 1, 2]).unwrap()
            };
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let (logits, _) = m.trace(&mut tape, xv, false).unwrap();
            let l = tape.softmax_cross_entropy(logits, &labels, &[0, 1, 2]).unwrap();
            let g = tape.backward(l).unwrap().dense(xv).unwrap().clone();
            let h = 1e-6;
            for i in 0..3 {
                for j in 0..4 {
                    let mut p = x.clone();
                    p.set(i, j, x.get(i, j) + h);
                    let mut q = x.clone();
                    q.set(i, j, x.get(i, j) - h);
                    let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                    let an = g.get(i, j);
                    assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "seed {seed}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn fits_xor() {
        let mut rng = SeededRng::new(3);
        let mut m = Mlp::new(&[2, 16, 2], &mut rng).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let labels = [0, 1, 1, 0];
        let mut adam = m.adam(AdamConfig::with_lr(0.05));
        for _ in 0..500 {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let (out, vars) = m.trace(&mut tape, xv, true).unwrap();
            let l = tape.softmax_cross_entropy(out, &labels, &[0, 1, 2, 3]).unwrap();
            let g = tape.backward(l).unwrap();
            m.apply_gradients(&vars, &g, &tape, &mut adam).unwrap();
        }
        let p = m.probabilities(&x).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            assert_eq!(p.argmax_row(i), y);
        }
    }
}
