//! In-process vertical federation: participants embed their shards, the
//! server classifies the concatenated embeddings, and training runs by split
//! back-propagation.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ParamDump;
use crate::defense::{laplace_noise, topk_filter, topk_mask, DefenseConfig, DefenseKind};
use crate::error::{Error, Result};
use crate::eval::is_correct;
use crate::graph::{Graph, SplitSpec, VerticalPartition};
use crate::local::{GnnKind, LocalModel, LocalPass};
use crate::mlp::Mlp;
use crate::numerics::{AdamConfig, DenseMatrix, SeededRng, SparseSymMatrix, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: GnnKind,
    pub hidden: usize,
    /// Local embedding width `d`.
    pub embed_dim: usize,
    /// Hidden widths of the server MLP.
    pub server_hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: GnnKind::Gcn,
            hidden: 32,
            embed_dim: 16,
            server_hidden: vec![32],
            epochs: 200,
            lr: 0.01,
        }
    }
}

/// Server classifier: an MLP over `K·d` inputs followed by a row softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerModel {
    mlp: Mlp,
}

impl ServerModel {
    pub fn new(input: usize, hidden: &[usize], classes: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(&server_widths(input, hidden, classes), rng)?,
        })
    }

    pub fn from_mlp(mlp: Mlp) -> Self {
        Self { mlp }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn predict(&self, h_global: &DenseMatrix) -> Result<DenseMatrix> {
        self.mlp.probabilities(h_global)
    }
}

/// `[input, hidden…, classes]`.
pub fn server_widths(input: usize, hidden: &[usize], classes: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(classes))
        .collect()
}

/// Query-only handle on a trained server.
///
/// The handle has no way to reach the server's parameters:
///
/// ```compile_fail
/// fn leak(api: &gvfl::federation::ProbabilityApi<'_>) {
///     let _ = api.server.mlp();
/// }
/// ```
pub struct ProbabilityApi<'a> {
    server: &'a ServerModel,
    queries: AtomicUsize,
}

impl<'a> ProbabilityApi<'a> {
    pub fn new(server: &'a ServerModel) -> Self {
        Self {
            server,
            queries: AtomicUsize::new(0),
        }
    }

    /// Class probabilities for each row of `h_global`.
    pub fn predict(&self, h_global: &DenseMatrix) -> Result<DenseMatrix> {
        if h_global.cols() != self.server.input_dim() {
            return Err(Error::shape(
                "ProbabilityApi::predict",
                format!("{} columns", self.server.input_dim()),
                h_global.cols().to_string(),
            ));
        }
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.server.predict(h_global)
    }

    pub fn input_dim(&self) -> usize {
        self.server.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.server.num_classes()
    }

    /// Number of `predict` calls answered so far.
    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }
}

/// Column-wise concatenation in participant order.
pub fn concat_embeddings(parts: &[&DenseMatrix]) -> Result<DenseMatrix> {
    if parts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 participant embeddings, got {}",
            parts.len()
        )));
    }
    DenseMatrix::hstack(parts)
}

/// One participant's private state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub model: LocalModel,
    pub features: DenseMatrix,
    pub adjacency: SparseSymMatrix,
}

/// Per-epoch training trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub losses: Vec<f64>,
}

/// Gradients of one full-batch step.
struct StepGradients {
    loss: f64,
    server: Vec<DenseMatrix>,
    local: Vec<[DenseMatrix; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GvflSystem {
    participants: Vec<Participant>,
    server: ServerModel,
    split: SplitSpec,
    labels: Vec<usize>,
    config: TrainConfig,
    defense: DefenseConfig,
    /// Laplace noise added to each participant's inference uploads.
    inference_noise: Vec<DenseMatrix>,
    /// Clean local embeddings of the trained models.
    embeddings: Vec<DenseMatrix>,
    /// Server probabilities on the trained uploads.
    probabilities: DenseMatrix,
    trained: bool,
}

impl GvflSystem {
    /// Builds an untrained system over a partitioned graph.
    pub fn new(
        graph: &Graph,
        partition: &VerticalPartition,
        split: SplitSpec,
        config: TrainConfig,
        defense: DefenseConfig,
        rng: &SeededRng,
    ) -> Result<Self> {
        let k = partition.k();
        let participants = (0..k)
            .map(|m| {
                let features = partition.features(graph, m)?;
                let mut init = rng.named(&format!("participant-{m}"));
                let model = LocalModel::new(config.kind, features.cols(), config.hidden, config.embed_dim, &mut init);
                Ok(Participant {
                    model,
                    features,
                    adjacency: partition.adjacency(m).clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let server = ServerModel::new(
            k * config.embed_dim,
            &config.server_hidden,
            graph.num_classes(),
            &mut rng.named("server"),
        )?;
        Self::from_parts(participants, server, split, graph.labels().to_vec(), config, defense)
    }

    pub fn from_parts(
        participants: Vec<Participant>,
        server: ServerModel,
        split: SplitSpec,
        labels: Vec<usize>,
        config: TrainConfig,
        defense: DefenseConfig,
    ) -> Result<Self> {
        let k = participants.len();
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 participants, got {k}")));
        }
        let n = labels.len();
        let d = participants[0].model.embed_dim();
        for (m, p) in participants.iter().enumerate() {
            if p.adjacency.n() != n || p.features.rows() != n || p.model.embed_dim() != d {
                return Err(Error::shape(
                    "GvflSystem::from_parts",
                    format!("{n} nodes and width {d}"),
                    format!(
                        "participant {m}: {} nodes, {} feature rows, width {}",
                        p.adjacency.n(),
                        p.features.rows(),
                        p.model.embed_dim()
                    ),
                ));
            }
            if p.features.cols() != p.model.in_dim() {
                return Err(Error::shape(
                    "GvflSystem::from_parts",
                    format!("{} feature columns", p.model.in_dim()),
                    p.features.cols().to_string(),
                ));
            }
        }
        if server.input_dim() != k * d {
            return Err(Error::shape("GvflSystem::from_parts", format!("server input {}", k * d), server.input_dim().to_string()));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= server.num_classes()) {
            return Err(Error::ClassOutOfRange {
                class: c,
                num_classes: server.num_classes(),
            });
        }
        if split.train.is_empty() {
            return Err(Error::InvalidArgument("training split is empty".into()));
        }
        defense.validate(d)?;
        let probabilities = DenseMatrix::zeros(n, server.num_classes());
        Ok(Self {
            participants,
            server,
            split,
            labels,
            config,
            defense,
            inference_noise: Vec::new(),
            embeddings: Vec::new(),
            probabilities,
            trained: false,
        })
    }

    pub fn k(&self) -> usize {
        self.participants.len()
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.participants[0].model.embed_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.server.num_classes()
    }

    pub fn participant(&self, m: usize) -> &Participant {
        &self.participants[m]
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn server(&self) -> &ServerModel {
        &self.server
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn defense(&self) -> &DefenseConfig {
        &self.defense
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Column range of participant `m` in the global embedding.
    pub fn slice(&self, m: usize) -> std::ops::Range<usize> {
        let d = self.embed_dim();
        m * d..(m + 1) * d
    }

    /// Server widths, which the threat model treats as public.
    pub fn server_widths(&self) -> Vec<usize> {
        self.server.mlp().widths()
    }

    pub fn api(&self) -> ProbabilityApi<'_> {
        ProbabilityApi::new(&self.server)
    }

    fn require_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::InvalidArgument("system has not been trained".into()))
        }
    }

    /// Probabilities returned at the end of training for every node.
    pub fn probabilities(&self) -> &DenseMatrix {
        &self.probabilities
    }

    /// Clean local embeddings of every participant.
    pub fn embeddings(&self) -> &[DenseMatrix] {
        &self.embeddings
    }

    fn step_gradients(&self, dp_rng: Option<&mut SeededRng>) -> Result<StepGradients> {
        let passes: Vec<LocalPass> = self
            .participants
            .iter()
            .map(|p| p.model.begin(&p.adjacency, &p.features))
            .collect::<Result<_>>()?;
        let mut uploads: Vec<DenseMatrix> = passes.iter().map(|p| p.embedding().clone()).collect();
        let mut masks: Vec<Option<DenseMatrix>> = vec![None; uploads.len()];
        match self.defense.kind {
            DefenseKind::Dp => {
                if let Some(rng) = dp_rng {
                    for h in uploads.iter_mut() {
                        *h = h.add(&laplace_noise(h.rows(), h.cols(), self.defense.beta, rng)?)?;
                    }
                }
            }
            DefenseKind::Topk => {
                for (h, mask) in uploads.iter_mut().zip(masks.iter_mut()) {
                    let m = topk_mask(h, self.defense.k, self.defense.topk_abs)?;
                    *h = h.zip_map(&m, |a, b| a * b);
                    *mask = Some(m);
                }
            }
            DefenseKind::None => {}
        }
        let refs: Vec<&DenseMatrix> = uploads.iter().collect();
        let mut tape = Tape::new();
        let h = tape.param(concat_embeddings(&refs)?);
        let (logits, vars) = self.server.mlp.trace(&mut tape, h, true)?;
        let loss = tape.softmax_cross_entropy(logits, &self.labels, &self.split.train)?;
        let loss_value = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        let server = vars
            .weights()
            .iter()
            .chain(vars.biases())
            .map(|&v| grads.dense_or_zeros(v, &tape))
            .collect();
        let g_h = grads.dense_or_zeros(h, &tape);
        let local = passes
            .iter()
            .enumerate()
            .map(|(m, pass)| {
                let r = self.slice(m);
                let mut g = g_h.slice_cols(r.start, r.end)?;
                if let Some(mask) = &masks[m] {
                    g = g.zip_map(mask, |a, b| a * b);
                }
                pass.gradients(g)
            })
            .collect::<Result<_>>()?;
        Ok(StepGradients {
            loss: loss_value,
            server,
            local,
        })
    }

    /// Full-batch joint training by split back-propagation, then computes the
    /// final embeddings and server probabilities.
    pub fn train(&mut self, rng: &SeededRng) -> Result<TrainRecord> {
        let adam_cfg = AdamConfig::with_lr(self.config.lr);
        let mut server_adam = self.server.mlp.adam(adam_cfg);
        let mut local_adam: Vec<_> = self.participants.iter().map(|p| p.model.adam(adam_cfg)).collect();
        let mut dp_rng = rng.named("dp-train");
        let noisy_training = self.defense.kind == DefenseKind::Dp && self.defense.dp_in_training;
        let mut record = TrainRecord::default();
        for epoch in 0..self.config.epochs {
            let step = self.step_gradients(noisy_training.then_some(&mut dp_rng))?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: step.loss,
                });
            }
            record.losses.push(step.loss);
            self.server.mlp.step(&step.server, &mut server_adam)?;
            for ((p, grads), adam) in self.participants.iter_mut().zip(&step.local).zip(&mut local_adam) {
                p.model.apply_gradients(grads, adam)?;
            }
            if epoch % 50 == 0 {
                debug!("epoch {epoch}: train loss {:.4}", step.loss);
            }
        }
        if !self.server.mlp.is_finite() || self.participants.iter().any(|p| !p.model.is_finite()) {
            return Err(Error::Diverged {
                epoch: self.config.epochs,
                loss: f64::NAN,
            });
        }
        self.finalize(rng)?;
        Ok(record)
    }

    /// Computes clean embeddings, draws inference noise and stores the
    /// end-of-training probabilities. Called by [`GvflSystem::train`]; also
    /// usable for systems assembled from already trained parts.
    pub fn finalize(&mut self, rng: &SeededRng) -> Result<()> {
        self.embeddings = self
            .participants
            .iter()
            .map(|p| p.model.forward(&p.adjacency, &p.features))
            .collect::<Result<_>>()?;
        self.inference_noise = if self.defense.kind == DefenseKind::Dp {
            let mut noise_rng = rng.named("dp-inference");
            let (n, d) = (self.n(), self.embed_dim());
            (0..self.k())
                .map(|_| laplace_noise(n, d, self.defense.beta, &mut noise_rng))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        self.trained = true;
        self.probabilities = self.predict_with(&[])?;
        Ok(())
    }

    /// Applies the inference-time defense to participant `m`'s raw local
    /// embeddings `h` (all nodes).
    pub fn upload(&self, m: usize, h: &DenseMatrix) -> Result<DenseMatrix> {
        match self.defense.kind {
            DefenseKind::None => Ok(h.clone()),
            DefenseKind::Dp => h.add(&self.inference_noise[m]),
            DefenseKind::Topk if self.defense.topk_abs => {
                let mask = topk_mask(h, self.defense.k, true)?;
                Ok(h.zip_map(&mask, |a, b| a * b))
            }
            DefenseKind::Topk => topk_filter(h, self.defense.k),
        }
    }

    /// Row form of [`GvflSystem::upload`] for node `v`.
    pub fn upload_row(&self, m: usize, v: usize, row: &[f64]) -> Result<Vec<f64>> {
        let h = DenseMatrix::from_vec(1, row.len(), row.to_vec())?;
        let out = match self.defense.kind {
            DefenseKind::Dp => {
                let noise = &self.inference_noise[m];
                return Ok(row.iter().zip(noise.row(v)).map(|(a, b)| a + b).collect());
            }
            _ => self.upload(m, &h)?,
        };
        Ok(out.into_vec())
    }

    /// Global upload after the defense, with participant embeddings replaced
    /// by `overrides` where given.
    pub fn global_upload(&self, overrides: &[(usize, &DenseMatrix)]) -> Result<DenseMatrix> {
        self.require_trained()?;
        let parts = (0..self.k())
            .map(|m| {
                let raw = overrides
                    .iter()
                    .find(|(i, _)| *i == m)
                    .map(|(_, h)| *h)
                    .unwrap_or(&self.embeddings[m]);
                self.upload(m, raw)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&DenseMatrix> = parts.iter().collect();
        concat_embeddings(&refs)
    }

    /// Server probabilities for every node, with optional raw-embedding
    /// overrides per participant.
    pub fn predict_with(&self, overrides: &[(usize, &DenseMatrix)]) -> Result<DenseMatrix> {
        self.server.predict(&self.global_upload(overrides)?)
    }

    /// Server probabilities for node `v` when participant `m` uploads the raw
    /// embedding `row` for it instead of its clean one.
    pub fn predict_row_with(&self, v: usize, m: usize, row: &[f64]) -> Result<Vec<f64>> {
        self.require_trained()?;
        let mut global = Vec::with_capacity(self.k() * self.embed_dim());
        for i in 0..self.k() {
            let raw = if i == m { row } else { self.embeddings[i].row(v) };
            global.extend(self.upload_row(i, v, raw)?);
        }
        let h = DenseMatrix::from_vec(1, global.len(), global)?;
        Ok(self.server.predict(&h)?.into_vec())
    }

    /// Fraction of `nodes` classified correctly.
    pub fn accuracy(&self, nodes: &[usize], overrides: &[(usize, &DenseMatrix)]) -> Result<f64> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("accuracy over an empty node set".into()));
        }
        let probs = if overrides.is_empty() {
            self.probabilities.clone()
        } else {
            self.predict_with(overrides)?
        };
        let mut correct = 0;
        for &v in nodes {
            if is_correct(probs.row(v), self.labels[v])? {
                correct += 1;
            }
        }
        Ok(correct as f64 / nodes.len() as f64)
    }

    /// Test accuracy.
    pub fn test_accuracy(&self) -> Result<f64> {
        self.require_trained()?;
        self.accuracy(&self.split.test, &[])
    }

    /// `C_i = acc_i / Σ_j acc_j`, where `acc_i` is the test accuracy with every
    /// slice except participant `i`'s zero-filled.
    pub fn contribution(&self) -> Result<Vec<f64>> {
        self.require_trained()?;
        let full = self.global_upload(&[])?;
        let mut accs = Vec::with_capacity(self.k());
        for i in 0..self.k() {
            let keep = self.slice(i);
            let h = DenseMatrix::from_fn(full.rows(), full.cols(), |r, c| {
                if keep.contains(&c) {
                    full.get(r, c)
                } else {
                    0.0
                }
            });
            let probs = self.server.predict(&h)?;
            let correct = self
                .split
                .test
                .iter()
                .filter(|&&v| is_correct(probs.row(v), self.labels[v]).unwrap_or(false))
                .count();
            accs.push(correct as f64 / self.split.test.len().max(1) as f64);
        }
        let total: f64 = accs.iter().sum();
        if total == 0.0 {
            return Err(Error::InvalidArgument("every single-participant accuracy is zero".into()));
        }
        Ok(accs.into_iter().map(|a| a / total).collect())
    }

    /// Writes `server.params` and `participant-{m}.params` into `dir`.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ParamDump::from(&self.server.mlp).write(dir.join("server.params"))?;
        for (m, p) in self.participants.iter().enumerate() {
            ParamDump::from(&p.model).write(dir.join(format!("participant-{m}.params")))?;
        }
        Ok(())
    }
}
