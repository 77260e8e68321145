//! Simulator for GNN-based vertical federated learning (GVFL) and structural
//! attacks against it.
//!
//! Participants hold vertical shards (feature columns and, optionally, edges)
//! of one graph, embed nodes with a local two-layer GNN and upload the
//! embeddings to a server that classifies their concatenation. The
//! [`fraudster`] module implements an attack by one malicious participant that
//! steals the other participants' embeddings through the server's probability
//! API, trains a shadow server, perturbs the stolen embeddings with sign noise
//! and then flips one or more of its own edges so its local embedding of a
//! target node moves toward the perturbed one.

pub mod attack;
pub mod baselines;
pub mod checkpoint;
pub mod defense;
pub mod error;
pub mod eval;
pub mod federation;
pub mod fraudster;
pub mod graph;
pub mod local;
pub mod mlp;
pub mod numerics;

pub use error::{Error, Result};
pub use attack::{AttackConfig, AttackMethod, AttackReport, CandidateMode, FlipScore, TargetOutcome};
pub use defense::{DefenseConfig, DefenseKind};
pub use eval::{AggregateRow, MarginRecord, RunSummary, TargetSelection};
pub use federation::{GvflSystem, ProbabilityApi, ServerModel, TrainConfig};
pub use graph::{Graph, PartitionMode, SbmConfig, SplitSpec, VerticalPartition};
pub use local::{GnnKind, LocalModel};
pub use numerics::{DenseMatrix, SeededRng, SparseSymMatrix};
