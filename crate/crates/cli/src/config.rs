//! Experiment configuration (TOML, schema version 1).
//!
//! ```toml
//! version = 1
//! name = "cora-gcn"
//! seeds = [0, 1, 2]
//! split_seed = 0            # optional: one split shared by every seed
//!
//! [data]                    # exactly one of `dataset`, `path`, `synth`
//! dataset = "cora"          # directory under $GVFL_DATA_DIR
//!
//! [federation]
//! participants = 2
//! partition = "dual-split"  # or "feature-only"
//! malicious = 0
//!
//! [split]
//! per_class_train = 20
//! val = 500
//! test = 1000
//!
//! [training]                # local model and split-learning settings
//! kind = "gcn"
//!
//! [defense]
//! kind = "none"             # "dp" (beta) or "topk" (k)
//!
//! [attack]                  # omit for clean runs
//! method = "fraudster"
//! epsilon = 0.004
//! budget = 1
//!
//! [evaluation]
//! all_test_nodes = true     # attack every test node as well as the targets
//!
//! [output]
//! dir = "results/cora-gcn"
//! ```

use std::path::{Path, PathBuf};

use gvfl::graph::{load_graph, synth_sbm};
use gvfl::{AttackConfig, DefenseConfig, Graph, PartitionMode, SbmConfig, SeededRng, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Directory holding converted datasets referenced by `data.dataset`.
pub const DATA_DIR_ENV: &str = "GVFL_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub data: DataSource,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub split_seed: Option<u64>,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    /// Dataset directory name under `$GVFL_DATA_DIR`.
    pub dataset: Option<String>,
    /// Directory with `edges.tsv`, `features.csv`, `labels.csv`.
    pub path: Option<PathBuf>,
    pub synth: Option<SbmConfig>,
    /// Seed of the synthetic graph, shared by all runs.
    #[serde(default)]
    pub synth_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub participants: usize,
    pub partition: PartitionMode,
    pub malicious: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            participants: 2,
            partition: PartitionMode::DualSplit,
            malicious: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub per_class_train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            per_class_train: 20,
            val: 500,
            test: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Also attack every test node, not only the selected targets.
    pub all_test_nodes: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { all_test_nodes: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Write clean and adversarial global embeddings per seed.
    pub embeddings: bool,
    /// Write trained parameters per seed.
    pub checkpoint: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|source| CliError::Toml {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises to TOML")
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let sources = [self.data.dataset.is_some(), self.data.path.is_some(), self.data.synth.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return bad("data needs exactly one of `dataset`, `path` or `synth`".into());
        }
        let fed = &self.federation;
        if fed.participants < 2 {
            return bad(format!("federation.participants must be >= 2, got {}", fed.participants));
        }
        if fed.partition == PartitionMode::DualSplit && fed.participants != 2 {
            return bad("dual-split partitioning needs exactly 2 participants".into());
        }
        if fed.malicious >= fed.participants {
            return bad(format!("federation.malicious {} out of range", fed.malicious));
        }
        if self.training.embed_dim == 0 || self.training.hidden == 0 || self.training.epochs == 0 {
            return bad("training dimensions and epochs must be positive".into());
        }
        self.defense.validate(self.training.embed_dim)?;
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        Ok(())
    }

    /// Resolves the data source, checking that referenced files exist.
    pub fn data_dir(&self) -> Result<Option<PathBuf>> {
        if let Some(p) = &self.data.path {
            return Ok(Some(p.clone()));
        }
        let Some(name) = &self.data.dataset else {
            return Ok(None);
        };
        let root = std::env::var_os(DATA_DIR_ENV)
            .ok_or_else(|| CliError::Config(format!("dataset {name:?} requested but {DATA_DIR_ENV} is not set")))?;
        Ok(Some(PathBuf::from(root).join(name)))
    }

    pub fn load_graph(&self) -> Result<Graph> {
        if let Some(synth) = &self.data.synth {
            return Ok(synth_sbm(synth, &mut SeededRng::new(self.data.synth_seed))?);
        }
        let dir = self.data_dir()?.expect("validated data source");
        let files = ["edges.tsv", "features.csv", "labels.csv"].map(|f| dir.join(f));
        if let Some(missing) = files.iter().find(|f| !f.is_file()) {
            return Err(CliError::Config(format!("data file {} does not exist", missing.display())));
        }
        let [e, f, l] = files;
        Ok(load_graph(e, f, l)?)
    }

    /// Short dataset label used in result keys.
    pub fn dataset_label(&self) -> String {
        if let Some(name) = &self.data.dataset {
            name.clone()
        } else if let Some(p) = &self.data.path {
            p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "graph".into())
        } else {
            "sbm".into()
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| {
            let name = if self.name.is_empty() { "run" } else { &self.name };
            PathBuf::from("results").join(name)
        })
    }
}
