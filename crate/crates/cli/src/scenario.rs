//! One experiment: for every seed, partition, train, optionally attack, and
//! collect metrics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gvfl::attack;
use gvfl::checkpoint::write_atomic;
use gvfl::eval::{aggregate, aggregate_csv, export_embeddings, margins, select_targets, write_margins_csv};
use gvfl::graph::{make_split, partition};
use gvfl::local::AdjacencyProbe;
use gvfl::{AggregateRow, AttackReport, Graph, GvflSystem, RunSummary, SeededRng, TargetSelection};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Everything recorded for one seed; serialised as `seed-<seed>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub summary: RunSummary,
    pub train_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<TargetSelection>,
    /// Attack report restricted to the selected targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioOutput {
    pub results: Vec<SeedResult>,
    pub aggregate: Vec<AggregateRow>,
}

/// Trained system for one seed, before any attack.
pub struct TrainedRun {
    pub seed: u64,
    pub rng: SeededRng,
    pub system: GvflSystem,
    pub train_losses: Vec<f64>,
}

/// Metrics of one attack on one trained system.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackRun {
    pub targets: TargetSelection,
    pub report: AttackReport,
    pub metrics: BTreeMap<String, f64>,
}

pub fn result_key(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let method = cfg.attack.as_ref().map_or("clean", |a| a.method.name());
    [
        ("dataset", cfg.dataset_label()),
        ("model", cfg.training.kind.name().to_string()),
        ("participants", cfg.federation.participants.to_string()),
        ("defense", cfg.defense.kind.name().to_string()),
        ("method", method.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Partitions, splits and trains the federation for `seed`.
pub fn train_seed(cfg: &ExperimentConfig, graph: &Graph, seed: u64) -> Result<TrainedRun> {
    let rng = SeededRng::new(seed);
    let part = partition(
        graph,
        cfg.federation.participants,
        cfg.federation.partition,
        &mut rng.named("partition"),
    )?;
    let mut split_rng = match cfg.split_seed {
        Some(s) => SeededRng::new(s).named("split"),
        None => rng.named("split"),
    };
    let split = make_split(graph, &mut split_rng, cfg.split.per_class_train, cfg.split.val, cfg.split.test)?;
    let mut system = GvflSystem::new(graph, &part, split, cfg.training.clone(), cfg.defense.clone(), &rng)?;
    let record = system.train(&rng)?;
    Ok(TrainedRun {
        seed,
        rng,
        system,
        train_losses: record.losses,
    })
}

/// Selects targets on the trained system and attacks them (and, if
/// configured, every test node) with `attack_cfg`.
pub fn attack_seed(cfg: &ExperimentConfig, run: &TrainedRun, attack_cfg: &gvfl::AttackConfig) -> Result<AttackRun> {
    let system = &run.system;
    let test = &system.split().test;
    let targets = select_targets(
        system.probabilities(),
        system.labels(),
        test,
        &mut run.rng.named("targets"),
    )?;
    let selected = targets.all();
    let nodes = if cfg.evaluation.all_test_nodes { test.clone() } else { selected.clone() };
    let attack_rng = run.rng.named(&format!("attack-{}", attack_cfg.method.name()));
    let mut report = attack::run(system, cfg.federation.malicious, &nodes, attack_cfg, &attack_rng)?;

    let mut metrics = BTreeMap::new();
    if cfg.evaluation.all_test_nodes {
        metrics.insert("test_accuracy_after".into(), report.accuracy_after);
        let by_node: BTreeMap<usize, _> = report.targets.drain(..).map(|t| (t.node, t)).collect();
        report.targets = selected.iter().map(|v| by_node[v].clone()).collect();
    }
    let n = report.targets.len().max(1) as f64;
    report.accuracy_before = report.targets.iter().filter(|t| t.correct_before()).count() as f64 / n;
    report.accuracy_after = report.targets.iter().filter(|t| t.correct_after()).count() as f64 / n;
    metrics.insert("target_accuracy_before".into(), report.accuracy_before);
    metrics.insert("target_accuracy_after".into(), report.accuracy_after);
    metrics.insert("targets".into(), report.targets.len() as f64);
    if let Some(s) = &report.stealing {
        metrics.insert("grn_loss_ratio".into(), s.grn_final_loss / s.grn_initial_loss);
        metrics.insert("shadow_agreement".into(), s.shadow_agreement);
    }
    if let Some(s) = &report.surrogate {
        metrics.insert("surrogate_agreement".into(), s.agreement);
    }
    Ok(AttackRun {
        targets,
        report,
        metrics,
    })
}

/// Runs one seed end to end. Per-seed side artifacts (margins, optional
/// embeddings and checkpoints) go to `artifacts` when given.
pub fn run_seed(cfg: &ExperimentConfig, graph: &Graph, seed: u64, artifacts: Option<&Path>) -> Result<SeedResult> {
    let run = train_seed(cfg, graph, seed)?;
    let system = &run.system;
    let mut metrics = BTreeMap::new();
    metrics.insert("clean_accuracy".to_string(), system.test_accuracy()?);
    let attacked = match &cfg.attack {
        Some(a) => Some(attack_seed(cfg, &run, a)?),
        None => None,
    };
    if let Some(a) = &attacked {
        metrics.extend(a.metrics.clone());
    }
    info!(
        "seed {seed}: clean accuracy {:.4}{}",
        metrics["clean_accuracy"],
        metrics
            .get("test_accuracy_after")
            .or(metrics.get("target_accuracy_after"))
            .map(|a| format!(", attacked {a:.4}"))
            .unwrap_or_default()
    );

    if let Some(dir) = artifacts {
        let records = margins(system.probabilities(), system.labels(), &system.split().test)?;
        write_margins_csv(dir.join(format!("margins-seed-{seed}.csv")), &[("clean", &records)])?;
        if cfg.output.embeddings {
            let adversarial = match &attacked {
                Some(a) => adversarial_rows(system, cfg.federation.malicious, &a.report)?,
                None => Vec::new(),
            };
            export_embeddings(
                dir.join(format!("embeddings-seed-{seed}.csv")),
                &system.global_upload(&[])?,
                system.labels(),
                &adversarial,
            )?;
        }
        if cfg.output.checkpoint {
            system.save_checkpoint(dir.join(format!("checkpoint-seed-{seed}")))?;
        }
    }

    Ok(SeedResult {
        summary: RunSummary {
            key: result_key(cfg),
            seed,
            metrics,
        },
        train_losses: run.train_losses,
        targets: attacked.as_ref().map(|a| a.targets.clone()),
        attack: attacked.map(|a| a.report),
    })
}

/// Global uploads of each attacked target after its flips.
fn adversarial_rows(system: &GvflSystem, malicious: usize, report: &AttackReport) -> Result<Vec<(usize, Vec<f64>)>> {
    let participant = system.participant(malicious);
    let probe = AdjacencyProbe::new(&participant.model, &participant.features)?;
    let clean = system.global_upload(&[])?;
    let slice = system.slice(malicious);
    report
        .targets
        .iter()
        .map(|t| {
            let mut adj = participant.adjacency.clone();
            for &(u, v) in &t.flips {
                adj = adj.toggled(u, v)?;
            }
            let emb = probe.embeddings(&adj)?;
            let mut row = clean.row(t.node).to_vec();
            row[slice.clone()].copy_from_slice(&system.upload_row(malicious, t.node, emb.row(t.node))?);
            Ok((t.node, row))
        })
        .collect()
}

/// Runs every seed on a pool of `jobs` threads (0 picks the default).
pub fn run_scenario(cfg: &ExperimentConfig, jobs: usize, artifacts: Option<&Path>) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let graph = cfg.load_graph()?;
    let stats = graph.stats();
    info!(
        "{}: {} nodes, {} edges, {} features, {} classes",
        cfg.dataset_label(),
        stats.nodes,
        stats.edges,
        stats.features,
        stats.classes
    );
    if let Some(dir) = artifacts {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
    let results = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, &graph, seed, artifacts))
            .collect::<Result<Vec<_>>>()
    })?;
    let summaries: Vec<RunSummary> = results.iter().map(|r| r.summary.clone()).collect();
    let aggregate = aggregate(&summaries)?;
    Ok(ScenarioOutput { results, aggregate })
}

pub fn seed_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}.json"))
}

/// Writes `config.toml`, `seed-<s>.json` per seed and `aggregate.csv`.
pub fn write_outputs(cfg: &ExperimentConfig, output: &ScenarioOutput, dir: &Path) -> Result<()> {
    write_atomic(dir.join("config.toml"), cfg.to_toml())?;
    for r in &output.results {
        let path = seed_file(dir, r.summary.seed);
        let mut json = serde_json::to_string_pretty(r).map_err(|source| CliError::Json {
            path: path.clone(),
            source,
        })?;
        json.push('\n');
        write_atomic(&path, json)?;
    }
    write_atomic(dir.join("aggregate.csv"), aggregate_csv(&output.aggregate))?;
    Ok(())
}

/// Runs the scenario and writes all outputs under `dir`.
pub fn run_and_write(cfg: &ExperimentConfig, jobs: usize, dir: &Path) -> Result<ScenarioOutput> {
    let output = run_scenario(cfg, jobs, Some(dir))?;
    write_outputs(cfg, &output, dir)?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(attack: Option<&str>) -> ExperimentConfig {
        let mut text = String::from(
            r#"
            name = "toy"
            seeds = [3]
            [data.synth]
            block_sizes = [40, 40, 40]
            intra_p = 0.12
            inter_p = 0.01
            feat_dim = 12
            noise = 0.6
            [split]
            per_class_train = 6
            val = 12
            test = 45
            [training]
            epochs = 60
            "#,
        );
        if let Some(method) = attack {
            text.push_str(&format!(
                "[attack]\nmethod = \"{method}\"\ngrn_iters = 20\ngrn_hidden = [32]\nshadow_iters = 60\nsurrogate_epochs = 60\n"
            ));
        }
        ExperimentConfig::from_toml(&text, Path::new("toy.toml")).unwrap()
    }

    #[test]
    fn clean_scenario_reports_accuracy() {
        let out = run_scenario(&toy(None), 1, None).unwrap();
        assert_eq!(out.results.len(), 1);
        let acc = out.results[0].summary.metrics["clean_accuracy"];
        assert!(acc > 0.5, "{acc}");
        assert_eq!(out.aggregate.len(), 1);
        assert_eq!(out.aggregate[0].std, 0.0);
    }

    #[test]
    fn attack_scenario_restricts_report_to_targets() {
        for method in ["fraudster", "rnd", "fga"] {
            let cfg = toy(Some(method));
            let out = run_scenario(&cfg, 2, None).unwrap();
            let r = &out.results[0];
            let targets = r.targets.as_ref().unwrap();
            let report = r.attack.as_ref().unwrap();
            assert_eq!(report.targets.len(), targets.len());
            assert_eq!(report.accuracy_before, 1.0);
            assert!(r.summary.metrics.contains_key("test_accuracy_after"));
            assert_eq!(r.summary.key["method"], method);
        }
    }
}
