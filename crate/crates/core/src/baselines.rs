//! Baseline attacks run by the malicious participant using only its own
//! shard: random edge insertion (RND) and a gradient attack on a locally
//! trained surrogate (FGA).

use rand::seq::index::sample;

use crate::attack::{
    candidate_pairs, check_attack_inputs, evaluate_target, for_each_target, greedy_flips, AttackConfig,
    AttackMethod, AttackReport, EdgeSelection, SurrogateSummary,
};
use crate::error::{Error, Result};
use crate::federation::GvflSystem;
use crate::local::{AdjacencyProbe, LocalModel};
use crate::mlp::Mlp;
use crate::numerics::{argmax, AdamConfig, DenseMatrix, SeededRng, SparseSymMatrix, Tape};

/// Local GNN with a linear classification head, fitted to the server's
/// predicted labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub model: LocalModel,
    pub head: Mlp,
}

impl Surrogate {
    pub fn predict(&self, adjacency: &SparseSymMatrix, features: &DenseMatrix) -> Result<DenseMatrix> {
        self.head.probabilities(&self.model.forward(adjacency, features)?)
    }
}

/// Trains a fresh surrogate on `(adjacency, features)` with hard labels
/// `labels[v]` for `v ∈ train`. Returns the surrogate and the loss per epoch.
pub fn train_surrogate(
    adjacency: &SparseSymMatrix,
    features: &DenseMatrix,
    template: &LocalModel,
    labels: &[usize],
    train: &[usize],
    num_classes: usize,
    epochs: usize,
    lr: f64,
    rng: &mut SeededRng,
) -> Result<(Surrogate, Vec<f64>)> {
    if labels.len() != adjacency.n() || train.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "surrogate needs {} labels and a non-empty training set",
            adjacency.n()
        )));
    }
    let mut model = LocalModel::new(template.kind(), template.in_dim(), template.hidden(), template.embed_dim(), rng);
    let mut head = Mlp::new(&[template.embed_dim(), num_classes], rng)?;
    let mut local_adam = model.adam(AdamConfig::with_lr(lr));
    let mut head_adam = head.adam(AdamConfig::with_lr(lr));
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut tape = Tape::new();
        let a = tape.sparse_constant(adjacency.clone());
        let (emb, local_vars) = model.trace(&mut tape, a, features, true)?;
        let (logits, head_vars) = head.trace(&mut tape, emb, true)?;
        let loss = tape.softmax_cross_entropy(logits, labels, train)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, loss: value });
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        let local_grads = [
            grads.dense_or_zeros(local_vars.w0, &tape),
            grads.dense_or_zeros(local_vars.w1, &tape),
        ];
        model.apply_gradients(&local_grads, &mut local_adam)?;
        head.apply_gradients(&head_vars, &grads, &tape, &mut head_adam)?;
    }
    Ok((Surrogate { model, head }, losses))
}

/// Connects `target` to `budget` distinct random non-neighbours whose label
/// differs from `target_label`.
pub fn rnd_attack(
    adjacency: &SparseSymMatrix,
    target: usize,
    target_label: usize,
    labels: &[usize],
    budget: usize,
    rng: &mut SeededRng,
) -> Result<EdgeSelection> {
    let pool: Vec<usize> = (0..adjacency.n())
        .filter(|&u| u != target && labels[u] != target_label && !adjacency.contains(target, u))
        .collect();
    if pool.is_empty() || budget == 0 || budget > pool.len() {
        return Err(Error::Attack(format!(
            "RND needs {budget} differently labelled non-neighbours of node {target}, found {}",
            pool.len()
        )));
    }
    let mut flips: Vec<(usize, usize)> = sample(rng, pool.len(), budget)
        .into_iter()
        .map(|i| (target.min(pool[i]), target.max(pool[i])))
        .collect();
    flips.sort_unstable();
    let mut current = adjacency.clone();
    for &(u, v) in &flips {
        current = current.toggled(u, v)?;
    }
    Ok(EdgeSelection {
        adjacency: current,
        flips,
        losses: Vec::new(),
    })
}

/// Greedy flips that maximise the surrogate's cross-entropy of `label` at
/// `target`, scored by `g_sym·(1 − 2A)`.
pub fn fga_attack(
    surrogate: &Surrogate,
    probe: &AdjacencyProbe<'_>,
    adjacency: &SparseSymMatrix,
    target: usize,
    label: usize,
    config: &AttackConfig,
) -> Result<EdgeSelection> {
    let loss = |tape: &mut Tape, emb| {
        let row = tape.select_rows(emb, &[target])?;
        let (logits, _) = surrogate.head.trace(tape, row, false)?;
        tape.softmax_cross_entropy(logits, &[label], &[0])
    };
    greedy_flips(
        probe,
        adjacency,
        candidate_pairs(adjacency.n(), target, config.candidates),
        config.budget,
        loss,
        |g, is_edge| if is_edge { -g } else { g },
    )
}

/// Runs RND or FGA for every target with the report schema of the main attack.
pub fn run_baseline(
    system: &GvflSystem,
    malicious: usize,
    targets: &[usize],
    config: &AttackConfig,
    rng: &SeededRng,
) -> Result<AttackReport> {
    config.validate()?;
    check_attack_inputs(system, malicious, targets)?;
    let participant = system.participant(malicious);
    let p = system.probabilities();
    let pseudo: Vec<usize> = (0..system.n()).map(|v| argmax(p.row(v))).collect();
    let (surrogate, losses) = train_surrogate(
        &participant.adjacency,
        &participant.features,
        &participant.model,
        &pseudo,
        &system.split().train,
        system.num_classes(),
        config.surrogate_epochs,
        config.lr,
        &mut rng.named("surrogate"),
    )?;
    let sp = surrogate.predict(&participant.adjacency, &participant.features)?;
    let surrogate_labels: Vec<usize> = (0..system.n()).map(|v| argmax(sp.row(v))).collect();
    let agree = surrogate_labels.iter().zip(&pseudo).filter(|(a, b)| a == b).count();
    let summary = SurrogateSummary {
        agreement: agree as f64 / system.n() as f64,
        losses,
    };

    let probe = AdjacencyProbe::new(&participant.model, &participant.features)?;
    let surrogate_probe = AdjacencyProbe::new(&surrogate.model, &participant.features)?;
    let outcomes = for_each_target(targets, |v| {
        let label = pseudo[v];
        let selection = match config.method {
            AttackMethod::Rnd => {
                let mut target_rng = rng.named(&format!("rnd-{v}"));
                rnd_attack(&participant.adjacency, v, label, &surrogate_labels, config.budget, &mut target_rng)?
            }
            _ => fga_attack(&surrogate, &surrogate_probe, &participant.adjacency, v, label, config)?,
        };
        let mut outcome = evaluate_target(system, malicious, &probe, v, label, &selection)?;
        outcome.guidance_losses = selection.losses;
        Ok(outcome)
    })?;
    let mut report = AttackReport::from_outcomes(config.method, config, malicious, outcomes);
    report.surrogate = Some(summary);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::CandidateMode;
    use crate::graph::{synth_sbm, SbmConfig};
    use crate::local::GnnKind;
    use rand::Rng;

    fn toy(seed: u64) -> crate::graph::Graph {
        let cfg = SbmConfig {
            block_sizes: vec![25, 25, 25],
            intra_p: 0.2,
            inter_p: 0.02,
            feat_dim: 9,
            noise: 0.5,
        };
        synth_sbm(&cfg, &mut SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn surrogate_fits_training_labels() {
        let g = toy(0);
        let template = LocalModel::new(GnnKind::Gcn, 9, 16, 8, &mut SeededRng::new(1));
        let train: Vec<usize> = (0..75).step_by(3).collect();
        let (s, losses) = train_surrogate(
            g.adjacency(),
            g.features(),
            &template,
            g.labels(),
            &train,
            3,
            200,
            0.01,
            &mut SeededRng::new(2),
        )
        .unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let p = s.predict(g.adjacency(), g.features()).unwrap();
        let agree = (0..75).filter(|&v| argmax(p.row(v)) == g.labels()[v]).count();
        assert!(agree as f64 >= 0.9 * 75.0, "{agree}/75");
    }

    #[test]
    fn rnd_picks_differently_labelled_non_neighbours() {
        let g = toy(3);
        let labels = g.labels();
        for t in [0, 30, 60] {
            let sel = rnd_attack(g.adjacency(), t, labels[t], labels, 3, &mut SeededRng::new(t as u64)).unwrap();
            assert_eq!(sel.adjacency.l0_distance(g.adjacency()), 6);
            for &(u, v) in &sel.flips {
                let other = if u == t { v } else { u };
                assert_ne!(labels[other], labels[t]);
                assert!(!g.adjacency().contains(u, v));
                assert!(sel.adjacency.contains(u, v));
            }
        }
        let same = vec![0; 75];
        assert!(rnd_attack(g.adjacency(), 0, 0, &same, 1, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn fga_choice_ranks_high_by_brute_force() {
        let mut hits = 0;
        for trial in 0..25u64 {
            let cfg = SbmConfig {
                block_sizes: vec![6, 6],
                intra_p: 0.5,
                inter_p: 0.1,
                feat_dim: 4,
                noise: 0.5,
            };
            let g = synth_sbm(&cfg, &mut SeededRng::new(trial)).unwrap();
            let mut rng = SeededRng::new(100 + trial);
            let surrogate = Surrogate {
                model: LocalModel::new(GnnKind::Gcn, 4, 8, 4, &mut rng),
                head: Mlp::new(&[4, 2], &mut rng).unwrap(),
            };
            let t = rng.random_range(0..12);
            let label = rng.random_range(0..2);
            let probe = AdjacencyProbe::new(&surrogate.model, g.features()).unwrap();
            let config = AttackConfig {
                budget: 1,
                candidates: CandidateMode::Target,
                ..AttackConfig::default()
            };
            let sel = fga_attack(&surrogate, &probe, g.adjacency(), t, label, &config).unwrap();
            let ce = |a: &SparseSymMatrix| {
                let p = surrogate.predict(a, g.features()).unwrap();
                -p.get(t, label).ln()
            };
            let mut all: Vec<((usize, usize), f64)> = candidate_pairs(12, t, CandidateMode::Target)
                .into_iter()
                .map(|(u, v)| ((u, v), ce(&g.adjacency().toggled(u, v).unwrap())))
                .collect();
            all.sort_by(|p, q| q.1.total_cmp(&p.1));
            let rank = all.iter().position(|(pair, _)| *pair == sel.flips[0]).unwrap();
            if (rank as f64) < 0.2 * all.len() as f64 {
                hits += 1;
            }
        }
        assert!(hits >= 20, "{hits}/25");
    }
}
