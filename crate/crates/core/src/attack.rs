//! Configuration, candidate sets and report types shared by every structural
//! attack.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::classification_margin;
use crate::federation::GvflSystem;
use crate::local::AdjacencyProbe;
use crate::numerics::{SeededRng, SparseSymMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    #[default]
    Fraudster,
    Rnd,
    Fga,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fraudster => "fraudster",
            AttackMethod::Rnd => "rnd",
            AttackMethod::Fga => "fga",
        }
    }
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fraudster" | "graph-fraudster" => Ok(AttackMethod::Fraudster),
            "rnd" => Ok(AttackMethod::Rnd),
            "fga" => Ok(AttackMethod::Fga),
            other => Err(Error::InvalidArgument(format!("unknown attack method {other:?}"))),
        }
    }
}

/// Which node pairs an edge-selection step may flip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    /// Pairs `(v_t, u)` for every `u ≠ v_t`.
    #[default]
    Target,
    /// Every unordered pair of distinct nodes.
    All,
}

/// How a symmetrised gradient is turned into a flip score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipScore {
    /// `−g_sym · (1 − 2 A_uv)`: first-order loss decrease of toggling the
    /// pair, so present edges are scored for removal and absent ones for
    /// insertion.
    #[default]
    Directional,
    /// `−g_sym`, irrespective of whether the pair is currently an edge.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// FGSM noise scale.
    pub epsilon: f64,
    /// Edge flips per target.
    pub budget: usize,
    pub grn_iters: usize,
    pub grn_hidden: Vec<usize>,
    pub shadow_iters: usize,
    pub lr: f64,
    /// Central-difference step for query-based GRN gradients.
    pub query_step: f64,
    pub surrogate_epochs: usize,
    pub candidates: CandidateMode,
    pub score: FlipScore,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: AttackMethod::Fraudster,
            epsilon: 0.004,
            budget: 1,
            grn_iters: 200,
            grn_hidden: vec![512, 256],
            shadow_iters: 200,
            lr: 0.01,
            query_step: 1e-4,
            surrogate_epochs: 200,
            candidates: CandidateMode::Target,
            score: FlipScore::Directional,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.budget == 0 {
            return Err(Error::InvalidArgument("budget must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.query_step > 0.0) {
            return Err(Error::InvalidArgument("learning rate and query step must be positive".into()));
        }
        Ok(())
    }
}

/// Candidate pairs `(u, v)` with `u < v`, in lexicographic order.
pub fn candidate_pairs(n: usize, target: usize, mode: CandidateMode) -> Vec<(usize, usize)> {
    match mode {
        CandidateMode::Target => (0..n)
            .filter(|&u| u != target)
            .map(|u| (u.min(target), u.max(target)))
            .collect(),
        CandidateMode::All => (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect(),
    }
}

/// Result of one target's edge search.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSelection {
    pub adjacency: SparseSymMatrix,
    /// Toggled pairs in selection order.
    pub flips: Vec<(usize, usize)>,
    /// Objective before each flip and after the last one.
    pub losses: Vec<f64>,
}

/// Greedy flip loop shared by gradient-guided attacks.
///
/// Each round scores every remaining candidate with `score(pair_gradient,
/// currently_edge)`, toggles the best one (ties go to the lexicographically
/// smallest pair) and never revisits a pair.
pub(crate) fn greedy_flips<L, S>(
    probe: &AdjacencyProbe<'_>,
    adjacency: &SparseSymMatrix,
    mut candidates: Vec<(usize, usize)>,
    budget: usize,
    loss: L,
    score: S,
) -> Result<EdgeSelection>
where
    L: Fn(&mut crate::numerics::Tape, crate::numerics::Var) -> Result<crate::numerics::Var>,
    S: Fn(f64, bool) -> f64,
{
    if candidates.is_empty() {
        return Err(Error::Attack("candidate set is empty".into()));
    }
    if budget == 0 || budget > candidates.len() {
        return Err(Error::Attack(format!(
            "budget {budget} is outside 1..={} candidates",
            candidates.len()
        )));
    }
    candidates.sort_unstable();
    let mut current = adjacency.clone();
    let mut flips = Vec::with_capacity(budget);
    let mut losses = Vec::with_capacity(budget + 1);
    for _ in 0..budget {
        let grad = probe.gradient(&current, &candidates, &loss)?;
        losses.push(grad.loss);
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, pg) in grad.pairs.iter().enumerate() {
            let s = score(pg.symmetric(), current.contains(pg.u, pg.v));
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        let pair = candidates.remove(best);
        current = current.toggled(pair.0, pair.1)?;
        flips.push(pair);
    }
    let last = probe.gradient(&current, &[], &loss)?;
    losses.push(last.loss);
    Ok(EdgeSelection {
        adjacency: current,
        flips,
        losses,
    })
}

/// Per-target attack outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub node: usize,
    pub true_class: usize,
    /// Class the attack pushes away from (the server's clean prediction).
    pub attack_label: usize,
    pub flips: Vec<(usize, usize)>,
    /// `‖Â − A‖₀` with both directions of a pair counted.
    pub l0: usize,
    pub clean_prediction: usize,
    pub adversarial_prediction: usize,
    pub margin_before: f64,
    pub margin_after: f64,
    /// Guidance loss before each flip and after the last (Graph-Fraudster only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guidance_losses: Vec<f64>,
    /// `‖h̄ − h‖_∞` of the FGSM step (Graph-Fraudster only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_linf: Option<f64>,
}

impl TargetOutcome {
    pub fn correct_before(&self) -> bool {
        self.margin_before > 0.0
    }

    pub fn correct_after(&self) -> bool {
        self.margin_after > 0.0
    }
}

/// Query-side diagnostics of embedding stealing and shadow training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StealingSummary {
    pub grn_initial_loss: f64,
    pub grn_final_loss: f64,
    pub grn_losses: Vec<f64>,
    pub shadow_initial_loss: f64,
    pub shadow_final_loss: f64,
    pub shadow_losses: Vec<f64>,
    /// Fraction of nodes where the shadow's argmax on `h_fake` equals the
    /// real server's argmax on `h_fake`.
    pub shadow_agreement: f64,
    pub queries: usize,
}

/// Surrogate diagnostics of the transfer baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSummary {
    /// Fraction of all nodes where the surrogate's argmax equals the server's.
    pub agreement: f64,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub method: AttackMethod,
    pub epsilon: f64,
    pub budget: usize,
    pub malicious: usize,
    pub targets: Vec<TargetOutcome>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stealing: Option<StealingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateSummary>,
}

impl AttackReport {
    pub(crate) fn from_outcomes(
        method: AttackMethod,
        config: &AttackConfig,
        malicious: usize,
        targets: Vec<TargetOutcome>,
    ) -> Self {
        let frac = |f: fn(&TargetOutcome) -> bool| {
            if targets.is_empty() {
                0.0
            } else {
                targets.iter().filter(|t| f(t)).count() as f64 / targets.len() as f64
            }
        };
        Self {
            method,
            epsilon: config.epsilon,
            budget: config.budget,
            malicious,
            accuracy_before: frac(TargetOutcome::correct_before),
            accuracy_after: frac(TargetOutcome::correct_after),
            targets,
            stealing: None,
            surrogate: None,
        }
    }
}

/// Server verdict for node `v` once the malicious participant recomputes its
/// embeddings on `adversarial` and uploads them.
pub(crate) fn evaluate_target(
    system: &GvflSystem,
    malicious: usize,
    probe: &AdjacencyProbe<'_>,
    v: usize,
    attack_label: usize,
    selection: &EdgeSelection,
) -> Result<TargetOutcome> {
    let clean = system.probabilities().row(v);
    let true_class = system.labels()[v];
    let adv_emb = probe.embeddings(&selection.adjacency)?;
    let adv = system.predict_row_with(v, malicious, adv_emb.row(v))?;
    Ok(TargetOutcome {
        node: v,
        true_class,
        attack_label,
        flips: selection.flips.clone(),
        l0: selection.adjacency.l0_distance(&system.participant(malicious).adjacency),
        clean_prediction: crate::numerics::argmax(clean),
        adversarial_prediction: crate::numerics::argmax(&adv),
        margin_before: classification_margin(clean, true_class)?,
        margin_after: classification_margin(&adv, true_class)?,
        guidance_losses: Vec::new(),
        noise_linf: None,
    })
}

/// Runs `per_target` for every node in order, in parallel where a thread pool
/// is available. Output order follows `targets`.
pub(crate) fn for_each_target<F>(targets: &[usize], per_target: F) -> Result<Vec<TargetOutcome>>
where
    F: Fn(usize) -> Result<TargetOutcome> + Sync,
{
    targets.par_iter().map(|&v| per_target(v)).collect()
}

pub(crate) fn check_attack_inputs(system: &GvflSystem, malicious: usize, targets: &[usize]) -> Result<()> {
    if !system.is_trained() {
        return Err(Error::Attack("system has not been trained".into()));
    }
    if malicious >= system.k() {
        return Err(Error::Attack(format!(
            "malicious participant {malicious} out of range for {} participants",
            system.k()
        )));
    }
    if let Some(&v) = targets.iter().find(|&&v| v >= system.n()) {
        return Err(Error::NodeOutOfRange {
            id: v,
            n: system.n(),
            context: "attack target",
        });
    }
    Ok(())
}

/// Dispatches to Graph-Fraudster or one of the baselines.
pub fn run(
    system: &GvflSystem,
    malicious: usize,
    targets: &[usize],
    config: &AttackConfig,
    rng: &SeededRng,
) -> Result<AttackReport> {
    match config.method {
        AttackMethod::Fraudster => crate::fraudster::run_attack(system, malicious, targets, config, rng),
        AttackMethod::Rnd | AttackMethod::Fga => {
            crate::baselines::run_baseline(system, malicious, targets, config, rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_are_sorted_pairs() {
        assert_eq!(candidate_pairs(4, 2, CandidateMode::Target), vec![(0, 2), (1, 2), (2, 3)]);
        assert_eq!(candidate_pairs(3, 0, CandidateMode::All), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn method_names_parse() {
        for m in [AttackMethod::Fraudster, AttackMethod::Rnd, AttackMethod::Fga] {
            assert_eq!(m.name().parse::<AttackMethod>().unwrap(), m);
        }
        assert!("nettack".parse::<AttackMethod>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        let bad = AttackConfig {
            epsilon: 1.5,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            budget: 0,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
