//! One-dimensional parameter sweeps over a base experiment.

use std::path::Path;
use std::str::FromStr;

use gvfl::checkpoint::write_atomic;
use gvfl::eval::{aggregate, aggregate_csv};
use gvfl::{AggregateRow, DefenseKind, RunSummary};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::scenario::{run_scenario, write_outputs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// FGSM noise scale of the attack.
    Epsilon,
    /// Local embedding width `d`.
    Dim,
    /// Components kept by the Top-k defense.
    TopK,
    /// Laplace scale of the DP defense.
    Beta,
    /// Number of participants `K`.
    Participants,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Dim => "d",
            SweepAxis::TopK => "k",
            SweepAxis::Beta => "beta",
            SweepAxis::Participants => "K",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(CliError::Config(format!("{} sweep needs whole numbers, got {value}", self.name())))
            }
        };
        match self {
            SweepAxis::Epsilon => {
                let attack = cfg
                    .attack
                    .as_mut()
                    .ok_or_else(|| CliError::Config("epsilon sweep needs an [attack] section".into()))?;
                attack.epsilon = value;
            }
            SweepAxis::Dim => cfg.training.embed_dim = count()?,
            SweepAxis::TopK => {
                cfg.defense.kind = DefenseKind::Topk;
                cfg.defense.k = count()?;
            }
            SweepAxis::Beta => {
                cfg.defense.kind = DefenseKind::Dp;
                cfg.defense.beta = value;
            }
            SweepAxis::Participants => cfg.federation.participants = count()?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" | "eps" | "ε" => Ok(SweepAxis::Epsilon),
            "d" | "dim" | "embed-dim" => Ok(SweepAxis::Dim),
            "k" | "topk" | "top-k" => Ok(SweepAxis::TopK),
            "beta" | "β" => Ok(SweepAxis::Beta),
            "K" | "participants" => Ok(SweepAxis::Participants),
            other => Err(CliError::Config(format!(
                "unknown sweep axis {other:?} (expected epsilon, d, k, beta or K)"
            ))),
        }
    }
}

/// Parses `"0,0.001,0.004"` or a range `"8:32:4"` (start:end:step, inclusive).
pub fn parse_values(spec: &str) -> Result<Vec<f64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Config(format!("invalid sweep value {t:?}")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [start, end, step] => {
            let (start, end, step) = (num(start)?, num(end)?, num(step)?);
            if !(step > 0.0) || end < start {
                return Err(CliError::Config(format!("invalid sweep range {spec:?}")));
            }
            let count = ((end - start) / step + 1e-9).floor() as usize;
            (0..=count).map(|i| start + i as f64 * step).collect()
        }
        [_] => spec.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(CliError::Config(format!("invalid sweep range {spec:?}"))),
    };
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    Ok(values)
}

/// Runs the base scenario once per value, writing each run to
/// `<dir>/<axis>-<value>/` and the combined table to `<dir>/sweep-<axis>.csv`.
/// Rows carry the swept value as an extra key column.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    jobs: usize,
    dir: &Path,
) -> Result<Vec<AggregateRow>> {
    let configs = values
        .iter()
        .map(|&v| axis.apply(base, v).map(|c| (v, c)))
        .collect::<Result<Vec<_>>>()?;
    let mut summaries: Vec<RunSummary> = Vec::new();
    for (value, cfg) in &configs {
        let sub = dir.join(format!("{}-{value}", axis.name()));
        let out = run_scenario(cfg, jobs, Some(&sub))?;
        write_outputs(cfg, &out, &sub)?;
        summaries.extend(out.results.into_iter().map(|r| {
            let mut s = r.summary;
            s.key.insert(axis.name().to_string(), value.to_string());
            s
        }));
    }
    let rows = aggregate(&summaries)?;
    write_atomic(dir.join(format!("sweep-{}.csv", axis.name())), aggregate_csv(&rows))?;
    Ok(rows)
}

/// Mean of `metric` for each swept value, in `values` order.
pub fn series(rows: &[AggregateRow], axis: SweepAxis, values: &[f64], metric: &str) -> Vec<Option<f64>> {
    values
        .iter()
        .map(|v| {
            rows.iter()
                .find(|r| r.metric == metric && r.key.get(axis.name()) == Some(&v.to_string()))
                .map(|r| r.mean)
        })
        .collect()
}
