//! Classification margins, target selection, seed aggregation and embedding
//! export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SeededRng};

/// `p_true − max_{c ≠ true} p_c`.
pub fn classification_margin(probs: &[f64], true_class: usize) -> Result<f64> {
    if true_class >= probs.len() {
        return Err(Error::ClassOutOfRange {
            class: true_class,
            num_classes: probs.len(),
        });
    }
    let other = probs
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != true_class)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    if other == f64::NEG_INFINITY {
        return Ok(probs[true_class]);
    }
    Ok(probs[true_class] - other)
}

/// Correct means a strictly positive margin; exact ties count as wrong.
pub fn is_correct(probs: &[f64], true_class: usize) -> Result<bool> {
    Ok(classification_margin(probs, true_class)? > 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginRecord {
    pub node: usize,
    pub true_class: usize,
    pub probs: Vec<f64>,
    pub margin: f64,
}

impl MarginRecord {
    pub fn new(node: usize, true_class: usize, probs: Vec<f64>) -> Result<Self> {
        let margin = classification_margin(&probs, true_class)?;
        Ok(Self {
            node,
            true_class,
            probs,
            margin,
        })
    }
}

/// Margin records of `nodes` under the probability matrix `probs`.
pub fn margins(probs: &DenseMatrix, labels: &[usize], nodes: &[usize]) -> Result<Vec<MarginRecord>> {
    nodes
        .iter()
        .map(|&v| MarginRecord::new(v, labels[v], probs.row(v).to_vec()))
        .collect()
}

/// Writes `node,true_class,margin[,group]` rows for external box plots.
pub fn write_margins_csv(path: impl AsRef<Path>, groups: &[(&str, &[MarginRecord])]) -> Result<()> {
    let mut out = String::from("group,node,true_class,margin\n");
    for (group, records) in groups {
        for r in *records {
            let _ = writeln!(out, "{group},{},{},{}", r.node, r.true_class, r.margin);
        }
    }
    write_atomic(path, out)
}

/// Attack targets drawn from correctly classified test nodes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSelection {
    pub highest: Vec<usize>,
    pub lowest: Vec<usize>,
    pub random: Vec<usize>,
}

impl TargetSelection {
    /// All targets: highest-margin group, lowest-margin group, random group.
    pub fn all(&self) -> Vec<usize> {
        self.highest
            .iter()
            .chain(&self.lowest)
            .chain(&self.random)
            .copied()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.highest.len() + self.lowest.len() + self.random.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Picks the 20 highest-margin, the 20 lowest-margin and 60 random other
/// correctly classified test nodes. Equal margins are ordered by node id.
/// With fewer than 100 correct nodes the groups shrink proportionally.
pub fn select_targets(
    probs: &DenseMatrix,
    labels: &[usize],
    test_nodes: &[usize],
    rng: &mut SeededRng,
) -> Result<TargetSelection> {
    let mut correct: Vec<(usize, f64)> = Vec::new();
    for r in margins(probs, labels, test_nodes)? {
        if r.margin > 0.0 {
            correct.push((r.node, r.margin));
        }
    }
    let (mut hi, mut lo, mut rand_n) = (20, 20, 60);
    if correct.len() < 100 {
        warn!(
            "only {} correctly classified test nodes; shrinking target groups",
            correct.len()
        );
        let c = correct.len();
        hi = c / 5;
        lo = c / 5;
        rand_n = c - hi - lo;
    }
    correct.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let highest: Vec<usize> = correct[..hi].iter().map(|x| x.0).collect();
    let mut rest: Vec<(usize, f64)> = correct[hi..].to_vec();
    rest.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let lowest: Vec<usize> = rest[..lo].iter().map(|x| x.0).collect();
    let mut pool: Vec<usize> = rest[lo..].iter().map(|x| x.0).collect();
    pool.sort_unstable();
    pool.shuffle(rng);
    let mut random: Vec<usize> = pool.into_iter().take(rand_n).collect();
    random.sort_unstable();
    Ok(TargetSelection {
        highest,
        lowest,
        random,
    })
}

/// One seed's scalar results, keyed by experiment cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Cell identity, e.g. dataset, model, method.
    pub key: BTreeMap<String, String>,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

/// Mean and population standard deviation of one metric over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: BTreeMap<String, String>,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

impl AggregateRow {
    /// `mean±std` with three decimals.
    pub fn display(&self) -> String {
        format!("{:.3}±{:.3}", self.mean, self.std)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups runs by key and reduces every metric. Output is sorted by key and
/// metric name, so the result does not depend on input order.
pub fn aggregate(runs: &[RunSummary]) -> Result<Vec<AggregateRow>> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("aggregate needs at least one run".into()));
    }
    let mut groups: BTreeMap<&BTreeMap<String, String>, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups.entry(&r.key).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (key, mut members) in groups {
        members.sort_by_key(|r| r.seed);
        let names: Vec<&String> = members[0].metrics.keys().collect();
        for m in &members[1..] {
            if m.metrics.keys().collect::<Vec<_>>() != names {
                return Err(Error::InvalidArgument(format!(
                    "runs of cell {key:?} report different metrics (seed {} vs seed {})",
                    members[0].seed, m.seed
                )));
            }
        }
        for name in names {
            let values: Vec<f64> = members.iter().map(|r| r.metrics[name]).collect();
            let (mean, std) = mean_std(&values);
            rows.push(AggregateRow {
                key: key.clone(),
                metric: name.clone(),
                mean,
                std,
                runs: values.len(),
            });
        }
    }
    Ok(rows)
}

/// CSV with one column per key field, then `metric,mean,std,runs,formatted`.
/// Standard deviations are population deviations.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut fields: Vec<&String> = rows.iter().flat_map(|r| r.key.keys()).collect();
    fields.sort();
    fields.dedup();
    let mut out = String::new();
    for f in &fields {
        out.push_str(f);
        out.push(',');
    }
    out.push_str("metric,mean,std,runs,formatted\n");
    for r in rows {
        for f in &fields {
            out.push_str(r.key.get(*f).map(String::as_str).unwrap_or(""));
            out.push(',');
        }
        let _ = writeln!(out, "{},{},{},{},{}", r.metric, r.mean, r.std, r.runs, r.display());
    }
    out
}

/// One exported embedding row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub node: usize,
    pub label: usize,
    pub adversarial: bool,
    pub values: Vec<f64>,
}

/// Writes `node,label,adversarial,e0,…,e{D−1}`: every node's clean global
/// embedding, followed by the adversarial rows if given.
pub fn export_embeddings(
    path: impl AsRef<Path>,
    clean: &DenseMatrix,
    labels: &[usize],
    adversarial: &[(usize, Vec<f64>)],
) -> Result<()> {
    if labels.len() != clean.rows() {
        return Err(Error::shape(
            "export_embeddings",
            format!("{} labels", clean.rows()),
            labels.len().to_string(),
        ));
    }
    let dim = clean.cols();
    let mut out = String::from("node,label,adversarial");
    for j in 0..dim {
        let _ = write!(out, ",e{j}");
    }
    out.push('\n');
    let mut push = |node: usize, adv: bool, row: &[f64]| {
        let _ = write!(out, "{node},{},{}", labels[node], u8::from(adv));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    };
    for v in 0..clean.rows() {
        push(v, false, clean.row(v));
    }
    for (v, row) in adversarial {
        if *v >= clean.rows() || row.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "adversarial row for node {v} has wrong node id or width"
            )));
        }
        push(*v, true, row);
    }
    write_atomic(path, out)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 3 {
            return Err(err(i + 1, "too few columns"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(i + 1, "bad integer"));
        let values = cells[3..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| err(i + 1, "bad number")))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow {
            node: int(cells[0])?,
            label: int(cells[1])?,
            adversarial: cells[2] == "1",
            values,
        });
    }
    Ok(rows)
}
