//! Re-aggregation and display of results already on disk.

use std::path::Path;

use gvfl::eval::aggregate;
use gvfl::{AggregateRow, RunSummary};

use crate::error::{CliError, Result};
use crate::scenario::SeedResult;

/// Reads every `seed-*.json` in `dir`, ordered by seed.
pub fn load_results(dir: &Path) -> Result<Vec<SeedResult>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut results = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if !(name.starts_with("seed-") && name.ends_with(".json")) {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let r: SeedResult = serde_json::from_str(&text).map_err(|source| CliError::Json { path, source })?;
        results.push(r);
    }
    if results.is_empty() {
        return Err(CliError::Config(format!("no seed-*.json files in {}", dir.display())));
    }
    results.sort_by_key(|r| r.summary.seed);
    Ok(results)
}

pub fn reaggregate(dir: &Path) -> Result<Vec<AggregateRow>> {
    let summaries: Vec<RunSummary> = load_results(dir)?.into_iter().map(|r| r.summary).collect();
    Ok(aggregate(&summaries)?)
}

/// Aligned text table: key fields, metric, `mean±std`, runs.
pub fn render_table(rows: &[AggregateRow]) -> String {
    let mut fields: Vec<&String> = rows.iter().flat_map(|r| r.key.keys()).collect();
    fields.sort();
    fields.dedup();
    let mut table: Vec<Vec<String>> = vec![fields
        .iter()
        .map(|f| f.to_string())
        .chain(["metric", "mean±std", "runs"].map(String::from))
        .collect()];
    for r in rows {
        table.push(
            fields
                .iter()
                .map(|f| r.key.get(*f).cloned().unwrap_or_default())
                .chain([r.metric.clone(), r.display(), r.runs.to_string()])
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
