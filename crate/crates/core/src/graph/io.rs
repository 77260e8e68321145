//! Text formats.
//!
//! * edges: one `u<TAB>v` pair per line, 0-based ids, undirected. Any run of
//!   whitespace is accepted as the separator; blank lines and lines starting
//!   with `#` are skipped.
//! * features: CSV, row `i` holds the `F_in` values of node `i`.
//! * labels: CSV `node_id,label`, one line per node. Label tokens are remapped
//!   to contiguous class ids (numeric tokens in numeric order, otherwise
//!   lexicographic) and the mapping is kept in [`Graph::class_names`].

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseSymMatrix};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn load_graph(
    edges_path: impl AsRef<Path>,
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Graph> {
    let (edges_path, features_path, labels_path) =
        (edges_path.as_ref(), features_path.as_ref(), labels_path.as_ref());

    let features = parse_features(features_path, &read(features_path)?)?;
    let n = features.rows();
    let (labels, class_names) = parse_labels(labels_path, &read(labels_path)?, n)?;

    let mut edges = Vec::new();
    let mut self_loops = 0usize;
    for (line, text) in content_lines(&read(edges_path)?) {
        let mut parts = text.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(edges_path, line, "expected two node ids"));
        };
        let parse = |tok: &str| {
            tok.parse::<usize>()
                .map_err(|_| parse_err(edges_path, line, format!("invalid node id {tok:?}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        for id in [u, v] {
            if id >= n {
                return Err(parse_err(
                    edges_path,
                    line,
                    format!("node id {id} out of range for {n} nodes"),
                ));
            }
        }
        if u == v {
            self_loops += 1;
            continue;
        }
        edges.push((u, v));
    }
    if self_loops > 0 {
        log::warn!("{}: dropped {self_loops} self-loops", edges_path.display());
    }
    let adjacency = SparseSymMatrix::from_edges(n, edges)?;
    Graph::with_class_names(adjacency, features, labels, class_names)
}

fn parse_features(path: &Path, text: &str) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, l) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if l.is_empty() {
            continue;
        }
        let row = l
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("invalid feature value {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    DenseMatrix::from_rows(&rows)
}

fn parse_labels(path: &Path, text: &str, n: usize) -> Result<(Vec<usize>, Vec<String>)> {
    let mut raw: Vec<Option<String>> = vec![None; n];
    for (line, l) in content_lines(text) {
        let Some((id, label)) = l.split_once(',') else {
            return Err(parse_err(path, line, "expected node_id,label"));
        };
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("invalid node id {id:?}")))?;
        if id >= n {
            return Err(parse_err(
                path,
                line,
                format!("node id {id} out of range for {n} nodes"),
            ));
        }
        let label = label.trim();
        if label.is_empty() {
            return Err(parse_err(path, line, "empty label"));
        }
        if raw[id].replace(label.to_string()).is_some() {
            return Err(parse_err(path, line, format!("duplicate label for node {id}")));
        }
    }
    if let Some(missing) = raw.iter().position(Option::is_none) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("node {missing} has no label"),
        });
    }
    let raw: Vec<String> = raw.into_iter().map(Option::unwrap).collect();
    Ok(remap_labels(&raw))
}

/// Contiguous class ids for label tokens: numeric order when every token is
/// an integer, lexicographic otherwise.
fn remap_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let tokens: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    let mut names: Vec<String> = tokens.into_iter().map(str::to_string).collect();
    if names.iter().all(|t| t.parse::<i64>().is_ok()) {
        names.sort_by_key(|t| t.parse::<i64>().unwrap());
    }
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let labels = raw.iter().map(|t| index[t.as_str()]).collect();
    (labels, names)
}

/// Writes `edges.tsv`, `features.csv` and `labels.csv` into `dir`.
pub fn write_graph(graph: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut edges = String::new();
    for (u, v) in graph.adjacency().edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    let mut features = String::new();
    for row in graph.features().row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        features.push_str(&line.join(","));
        features.push('\n');
    }
    let mut labels = String::new();
    for (i, &c) in graph.labels().iter().enumerate() {
        labels.push_str(&format!("{i},{}\n", graph.class_names()[c]));
    }
    write_atomic(dir.join("edges.tsv"), &edges)?;
    write_atomic(dir.join("features.csv"), &features)?;
    write_atomic(dir.join("labels.csv"), &labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionSummary {
    pub nodes: usize,
    pub edge_records: usize,
    pub edges: usize,
    pub self_loops: usize,
    pub dangling_records: usize,
    pub features: usize,
    pub classes: usize,
    pub output: PathBuf,
}

/// Converts the citation-graph distribution layout into the simulator's files.
///
/// `content` lines are `<paper_id> <f_1> ... <f_F> <label>` (whitespace
/// separated); `cites` lines are `<cited_id> <citing_id>`. Node ids follow the
/// order of the content file. Citation records naming a paper absent from the
/// content file are skipped and counted.
pub fn convert_citation(
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<ConversionSummary> {
    let (content_path, cites_path, out_dir) =
        (content_path.as_ref(), cites_path.as_ref(), out_dir.as_ref());
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (line, l) in content_lines(&read(content_path)?) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(content_path, line, "expected id, features and label"));
        }
        let id = toks[0].to_string();
        let label = toks[toks.len() - 1].to_string();
        let row = toks[1..toks.len() - 1]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(content_path, line, format!("invalid feature {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    content_path,
                    line,
                    format!("expected {} features, found {}", first.len(), row.len()),
                ));
            }
        }
        if ids.insert(id.clone(), rows.len()).is_some() {
            return Err(parse_err(content_path, line, format!("duplicate paper id {id}")));
        }
        rows.push(row);
        raw_labels.push(label);
    }
    let n = rows.len();

    let mut edges = Vec::new();
    let (mut records, mut dangling, mut self_loops) = (0, 0, 0);
    for (line, l) in content_lines(&read(cites_path)?) {
        let mut parts = l.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(cites_path, line, "expected two paper ids"));
        };
        records += 1;
        match (ids.get(a), ids.get(b)) {
            (Some(&u), Some(&v)) if u == v => self_loops += 1,
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => dangling += 1,
        }
    }
    let adjacency = SparseSymMatrix::from_edges(n, edges)?;

    let (labels, names) = remap_labels(&raw_labels);
    let graph = Graph::with_class_names(adjacency, DenseMatrix::from_rows(&rows)?, labels, names)?;
    write_graph(&graph, out_dir)?;
    let stats = graph.stats();
    Ok(ConversionSummary {
        nodes: n,
        edge_records: records,
        edges: stats.edges,
        self_loops,
        dangling_records: dangling,
        features: stats.features,
        classes: stats.classes,
        output: out_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_small_graph() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "0\t1\n1\t2\n2 1\n");
        let f = write(dir.path(), "f.csv", "1,0\n0,1\n0.5,0.5\n");
        let l = write(dir.path(), "l.csv", "0,10\n1,30\n2,10\n");
        let g = load_graph(&e, &f, &l).unwrap();
        assert_eq!(g.stats().nodes, 3);
        assert_eq!(g.stats().edges, 2);
        assert_eq!(g.labels(), &[0, 1, 0]);
        assert_eq!(g.class_names(), &["10".to_string(), "30".to_string()]);
    }

    #[test]
    fn empty_edge_file_gives_isolated_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "");
        let f = write(dir.path(), "f.csv", "1\n2\n3\n");
        let l = write(dir.path(), "l.csv", "0,0\n1,1\n2,0\n");
        let g = load_graph(&e, &f, &l).unwrap();
        assert_eq!(g.adjacency().nnz(), 0);
        assert!((0..3).all(|i| g.adjacency().degree(i) == 0));
    }

    #[test]
    fn malformed_edge_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "0\t1\n1\tx\n");
        let f = write(dir.path(), "f.csv", "1\n2\n");
        let l = write(dir.path(), "l.csv", "0,0\n1,1\n");
        match load_graph(&e, &f, &l) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_edge_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "0\t5\n");
        let f = write(dir.path(), "f.csv", "1\n2\n");
        let l = write(dir.path(), "l.csv", "0,0\n1,1\n");
        assert!(matches!(load_graph(&e, &f, &l), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "");
        let f = write(dir.path(), "f.csv", "1\n2\n");
        let l = write(dir.path(), "l.csv", "0,0\n");
        assert!(load_graph(&e, &f, &l).is_err());
    }

    #[test]
    fn ragged_features_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "");
        let f = write(dir.path(), "f.csv", "1,2\n3\n");
        let l = write(dir.path(), "l.csv", "0,0\n1,1\n");
        assert!(matches!(load_graph(&e, &f, &l), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn converts_citation_layout() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(
            dir.path(),
            "x.content",
            "p31 0 1 0 Theory\np7 1 0 0 Rule_Learning\np9 1 1 1 Theory\n",
        );
        let cites = write(dir.path(), "x.cites", "p31 p7\np7 p31\np9 p31\np9 ghost\np9 p9\n");
        let out = dir.path().join("out");
        let summary = convert_citation(&content, &cites, &out).unwrap();
        assert_eq!(summary.nodes, 3);
        assert_eq!(summary.edge_records, 5);
        assert_eq!(summary.edges, 2);
        assert_eq!(summary.dangling_records, 1);
        assert_eq!(summary.self_loops, 1);
        let g = load_graph(out.join("edges.tsv"), out.join("features.csv"), out.join("labels.csv")).unwrap();
        assert_eq!(g.num_classes(), 2);
        assert_eq!(g.labels(), &[1, 0, 1]);
        assert_eq!(g.features().row(2), &[1.0, 1.0, 1.0]);
        assert!(g.adjacency().contains(0, 2));
    }
}
