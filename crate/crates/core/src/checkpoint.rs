//! Parameter dumps and atomic file output.
//!
//! A parameter file is one JSON header line followed by CSV rows:
//!
//! ```text
//! {"format":"gvfl-params","version":1,"meta":{"kind":"gcn"},"tensors":[{"name":"w0","rows":2,"cols":3},…]}
//! 0.1,0.2,0.3
//! 0.4,0.5,0.6
//! …
//! ```
//!
//! Tensors follow each other in header order, `rows` CSV lines each. Values
//! use Rust's shortest round-trip formatting, so reading a dump back yields
//! bit-identical matrices.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local::{GnnKind, LocalModel};
use crate::mlp::Mlp;
use crate::numerics::DenseMatrix;

const FORMAT: &str = "gvfl-params";
const VERSION: u32 = 1;

/// Writes `body` to `path` through a sibling temporary file and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, body: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(body.as_ref()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

/// A parsed parameter file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamDump {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, DenseMatrix)>,
}

impl ParamDump {
    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    fn require(&self, name: &str) -> Result<&DenseMatrix> {
        self.get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("parameter dump has no tensor {name:?}")))
    }

    pub fn render(&self) -> Result<String> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, m)| TensorHeader {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for (_, m) in &self.tensors {
            for row in m.row_iter() {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header: Header = serde_json::from_str(lines.next().unwrap_or(""))
            .map_err(|e| err(1, format!("bad header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(err(1, format!("unsupported format {} v{}", header.format, header.version)));
        }
        let mut line_no = 1;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let mut data = Vec::with_capacity(t.rows * t.cols);
            for _ in 0..t.rows {
                line_no += 1;
                let line = lines
                    .next()
                    .ok_or_else(|| err(line_no, format!("tensor {} is truncated", t.name)))?;
                let before = data.len();
                for cell in line.split(',') {
                    let v: f64 = cell
                        .trim()
                        .parse()
                        .map_err(|_| err(line_no, format!("not a number: {cell:?}")))?;
                    data.push(v);
                }
                if data.len() - before != t.cols {
                    return Err(err(line_no, format!("expected {} values in tensor {}", t.cols, t.name)));
                }
            }
            tensors.push((t.name, DenseMatrix::from_vec(t.rows, t.cols, data)?));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.render()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }
}

impl From<&LocalModel> for ParamDump {
    fn from(m: &LocalModel) -> Self {
        Self {
            meta: BTreeMap::from([("kind".to_string(), m.kind().name().to_string())]),
            tensors: vec![("w0".into(), m.w0().clone()), ("w1".into(), m.w1().clone())],
        }
    }
}

impl From<&Mlp> for ParamDump {
    fn from(m: &Mlp) -> Self {
        let mut tensors = Vec::new();
        for (l, (w, b)) in m.weights().iter().zip(m.biases()).enumerate() {
            tensors.push((format!("w{l}"), w.clone()));
            tensors.push((format!("b{l}"), b.clone()));
        }
        Self {
            meta: BTreeMap::new(),
            tensors,
        }
    }
}

impl TryFrom<&ParamDump> for LocalModel {
    type Error = Error;

    fn try_from(d: &ParamDump) -> Result<Self> {
        let kind: GnnKind = d
            .meta
            .get("kind")
            .ok_or_else(|| Error::InvalidArgument("parameter dump has no model kind".into()))?
            .parse()?;
        LocalModel::from_weights(kind, d.require("w0")?.clone(), d.require("w1")?.clone())
    }
}

impl TryFrom<&ParamDump> for Mlp {
    type Error = Error;

    fn try_from(d: &ParamDump) -> Result<Self> {
        let layers = d.tensors.len() / 2;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            weights.push(d.require(&format!("w{l}"))?.clone());
            biases.push(d.require(&format!("b{l}"))?.clone());
        }
        Mlp::from_layers(weights, biases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn local_model_round_trip_is_exact() {
        let m = LocalModel::new(GnnKind::Sgc, 7, 5, 3, &mut SeededRng::new(0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p0.params");
        ParamDump::from(&m).write(&path).unwrap();
        let back = LocalModel::try_from(&ParamDump::read(&path).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn mlp_round_trip_is_exact() {
        let m = Mlp::new(&[4, 9, 3], &mut SeededRng::new(1)).unwrap();
        let text = ParamDump::from(&m).render().unwrap();
        let back = Mlp::try_from(&ParamDump::parse(Path::new("x"), &text).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_dump_reports_line() {
        let m = Mlp::new(&[2, 2], &mut SeededRng::new(1)).unwrap();
        let text = ParamDump::from(&m).render().unwrap();
        let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        match ParamDump::parse(Path::new("x"), &cut) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.json");
        write_atomic(&path, "{}").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "{}");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }
}
