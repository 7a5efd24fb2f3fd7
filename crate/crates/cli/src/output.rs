//! Artifact writing: CSV tables, JSON documents and the run manifest.
//!
//! Every artifact carries the manifest id, a hash of the run's inputs. Output
//! bytes depend only on those inputs, so reruns are byte-identical; only the
//! manifest itself records wall time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const TOOL: &str = "mim-spectral";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One CSV field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Missing,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Float)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match *self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format_float(x),
            Cell::Missing => String::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    /// A `# manifest <id>` comment line, then an RFC-4180 body.
    pub fn to_csv(&self, manifest_id: &str) -> CliResult<Vec<u8>> {
        let mut out = format!("# manifest {manifest_id}\n").into_bytes();
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::CRLF)
                .from_writer(&mut out);
            w.write_record(&self.header)?;
            for row in &self.rows {
                w.write_record(row.iter().map(Cell::render))?;
            }
            w.flush()?;
        }
        Ok(out)
    }
}

/// Hex SHA-256 of a git-style blob header plus content.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// What a run was asked to do. Its hash is the manifest id.
#[derive(Debug, Clone, Serialize)]
pub struct RunInputs {
    pub command: String,
    pub model: String,
    pub p: usize,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub seeds: Vec<u64>,
    /// Remaining command-specific settings.
    pub parameters: Value,
}

impl RunInputs {
    pub fn id(&self) -> String {
        let canonical = serde_json::json!({
            "tool": TOOL,
            "version": VERSION,
            "inputs": self,
        });
        let mut h = Sha256::new();
        h.update(canonical.to_string().as_bytes());
        hex(&h.finalize())[..16].to_string()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub id: String,
    pub command_line: Vec<String>,
    pub model: String,
    pub p: usize,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub seeds: Vec<u64>,
    pub parameters: Value,
    pub wall_time_s: f64,
    /// Per-file blob hashes.
    pub outputs: BTreeMap<String, String>,
    /// Hash over the sorted `(name, blob hash)` list.
    pub content_hash: String,
}

/// Collects a run's artifacts and writes them with their manifest.
#[derive(Debug)]
pub struct Artifacts {
    pub inputs: RunInputs,
    pub id: String,
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn new(inputs: RunInputs) -> Self {
        let id = inputs.id();
        Self {
            inputs,
            id,
            files: BTreeMap::new(),
        }
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> CliResult<()> {
        let bytes = table.to_csv(&self.id)?;
        self.files.insert(name.to_string(), bytes);
        Ok(())
    }

    /// Pretty JSON with the manifest id added under `"manifest"`.
    pub fn json<T: Serialize>(&mut self, name: &str, doc: &T) -> CliResult<Value> {
        let mut v = serde_json::to_value(doc)?;
        if let Value::Object(map) = &mut v {
            map.insert("manifest".into(), Value::String(self.id.clone()));
        }
        let mut bytes = serde_json::to_vec_pretty(&v)?;
        bytes.push(b'\n');
        self.files.insert(name.to_string(), bytes);
        Ok(v)
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn manifest(&self, command_line: Vec<String>, wall_time_s: f64) -> RunManifest {
        let outputs: BTreeMap<String, String> =
            self.files.iter().map(|(k, v)| (k.clone(), blob_hash(v))).collect();
        let listing = outputs.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{v} {k}");
            s
        });
        let i = &self.inputs;
        RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            id: self.id.clone(),
            command_line,
            model: i.model.clone(),
            p: i.p,
            n: i.n,
            d: i.d,
            alpha: i.alpha,
            seeds: i.seeds.clone(),
            parameters: i.parameters.clone(),
            wall_time_s,
            outputs,
            content_hash: blob_hash(listing.as_bytes()),
        }
    }

    /// Writes every artifact and `<stem>.manifest.json` into `dir`; returns
    /// the written paths.
    pub fn write(
        &self,
        dir: &Path,
        stem: &str,
        command_line: Vec<String>,
        wall_time_s: f64,
    ) -> CliResult<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes)?;
            paths.push(path);
        }
        let manifest = self.manifest(command_line, wall_time_s);
        let path = dir.join(format!("{stem}.manifest.json"));
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes)?;
        paths.push(path);
        Ok(paths)
    }
}

/// Row-major nested rows for JSON.
pub fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_17_digits() {
        for x in [1.0 / 3.0, -2.5e-300, 1.6842105263157894, 0.0] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap();
            assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
        }
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn csv_has_comment_header_and_missing_cells() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec![Cell::Int(3), Cell::Missing]);
        let text = String::from_utf8(t.to_csv("abc").unwrap()).unwrap();
        assert_eq!(text, "# manifest abc\na,b\r\n3,\r\n");
    }

    #[test]
    fn id_depends_on_inputs_only() {
        let inputs = |seed| RunInputs {
            command: "x".into(),
            model: "m".into(),
            p: 2,
            n: Some(10),
            d: None,
            alpha: Some(1.0),
            seeds: vec![seed],
            parameters: Value::Null,
        };
        assert_eq!(inputs(1).id(), inputs(1).id());
        assert_ne!(inputs(1).id(), inputs(2).id());
    }
}
