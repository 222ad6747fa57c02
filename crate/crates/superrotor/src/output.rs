//! Deterministic file output: CSV grids and tables with JSON metadata
//! sidecars, or pure-JSON documents.
//!
//! Every file embeds the tool version and the config hash; floats are written
//! with 17 significant digits and all iteration orders are fixed, so repeated
//! runs with the same config and seed are byte-identical.

use num_complex::Complex64 as C64;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

/// SHA-256 hex digest of the raw config text.
pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writer for one run's output directory.
pub struct OutputWriter {
    dir: PathBuf,
    format: OutputFormat,
    hash: String,
    written: Vec<String>,
}

impl OutputWriter {
    pub fn new(dir: impl AsRef<Path>, format: OutputFormat, hash: String) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(OutputWriter {
            dir: dir.as_ref().to_path_buf(),
            format,
            hash,
            written: Vec::new(),
        })
    }

    pub fn files(&self) -> &[String] {
        &self.written
    }

    fn atomic_write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!("{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        self.written.push(name.to_string());
        Ok(path)
    }

    fn header(&self) -> String {
        format!("# superrotor {VERSION} config={}\n", self.hash)
    }

    fn meta_value(&self, extra: Value) -> Value {
        let mut base = json!({
            "tool": "superrotor",
            "version": VERSION,
            "config_hash": self.hash,
        });
        if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
            for (k, v) in e {
                b.insert(k, v);
            }
        }
        base
    }

    /// Columnar table: one row per index, one column per named series.
    pub fn write_table(&mut self, name: &str, columns: &[(&str, &[f64])], meta: Value) -> Result<()> {
        if columns.is_empty() {
            return Err(Error::Observable("table needs at least one column".into()));
        }
        let rows = columns[0].1.len();
        for (cname, data) in columns {
            if data.len() != rows {
                return Err(Error::Observable(format!(
                    "column '{cname}' length {} != {rows}",
                    data.len()
                )));
            }
        }
        match self.format {
            OutputFormat::Csv => {
                let mut s = self.header();
                s.push_str(&columns.iter().map(|c| c.0).collect::<Vec<_>>().join(","));
                s.push('\n');
                for i in 0..rows {
                    let line = columns
                        .iter()
                        .map(|c| fmt(c.1[i]))
                        .collect::<Vec<_>>()
                        .join(",");
                    s.push_str(&line);
                    s.push('\n');
                }
                self.atomic_write(&format!("{name}.csv"), s.as_bytes())?;
                let meta = self.meta_value(meta);
                self.atomic_write(
                    &format!("{name}.meta.json"),
                    serde_json::to_string_pretty(&meta).unwrap().as_bytes(),
                )?;
            }
            OutputFormat::Json => {
                let mut doc = self.meta_value(meta);
                let cols: Value = columns
                    .iter()
                    .map(|(n, d)| (n.to_string(), json!(d)))
                    .collect::<serde_json::Map<String, Value>>()
                    .into();
                doc["columns"] = cols;
                self.atomic_write(
                    &format!("{name}.json"),
                    serde_json::to_string_pretty(&doc).unwrap().as_bytes(),
                )?;
            }
        }
        Ok(())
    }

    /// Row-major matrix with labeled axes; CSV layout has the column axis in
    /// the first row and the row axis in the first column.
    #[allow(clippy::too_many_arguments)]
    pub fn write_matrix(
        &mut self,
        name: &str,
        row_name: &str,
        rows: &[f64],
        col_name: &str,
        cols: &[f64],
        values: &[f64],
        meta: Value,
    ) -> Result<()> {
        if values.len() != rows.len() * cols.len() {
            return Err(Error::Observable(format!(
                "matrix '{name}': {} values for {}x{}",
                values.len(),
                rows.len(),
                cols.len()
            )));
        }
        match self.format {
            OutputFormat::Csv => {
                let mut s = self.header();
                s.push_str(&format!("{row_name}\\{col_name}"));
                for c in cols {
                    s.push(',');
                    s.push_str(&fmt(*c));
                }
                s.push('\n');
                for (i, r) in rows.iter().enumerate() {
                    s.push_str(&fmt(*r));
                    for j in 0..cols.len() {
                        s.push(',');
                        s.push_str(&fmt(values[i * cols.len() + j]));
                    }
                    s.push('\n');
                }
                self.atomic_write(&format!("{name}.csv"), s.as_bytes())?;
                let meta = self.meta_value(meta);
                self.atomic_write(
                    &format!("{name}.meta.json"),
                    serde_json::to_string_pretty(&meta).unwrap().as_bytes(),
                )?;
            }
            OutputFormat::Json => {
                let mut doc = self.meta_value(meta);
                doc["rows"] = json!({ "name": row_name, "values": rows });
                doc["cols"] = json!({ "name": col_name, "values": cols });
                doc["values"] = json!(values);
                self.atomic_write(
                    &format!("{name}.json"),
                    serde_json::to_string_pretty(&doc).unwrap().as_bytes(),
                )?;
            }
        }
        Ok(())
    }

    /// Complex matrix written as separate real/imaginary matrices.
    #[allow(clippy::too_many_arguments)]
    pub fn write_complex_matrix(
        &mut self,
        name: &str,
        row_name: &str,
        rows: &[f64],
        col_name: &str,
        cols: &[f64],
        values: &[C64],
        meta: Value,
    ) -> Result<()> {
        let re: Vec<f64> = values.iter().map(|c| c.re).collect();
        let im: Vec<f64> = values.iter().map(|c| c.im).collect();
        self.write_matrix(&format!("{name}_re"), row_name, rows, col_name, cols, &re, meta.clone())?;
        self.write_matrix(&format!("{name}_im"), row_name, rows, col_name, cols, &im, meta)?;
        Ok(())
    }

    /// Final run manifest with the list of produced files.
    pub fn finish(&mut self, summary: Value) -> Result<PathBuf> {
        let mut doc = self.meta_value(summary);
        doc["files"] = json!(self.written);
        self.atomic_write(
            "run.json",
            serde_json::to_string_pretty(&doc).unwrap().as_bytes(),
        )
    }
}
