//! Comma-separated output tables with a `#` metadata header.
//!
//! ```text
//! # readout analyze
//! # config_sha256 = 3f2a...
//! # seed = 7
//! n_thresh,time_us,eps_bright,...
//! 1,1,0.97,...
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::atomic_write::write_atomically;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    /// `key = value` lines of the header block.
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Shortest round-tripping decimal form, so output is stable across runs.
pub fn num(x: f64) -> String {
    if x.is_finite() { format!("{x}") } else { "nan".to_string() }
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn render(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "# {}", self.title)?;
        for (k, v) in &self.meta {
            writeln!(out, "# {k} = {v}")?;
        }
        writeln!(out, "{}", self.columns.join(","))?;
        for r in &self.rows {
            writeln!(out, "{}", r.join(","))?;
        }
        Ok(())
    }

    pub fn to_string_lossy(&self) -> String {
        let mut out = Vec::new();
        self.render(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("tables are UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomically(path, |w| self.render(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let located = |line: usize, message: String| Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        let mut table = Table::new("", &[]);
        let mut have_header = false;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            if let Some(c) = text.strip_prefix('#') {
                let c = c.trim();
                match c.split_once('=') {
                    Some((k, v)) => table.meta.push((k.trim().to_string(), v.trim().to_string())),
                    None if table.title.is_empty() => table.title = c.to_string(),
                    None => {}
                }
                continue;
            }
            let fields: Vec<String> = text.split(',').map(|f| f.trim().to_string()).collect();
            if !have_header {
                table.columns = fields;
                have_header = true;
            } else if fields.len() != table.columns.len() {
                return Err(located(
                    i + 1,
                    format!("{} fields, header has {}", fields.len(), table.columns.len()),
                ));
            } else {
                table.rows.push(fields);
            }
        }
        if !have_header {
            return Err(located(0, "no column header".into()));
        }
        Ok(table)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parse column `name` as numbers.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| Error::Data(format!("table has no `{name}` column")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse::<f64>()
                    .map_err(|_| Error::Data(format!("row {}: `{name}` value `{}` is not a number", i + 1, r[c])))
            })
            .collect()
    }
}
