//! Flat `key = value` files with dotted keys and units written in the values.
//!
//! ```text
//! # comment
//! sim.duration = 200 us
//! fit.r_bg = 1.05 kcps
//! ```
//!
//! Consumers `take_*` the keys they understand and finish with
//! [`KvFile::finish`], which rejects anything left over.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    /// Normalised to MHz.
    Frequency,
    /// Normalised to microseconds.
    Time,
    /// Normalised to counts (or events) per second.
    Rate,
    Dimensionless,
}

impl Dimension {
    fn canonical(self) -> &'static str {
        match self {
            Dimension::Frequency => "MHz",
            Dimension::Time => "us",
            Dimension::Rate => "cps",
            Dimension::Dimensionless => "",
        }
    }

    fn scale(self, unit: &str) -> Option<f64> {
        match (self, unit) {
            (Dimension::Frequency, "Hz") => Some(1e-6),
            (Dimension::Frequency, "kHz") => Some(1e-3),
            (Dimension::Frequency, "MHz") => Some(1.0),
            (Dimension::Frequency, "GHz") => Some(1e3),
            (Dimension::Time, "ns") => Some(1e-3),
            (Dimension::Time, "us" | "µs") => Some(1.0),
            (Dimension::Time, "ms") => Some(1e3),
            (Dimension::Time, "s") => Some(1e6),
            (Dimension::Rate, "cps" | "/s" | "1/s") => Some(1.0),
            (Dimension::Rate, "kcps") => Some(1e3),
            (Dimension::Rate, "Mcps") => Some(1e6),
            (Dimension::Dimensionless, "") => Some(1.0),
            (Dimension::Dimensionless, "%") => Some(1e-2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone)]
pub struct KvFile {
    path: PathBuf,
    entries: BTreeMap<String, Entry>,
}

impl KvFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// `path` is used only for diagnostics.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(parse_error(path, line, format!("expected `key = value`, got `{content}`")));
            };
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            {
                return Err(parse_error(path, line, format!("invalid key `{key}`")));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(parse_error(
                    path,
                    line,
                    format!("duplicate key `{key}` (first set on line {})", prev.line),
                ));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn error(&self, entry: &Entry, key: &str, message: impl std::fmt::Display) -> Error {
        parse_error(&self.path, entry.line, format!("{key}: {message}"))
    }

    pub fn take_str(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key).map(|e| (e.value, e.line))
    }

    /// Parse a value with `FromStr`; the value must carry no unit.
    pub fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(entry) = self.entries.remove(key) else {
            return Ok(None);
        };
        entry
            .value
            .parse()
            .map(Some)
            .map_err(|e| self.error(&entry, key, e))
    }

    pub fn take_bool(&mut self, key: &str) -> Result<Option<bool>> {
        let Some(entry) = self.entries.remove(key) else {
            return Ok(None);
        };
        match entry.value.as_str() {
            "true" | "yes" | "1" => Ok(Some(true)),
            "false" | "no" | "0" => Ok(Some(false)),
            other => Err(self.error(&entry, key, format!("expected true or false, got `{other}`"))),
        }
    }

    /// A number with a unit of the given dimension, converted to the
    /// dimension's canonical unit.
    pub fn take_quantity(&mut self, key: &str, dim: Dimension) -> Result<Option<f64>> {
        let Some(entry) = self.entries.remove(key) else {
            return Ok(None);
        };
        parse_quantity(&entry.value, dim)
            .map(Some)
            .map_err(|m| self.error(&entry, key, m))
    }

    /// Comma-separated list of non-negative integers.
    pub fn take_list(&mut self, key: &str) -> Result<Option<Vec<u64>>> {
        let Some(entry) = self.entries.remove(key) else {
            return Ok(None);
        };
        entry
            .value
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|e| self.error(&entry, key, format!("expected a list of integers: {e}")))
    }

    /// Fail on the first key no consumer asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((key, e)) => Err(parse_error(&self.path, e.line, format!("unknown key `{key}`"))),
        }
    }
}

fn parse_error(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    }
}

/// `"1.05 kcps"` with `Dimension::Rate` gives `1050.0`.
pub fn parse_quantity(text: &str, dim: Dimension) -> std::result::Result<f64, String> {
    let text = text.trim();
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .unwrap_or(text.len());
    let (number, unit) = text.split_at(split);
    let unit = unit.trim();
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("expected a number, got `{text}`"))?;
    if !value.is_finite() {
        return Err(format!("value must be finite, got `{text}`"));
    }
    let scale = dim.scale(unit).ok_or_else(|| {
        if unit.is_empty() {
            format!("missing unit (expected e.g. `{} {}`)", value, dim.canonical())
        } else {
            format!("unit `{unit}` is not a {dim:?} unit")
        }
    })?;
    Ok(value * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KvFile {
        KvFile::parse(text, Path::new("test.cfg")).unwrap()
    }

    #[test]
    fn quantities_convert() {
        assert_eq!(parse_quantity("1.05 kcps", Dimension::Rate).unwrap(), 1050.0);
        assert_eq!(parse_quantity("6.8 GHz", Dimension::Frequency).unwrap(), 6800.0);
        assert_eq!(parse_quantity("-27MHz", Dimension::Frequency).unwrap(), -27.0);
        assert_eq!(parse_quantity("0.2 ms", Dimension::Time).unwrap(), 200.0);
        assert_eq!(parse_quantity("2 %", Dimension::Dimensionless).unwrap(), 0.02);
        assert!(parse_quantity("200", Dimension::Time).unwrap_err().contains("missing unit"));
        assert!(parse_quantity("3 MHz", Dimension::Time).is_err());
    }

    #[test]
    fn located_diagnostics() {
        let err = KvFile::parse("a = 1\nbogus line\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = KvFile::parse("a = 1\n\na = 2\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));

        let mut f = kv("# header\nsim.t = 5 us\nsim.extra = 3\n");
        assert_eq!(f.take_quantity("sim.t", Dimension::Time).unwrap(), Some(5.0));
        match f.finish().unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("sim.extra"));
            }
            e => panic!("{e:?}"),
        }

        let mut f = kv("x = 12 parsecs\n");
        let err = f.take_quantity("x", Dimension::Time).unwrap_err();
        assert!(err.to_string().contains("parsecs"));
    }

    #[test]
    fn scalars_and_lists() {
        let mut f = kv("n = 3600\nflag = no\nlist = 1, 2,3  # trailing\n");
        assert_eq!(f.take_parsed::<u64>("n").unwrap(), Some(3600));
        assert_eq!(f.take_bool("flag").unwrap(), Some(false));
        assert_eq!(f.take_list("list").unwrap(), Some(vec![1, 2, 3]));
        assert_eq!(f.take_parsed::<u64>("missing").unwrap(), None);
        f.finish().unwrap();
    }
}
