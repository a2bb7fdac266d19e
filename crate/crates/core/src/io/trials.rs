//! Line-delimited trial records.
//!
//! ```text
//! # trial_id,prep_state,retained_before,retained_after,k,t1_us..tk_us
//! 0,bright,1,1,3,12.345,50.000,190.002
//! 1,dark,1,0,0
//! ```
//!
//! Times are microseconds with three decimals; lines starting with `#` are
//! comments.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::atomic_write::write_atomically;
use crate::error::{Error, Result};
use crate::sim::TrialRecord;

pub const TRIAL_HEADER: &str = "# trial_id,prep_state,retained_before,retained_after,k,t1_us..tk_us";

pub fn format_trial<W: Write + ?Sized>(out: &mut W, t: &TrialRecord) -> std::io::Result<()> {
    write!(
        out,
        "{},{},{},{},{}",
        t.trial_id,
        t.prep_state.as_str(),
        t.retained_before as u8,
        t.retained_after as u8,
        t.timestamps.len()
    )?;
    for ts in &t.timestamps {
        write!(out, ",{ts:.3}")?;
    }
    writeln!(out)
}

/// Header plus one line per record.
pub fn write_trials<'a>(
    out: &mut dyn Write,
    comments: &[String],
    records: impl IntoIterator<Item = &'a TrialRecord>,
) -> std::io::Result<()> {
    writeln!(out, "{TRIAL_HEADER}")?;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    for r in records {
        format_trial(out, r)?;
    }
    Ok(())
}

pub fn save_trials<'a>(records: impl IntoIterator<Item = &'a TrialRecord>, path: &Path) -> Result<()> {
    save_trials_with_comments(records, &[], path)
}

pub fn save_trials_with_comments<'a>(
    records: impl IntoIterator<Item = &'a TrialRecord>,
    comments: &[String],
    path: &Path,
) -> Result<()> {
    write_atomically(path, |w| write_trials(w, comments, records))
}

fn parse_bool(field: &str) -> std::result::Result<bool, String> {
    match field {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(format!("expected 0 or 1, got `{other}`")),
    }
}

/// Parse one record line; errors carry no location.
pub fn parse_trial(line: &str) -> std::result::Result<TrialRecord, String> {
    let mut fields = line.split(',').map(str::trim);
    let mut next = |name: &str| fields.next().ok_or_else(|| format!("missing field `{name}`"));
    let trial_id = next("trial_id")?
        .parse::<u64>()
        .map_err(|e| format!("trial_id: {e}"))?;
    let prep_state = next("prep_state")?.parse().map_err(|e: Error| e.to_string())?;
    let retained_before = parse_bool(next("retained_before")?).map_err(|e| format!("retained_before: {e}"))?;
    let retained_after = parse_bool(next("retained_after")?).map_err(|e| format!("retained_after: {e}"))?;
    let k = next("k")?.parse::<usize>().map_err(|e| format!("k: {e}"))?;
    let timestamps = fields
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| format!("bad timestamp `{f}`"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if timestamps.len() != k {
        return Err(format!("k = {k} but {} timestamps follow", timestamps.len()));
    }
    Ok(TrialRecord {
        trial_id,
        prep_state,
        timestamps,
        retained_before,
        retained_after,
    })
}

/// Streaming reader: one record in memory at a time.
pub struct TrialReader<R> {
    input: R,
    path: PathBuf,
    line: usize,
    buf: String,
}

impl TrialReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufReader::with_capacity(1 << 16, file), path))
    }
}

impl<R: BufRead> TrialReader<R> {
    /// `path` is used for diagnostics only.
    pub fn new(input: R, path: &Path) -> Self {
        Self {
            input,
            path: path.to_path_buf(),
            line: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for TrialReader<R> {
    type Item = Result<TrialRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            }
            self.line += 1;
            let text = self.buf.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let record = match parse_trial(text) {
                Ok(r) => r,
                Err(message) => {
                    return Some(Err(Error::Parse {
                        path: self.path.display().to_string(),
                        line: self.line,
                        message,
                    }))
                }
            };
            return Some(match record.validate(None) {
                Ok(()) => Ok(record),
                Err(Error::Data(m)) => Err(Error::Data(format!("{}:{}: {m}", self.path.display(), self.line))),
                Err(e) => Err(e),
            });
        }
    }
}

pub fn load_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    TrialReader::open(path)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::PrepState;

    fn record(id: u64, ts: &[f64]) -> TrialRecord {
        TrialRecord {
            trial_id: id,
            prep_state: if id.is_multiple_of(2) { PrepState::Bright } else { PrepState::Dark },
            timestamps: ts.to_vec(),
            retained_before: true,
            retained_after: !id.is_multiple_of(3),
        }
    }

    #[test]
    fn format_is_fixed() {
        let mut out = Vec::new();
        format_trial(&mut out, &record(4, &[0.5, 12.3456789, 199.999])).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "4,bright,1,1,3,0.500,12.346,199.999\n");
        let mut out = Vec::new();
        format_trial(&mut out, &record(3, &[])).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "3,dark,1,0,0\n");
    }

    #[test]
    fn roundtrip_and_byte_identity() {
        let dir = tempfile::tempdir().unwrap();
        for records in [vec![], vec![record(0, &[1.25])], (0..500).map(|i| record(i, &[0.001 * i as f64, 100.0 + i as f64 * 0.1])).collect::<Vec<_>>()] {
            let records: Vec<_> = records
                .into_iter()
                .map(|mut r| {
                    r.timestamps = r.timestamps.iter().map(|t| (t * 1e3_f64).round() / 1e3).collect();
                    r
                })
                .collect();
            let a = dir.path().join("a.trials");
            let b = dir.path().join("b.trials");
            save_trials(&records, &a).unwrap();
            save_trials(&records, &b).unwrap();
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
            assert_eq!(load_trials(&a).unwrap(), records);
        }
    }

    #[test]
    fn malformed_lines_report_their_line() {
        let text = "# header\n0,bright,1,1,1,5.000\n1,bright,1,1,2,5.000\n";
        let err = TrialReader::new(text.as_bytes(), Path::new("x.trials"))
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("k = 2"));
            }
            e => panic!("{e:?}"),
        }
        for bad in ["0,grey,1,1,0", "0,bright,2,1,0", "x,bright,1,1,0", "0,bright,1,1,1,abc", "0,bright"] {
            let r: Result<Vec<_>> = TrialReader::new(bad.as_bytes(), Path::new("x")).collect();
            assert!(matches!(r, Err(Error::Parse { line: 1, .. })), "{bad}");
        }
    }

    #[test]
    fn unsorted_timestamps_name_the_trial() {
        let text = "41,bright,1,1,2,9.000,3.000\n";
        let err = TrialReader::new(text.as_bytes(), Path::new("x")).next().unwrap().unwrap_err();
        match err {
            Error::Data(m) => assert!(m.contains("trial 41"), "{m}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.trials");
        std::fs::write(&p, "").unwrap();
        assert!(load_trials(&p).unwrap().is_empty());
        assert!(matches!(load_trials(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
