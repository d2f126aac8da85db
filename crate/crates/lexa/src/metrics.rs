//! `metrics.jsonl`: one flat JSON object per line, keyed by `env_step`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, LexaError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub env_step: u64,
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(env_step: u64) -> Self {
        Self {
            env_step,
            values: BTreeMap::new(),
        }
    }

    /// Stores a finite value; non-finite values are dropped with a warning.
    pub fn set(&mut self, key: impl Into<String>, value: f64) {
        let key = key.into();
        if value.is_finite() {
            self.values.insert(key, value);
        } else {
            log::warn!("metric `{key}` at step {} is not finite; dropped", self.env_step);
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

/// Appends records, flushing after each.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    last_step: Option<u64>,
}

impl MetricsWriter {
    /// Opens for appending. Records past `keep_through` (from an interrupted
    /// run) are discarded first.
    pub fn open(path: &Path, keep_through: Option<u64>) -> Result<Self> {
        let mut last_step = None;
        if let Some(limit) = keep_through {
            // Kept lines are copied verbatim so a resumed file stays
            // byte-identical to an uninterrupted one.
            let mut text = String::new();
            if path.exists() {
                for (line, record) in read_lines(path)? {
                    if record.env_step <= limit {
                        text.push_str(&line);
                        text.push('\n');
                        last_step = Some(record.env_step);
                    }
                }
            }
            fs::write(path, text).at(path)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).at(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_step,
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        if self.last_step.is_some_and(|s| record.env_step <= s) {
            return Err(LexaError::format(
                &self.path,
                format!("env_step {} does not increase past {}", record.env_step, self.last_step.unwrap_or(0)),
            ));
        }
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes()).at(&self.path)?;
        self.file.flush().at(&self.path)?;
        self.last_step = Some(record.env_step);
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<(String, MetricsRecord)>> {
    let file = File::open(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| LexaError::format(path, format!("line {}: {e}", i + 1)))?;
        out.push((line, record));
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<MetricsRecord>> {
    Ok(read_lines(path)?.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_flat_and_sorted() {
        let mut r = MetricsRecord::new(105);
        r.set("wm_loss", 1.5);
        r.set("eval/mean_success", 0.25);
        r.set("bad", f64::NAN);
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(line, r#"{"env_step":105,"eval/mean_success":0.25,"wm_loss":1.5}"#);
        let back: MetricsRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn steps_must_increase_and_resume_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut w = MetricsWriter::open(&path, None).unwrap();
        for s in [5, 10, 15] {
            w.append(&MetricsRecord::new(s)).unwrap();
        }
        assert!(w.append(&MetricsRecord::new(15)).is_err());
        drop(w);
        let mut w = MetricsWriter::open(&path, Some(10)).unwrap();
        assert!(w.append(&MetricsRecord::new(10)).is_err());
        w.append(&MetricsRecord::new(12)).unwrap();
        let steps: Vec<u64> = read(&path).unwrap().iter().map(|r| r.env_step).collect();
        assert_eq!(steps, [5, 10, 12]);
    }

    #[test]
    fn kept_lines_are_copied_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        // Seventeen significant digits do not survive a parse/print round trip.
        let text = "{\"env_step\":1,\"x\":0.99572974443435670}\n{\"env_step\":2}\n";
        fs::write(&path, text).unwrap();
        drop(MetricsWriter::open(&path, Some(1)).unwrap());
        assert_eq!(fs::read_to_string(&path).unwrap(), text.lines().next().unwrap().to_string() + "\n");
    }
}
