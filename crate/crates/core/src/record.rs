//! The decision log: one JSON object per line, append-only.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::severity::{apply_action, risk, Action, SeverityPair};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("serialising record: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Batch,
    Api,
    Ui,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub dataset: String,
    pub pid: String,
    pub pred_d: u8,
    pub pred_p: u8,
    pub risk_pre: f64,
    pub action: Action,
    pub final_d: u8,
    pub final_p: u8,
    pub risk_post: f64,
    pub overridden: bool,
    pub latency_ms: f64,
    pub mode: Mode,
    pub cell: String,
    pub seed: u64,
    pub timestamp: String,
    /// Simulated deliberation share of `latency_ms`, when one was added.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_sim_ms: Option<f64>,
    /// Free-text attestation captured with a confirmed override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// The fields that must agree between two runs of the same decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionFields {
    pub action: Action,
    pub final_d: u8,
    pub final_p: u8,
    pub risk_post: f64,
    pub overridden: bool,
}

pub fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl DecisionRecord {
    pub fn decision_fields(&self) -> DecisionFields {
        DecisionFields {
            action: self.action,
            final_d: self.final_d,
            final_p: self.final_p,
            risk_post: self.risk_post,
            overridden: self.overridden,
        }
    }

    /// Recomputes the derived fields from the logged inputs and names every
    /// one that disagrees.
    pub fn verify(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        let Ok(pred) = SeverityPair::new(self.pred_d, self.pred_p) else {
            bad.push("pred");
            return bad;
        };
        if self.risk_pre != risk(pred).value() {
            bad.push("risk_pre");
        }
        let out = apply_action(pred, self.action);
        if (self.final_d, self.final_p) != (out.final_pair.depression(), out.final_pair.ptsd()) {
            bad.push("final");
        }
        match SeverityPair::new(self.final_d, self.final_p) {
            Ok(fin) if self.risk_post == risk(fin).value() => {}
            _ => bad.push("risk_post"),
        }
        if self.overridden != out.overridden {
            bad.push("overridden");
        }
        if !(self.latency_ms.is_finite() && self.latency_ms >= 0.0) {
            bad.push("latency_ms");
        }
        if chrono::DateTime::parse_from_rfc3339(&self.timestamp).is_err() {
            bad.push("timestamp");
        }
        bad
    }

    pub fn to_line(&self) -> Result<String, LogError> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Appends records to a log file. Each record is written with one
/// `write_all` call so a line is never interleaved with another.
pub struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| io_err(path, source))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, rec: &DecisionRecord) -> Result<(), LogError> {
        let line = rec.to_line()?;
        self.out.write_all(line.as_bytes()).map_err(|e| io_err(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

impl Drop for LogWriter {
    fn drop(&mut self) {
        if let Err(e) = self.out.flush() {
            tracing::error!(path = %self.path.display(), "flushing log: {e}");
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> LogError {
    LogError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    /// Abort on the first malformed line.
    Strict,
    /// Skip malformed lines and report them.
    Salvage,
}

#[derive(Debug, Default)]
pub struct LogContents {
    pub records: Vec<DecisionRecord>,
    /// 1-based line numbers of the records, parallel to `records`.
    pub lines: Vec<usize>,
    pub errors: Vec<(usize, String)>,
}

pub fn read_log(path: &Path, mode: ReadMode) -> Result<LogContents, LogError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_log(BufReader::new(file), mode).map_err(|e| match e {
        LogError::Io { source, .. } => io_err(path, source),
        other => other,
    })
}

pub fn parse_log<R: BufRead>(reader: R, mode: ReadMode) -> Result<LogContents, LogError> {
    let mut out = LogContents::default();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|source| LogError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DecisionRecord>(&line) {
            Ok(rec) => {
                out.records.push(rec);
                out.lines.push(n);
            }
            Err(e) if mode == ReadMode::Salvage => out.errors.push((n, e.to_string())),
            Err(e) => {
                return Err(LogError::Parse {
                    line: n,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_log(path: &Path, records: &[DecisionRecord]) -> Result<(), LogError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        out.write_all(rec.to_line()?.as_bytes()).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample(action: Action) -> DecisionRecord {
        let pred = SeverityPair::new(2, 1).unwrap();
        let out = apply_action(pred, action);
        DecisionRecord {
            dataset: "synthetic".into(),
            pid: "P00001".into(),
            pred_d: 2,
            pred_p: 1,
            risk_pre: risk(pred).value(),
            action,
            final_d: out.final_pair.depression(),
            final_p: out.final_pair.ptsd(),
            risk_post: out.risk_star.value(),
            overridden: out.overridden,
            latency_ms: 0.123456789,
            mode: Mode::Batch,
            cell: "safety|none|numeric|off|short".into(),
            seed: u64::MAX - 7,
            timestamp: "2025-10-15T12:00:00.000Z".into(),
            latency_sim_ms: None,
            rationale: None,
        }
    }

    #[test]
    fn line_round_trip_is_lossless() {
        let mut rec = sample(Action::OverrideUp);
        rec.latency_ms = 0.1 + 0.2;
        rec.rationale = Some("patient reported \"worse\" sleep".into());
        let line = rec.to_line().unwrap();
        assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
        let back: DecisionRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn optional_fields_are_omitted() {
        let line = sample(Action::Confirm).to_line().unwrap();
        assert!(!line.contains("rationale") && !line.contains("latency_sim_ms"));
        assert!(line.contains("\"action\":\"confirm\""));
        assert!(line.contains("\"mode\":\"batch\""));
    }

    #[test]
    fn verify_flags_corruption() {
        for a in Action::ALL {
            assert!(sample(a).verify().is_empty(), "{a}");
        }
        let mut rec = sample(Action::OverrideUp);
        rec.risk_post = 55.0;
        assert_eq!(rec.verify(), vec!["risk_post"]);
        let mut rec = sample(Action::Deferral);
        rec.overridden = false;
        assert_eq!(rec.verify(), vec!["overridden"]);
    }

    #[test]
    fn strict_and_salvage_reading() {
        let good = sample(Action::OverrideDown).to_line().unwrap();
        let text = format!("{good}{{not json\n{good}");
        let err = parse_log(text.as_bytes(), ReadMode::Strict).unwrap_err();
        assert!(matches!(err, LogError::Parse { line: 2, .. }));
        let got = parse_log(text.as_bytes(), ReadMode::Salvage).unwrap();
        assert_eq!(got.records.len(), 2);
        assert_eq!(got.lines, vec![1, 3]);
        assert_eq!(got.errors.len(), 1);
        assert_eq!(got.errors[0].0, 2);
    }

    #[test]
    fn unknown_action_is_rejected() {
        let line = sample(Action::OverrideUp).to_line().unwrap().replace("\"up\"", "\"maybe\"");
        assert!(parse_log(line.as_bytes(), ReadMode::Strict).is_err());
    }

    #[test]
    fn writer_appends_without_touching_existing_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let mut w = LogWriter::open(&path).unwrap();
            w.append(&sample(Action::Confirm)).unwrap();
        }
        let first = std::fs::read(&path).unwrap();
        {
            let mut w = LogWriter::open(&path).unwrap();
            w.append(&sample(Action::OverrideUp)).unwrap();
        }
        let both = std::fs::read(&path).unwrap();
        assert!(both.starts_with(&first));
        let got = read_log(&path, ReadMode::Strict).unwrap();
        assert_eq!(got.records.len(), 2);
    }
}
