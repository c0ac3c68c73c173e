//! Line-by-line decision log conformance.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use clinloop_core::policy::CellId;
use clinloop_core::record::DecisionRecord;
use clinloop_core::severity::{MAX_DEPRESSION, MAX_PTSD};

use crate::ValidatorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaReport {
    pub path: String,
    pub lines: usize,
    pub records: usize,
    pub passed: bool,
    pub violations: Vec<Violation>,
}

const ACTIONS: [&str; 4] = ["down", "confirm", "up", "deferral"];
const MODES: [&str; 3] = ["batch", "api", "ui"];

fn check_line(obj: &Map<String, Value>, mut bad: impl FnMut(&str, String)) {
    let text = |k: &str, bad: &mut dyn FnMut(&str, String)| match obj.get(k) {
        Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
        Some(Value::String(_)) => {
            bad(k, "empty string".into());
            None
        }
        Some(v) => {
            bad(k, format!("expected string, got {v}"));
            None
        }
        None => {
            bad(k, "missing".into());
            None
        }
    };
    let level = |k: &str, max: u8, bad: &mut dyn FnMut(&str, String)| match obj.get(k) {
        Some(v) => match v.as_u64() {
            Some(x) if x <= max as u64 => {}
            _ => bad(k, format!("expected integer in 0..={max}, got {v}")),
        },
        None => bad(k, "missing".into()),
    };
    let number = |k: &str, lo: f64, hi: f64, required: bool, bad: &mut dyn FnMut(&str, String)| match obj.get(k) {
        Some(v) => match v.as_f64() {
            Some(x) if x.is_finite() && (lo..=hi).contains(&x) => {}
            _ => bad(k, format!("expected number in [{lo}, {hi}], got {v}")),
        },
        None if required => bad(k, "missing".into()),
        None => {}
    };

    text("dataset", &mut bad);
    text("pid", &mut bad);
    level("pred_d", MAX_DEPRESSION, &mut bad);
    level("pred_p", MAX_PTSD, &mut bad);
    level("final_d", MAX_DEPRESSION, &mut bad);
    level("final_p", MAX_PTSD, &mut bad);
    number("risk_pre", 0.0, 100.0, true, &mut bad);
    number("risk_post", 0.0, 100.0, true, &mut bad);
    number("latency_ms", 0.0, f64::MAX, true, &mut bad);
    number("latency_sim_ms", 0.0, f64::MAX, false, &mut bad);
    if let Some(a) = text("action", &mut bad) {
        if !ACTIONS.contains(&a.as_str()) {
            bad("action", format!("unknown action {a:?}"));
        }
    }
    if let Some(m) = text("mode", &mut bad) {
        if !MODES.contains(&m.as_str()) {
            bad("mode", format!("unknown mode {m:?}"));
        }
    }
    if let Some(c) = text("cell", &mut bad) {
        if let Err(e) = c.parse::<CellId>() {
            bad("cell", e.to_string());
        }
    }
    match obj.get("overridden") {
        Some(Value::Bool(_)) => {}
        Some(v) => bad("overridden", format!("expected bool, got {v}")),
        None => bad("overridden", "missing".into()),
    }
    match obj.get("seed") {
        Some(v) if v.as_u64().is_some() => {}
        Some(v) => bad("seed", format!("expected unsigned 64-bit integer, got {v}")),
        None => bad("seed", "missing".into()),
    }
    text("timestamp", &mut bad);
    match obj.get("rationale") {
        None | Some(Value::String(_)) => {}
        Some(v) => bad("rationale", format!("expected string, got {v}")),
    }
}

/// Checks every non-blank line: JSON object, every field present and typed
/// and in range, and the derived fields consistent with the inputs.
pub fn validate_schema(path: &Path) -> Result<SchemaReport, ValidatorError> {
    let io = |source| ValidatorError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut report = SchemaReport {
        path: path.display().to_string(),
        lines: 0,
        records: 0,
        passed: true,
        violations: Vec::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let mut found = Vec::new();
        match serde_json::from_str::<Value>(&line) {
            Err(e) => found.push(("line".to_string(), format!("not JSON: {e}"))),
            Ok(Value::Object(obj)) => {
                check_line(&obj, |f, m| found.push((f.to_string(), m)));
                if found.is_empty() {
                    match serde_json::from_value::<DecisionRecord>(Value::Object(obj)) {
                        Ok(rec) => {
                            found.extend(rec.verify().into_iter().map(|f| (f.to_string(), "inconsistent with inputs".into())))
                        }
                        Err(e) => found.push(("line".into(), e.to_string())),
                    }
                }
            }
            Ok(v) => found.push(("line".into(), format!("expected an object, got {v}"))),
        }
        if found.is_empty() {
            report.records += 1;
        }
        report
            .violations
            .extend(found.into_iter().map(|(field, message)| Violation { line: n, field, message }));
    }
    report.passed = report.violations.is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const GOOD: &str = r#"{"dataset":"synthetic","pid":"P1","pred_d":2,"pred_p":1,"risk_pre":50.0,"action":"up","final_d":3,"final_p":2,"risk_post":85.0,"overridden":true,"latency_ms":12.5,"mode":"api","cell":"safety|none|numeric|off|short","seed":18446744073709551615,"timestamp":"2025-10-15T12:00:00.000Z"}"#;

    fn run(lines: &[&str]) -> SchemaReport {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        validate_schema(f.path()).unwrap()
    }

    #[test]
    fn good_line_passes() {
        let r = run(&[GOOD]);
        assert!(r.passed, "{:?}", r.violations);
        assert_eq!((r.lines, r.records), (1, 1));
    }

    #[test]
    fn empty_file_is_vacuous_pass() {
        let r = run(&[]);
        assert!(r.passed);
        assert_eq!(r.lines, 0);
    }

    #[test]
    fn unknown_action_is_located() {
        let r = run(&[GOOD, &GOOD.replace("\"up\"", "\"maybe\"")]);
        assert!(!r.passed);
        assert_eq!(r.violations.len(), 1);
        assert_eq!((r.violations[0].line, r.violations[0].field.as_str()), (2, "action"));
    }

    #[test]
    fn each_problem_names_its_field() {
        let cases = [
            (GOOD.replace("\"pred_d\":2", "\"pred_d\":5"), "pred_d"),
            (GOOD.replace("\"pred_p\":1,", ""), "pred_p"),
            (GOOD.replace("\"overridden\":true", "\"overridden\":\"yes\""), "overridden"),
            (GOOD.replace("\"latency_ms\":12.5", "\"latency_ms\":-1"), "latency_ms"),
            (GOOD.replace("\"mode\":\"api\"", "\"mode\":\"fax\""), "mode"),
            (GOOD.replace("safety|none", "safety|maybe"), "cell"),
            (GOOD.replace("18446744073709551615", "-3"), "seed"),
            (GOOD.replace("\"risk_post\":85.0", "\"risk_post\":80.0"), "risk_post"),
            (GOOD.replace("\"risk_pre\":50.0", "\"risk_pre\":51.0"), "risk_pre"),
            (GOOD.replace("\"final_d\":3", "\"final_d\":4"), "final"),
            (GOOD.replace("\"overridden\":true", "\"overridden\":false"), "overridden"),
            (GOOD.replace("2025-10-15T12", "yesterday"), "timestamp"),
        ];
        for (line, field) in cases {
            let r = run(&[&line]);
            assert!(r.violations.iter().any(|v| v.field == field), "{field}: {:?}", r.violations);
            assert!(r.violations.iter().all(|v| v.line == 1));
        }
    }

    #[test]
    fn non_json_and_non_object_lines() {
        let r = run(&["{oops", "[1,2]", GOOD]);
        assert_eq!(r.violations.len(), 2);
        assert_eq!(r.violations[0].line, 1);
        assert_eq!(r.violations[1].line, 2);
        assert_eq!(r.records, 1);
    }
}
