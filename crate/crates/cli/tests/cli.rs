use std::path::Path;
use std::process::{Command, Output};

fn clinloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinloop"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn cells_lists_canonical_order() {
    let o = clinloop(&["cells"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 48);
    assert_eq!(lines[0], "safety|none|numeric|off|short");
}

#[test]
fn generate_writes_prediction_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.csv");
    let o = clinloop(&["generate", "--n", "25", "--seed", "3", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 26);
    assert!(text.starts_with("dataset,pid,true_d,true_p,pred_d,pred_p,prob_dep,prob_ptsd,phq8,pclc"));
}

#[test]
fn sweep_replay_and_manifest_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = clinloop(&["sweep", "--n-per-cell", "20", "--seed", "11", "--out", p(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["total_records"], 960);

    let rebuilt = dir.path().join("rebuilt");
    let o = clinloop(&[
        "replay",
        "--log",
        p(&a.join("decisions.jsonl")),
        "--cohort",
        p(&a.join("cohort.csv")),
        "--out",
        p(&rebuilt),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for entry in std::fs::read_dir(a.join("report")).unwrap() {
        let entry = entry.unwrap();
        let again = std::fs::read(rebuilt.join(entry.file_name())).unwrap();
        assert_eq!(std::fs::read(entry.path()).unwrap(), again, "{:?}", entry.file_name());
    }

    let b = dir.path().join("b");
    let o = clinloop(&["sweep", "--from-manifest", p(&a.join("manifest.json")), "--out", p(&b)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ma: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["cells"], mb["cells"]);

    let o = clinloop(&[
        "calibrate",
        "--log",
        p(&a.join("decisions.jsonl")),
        "--cohort",
        p(&a.join("cohort.csv")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().lines().count() >= 3);
}

#[test]
fn replay_flags_tampered_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    assert_eq!(code(&clinloop(&["sweep", "--n-per-cell", "2", "--out", p(&out)])), 0);
    let log = out.join("decisions.jsonl");
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = if lines[3].contains("\"overridden\":false") {
        lines[3].replace("\"overridden\":false", "\"overridden\":true")
    } else {
        lines[3].replace("\"overridden\":true", "\"overridden\":false")
    };
    lines.insert(5, "{broken".into());
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();

    let o = clinloop(&["replay", "--log", p(&log)]);
    assert_eq!(code(&o), 4, "strict mode stops at the broken line");
    let o = clinloop(&["replay", "--log", p(&log), "--salvage"]);
    assert_eq!(code(&o), 1);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["records"], 96);
    assert_eq!(v["parse_errors"][0][0], 6);
    assert_eq!(v["mismatches"][0]["line"], 4);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = clinloop(&["sweep", "--n-per-cell", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    let o = clinloop(&["sweep", "--cells", "safety|sideways", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    let o = clinloop(&["sweep", "--set", "policies.safety.nope=1", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    let o = clinloop(&["sweep", "--cohort-file", "/nonexistent/cohort.csv", "--out", p(&out)]);
    assert_eq!(code(&o), 4);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "n_per_cell = \"many\"\n").unwrap();
    assert_eq!(code(&clinloop(&["sweep", "--config", p(&cfg)])), 2);
}

#[test]
fn sweep_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cfg-out");
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        format!(
            "global_seed = 5\nn_per_cell = 3\ncells = [\"parsimony|confirm|banded|on|long\"]\nout_dir = {:?}\n\n[policies.safety]\nb_up = 0.1\n",
            p(&out)
        ),
    )
    .unwrap();
    let o = clinloop(&["sweep", "--config", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["total_records"], 3);
    assert_eq!(m["config"]["policies"]["safety"]["b_up"], 0.1);
}

#[test]
fn validate_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("v.json");
    let o = clinloop(&["validate", "--n-cases", "30", "--n", "10", "--friction-n", "20", "--report", p(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["parity"].as_array().unwrap().len(), 48);
}
