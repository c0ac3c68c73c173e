//! The 48-cell factorial sweep.
//!
//! Every cell runs the same cohort (or, with `per_cell_cohort`, its own
//! cohort) through [`simulate_case`] with per-case seeds derived from the
//! global seed, the cell id and the case index, so a cell's records do not
//! depend on which other cells ran or on the worker count. Records are merged
//! in canonical cell order, then case order.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cohort::{generate_cohort, load_predictions, write_predictions, Case, CohortError, GeneratorConfig};
use crate::controller::{simulate_case, LatencyModel};
use crate::policy::{CellId, ModifierTable, PolicyError, PolicyTable};
use crate::record::{write_log, DecisionRecord, LogError, Mode};
use crate::report::{build_report, Report, ReportError, ReportOptions};
use crate::seed::{case_seed, indexed_seed};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("config: {0}")]
    Config(String),
    #[error("cell {cell}: {message}")]
    Cell { cell: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

impl From<PolicyError> for SweepError {
    fn from(e: PolicyError) -> Self {
        SweepError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub global_seed: u64,
    pub n_per_cell: usize,
    /// Prediction table to use instead of a generated cohort.
    pub cohort_file: Option<PathBuf>,
    pub generator: GeneratorConfig,
    /// Generate a separate cohort for each cell.
    pub per_cell_cohort: bool,
    pub policies: PolicyTable,
    pub modifiers: ModifierTable,
    pub latency: LatencyModel,
    /// Explicit cell subset; all 48 cells when `None`.
    pub cells: Option<Vec<String>>,
    pub out_dir: PathBuf,
    /// Worker threads; rayon's default when `None`.
    pub workers: Option<usize>,
    pub report: ReportOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            global_seed: 20_251_015,
            n_per_cell: 10_000,
            cohort_file: None,
            generator: GeneratorConfig::default(),
            per_cell_cohort: false,
            policies: PolicyTable::default(),
            modifiers: ModifierTable::default(),
            latency: LatencyModel::default(),
            cells: None,
            out_dir: PathBuf::from("sweep-out"),
            workers: None,
            report: ReportOptions::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.n_per_cell == 0 {
            return Err(SweepError::Config("n_per_cell must be at least 1".into()));
        }
        if self.per_cell_cohort && self.cohort_file.is_some() {
            return Err(SweepError::Config("per_cell_cohort needs a generated cohort".into()));
        }
        if self.workers == Some(0) {
            return Err(SweepError::Config("workers must be at least 1".into()));
        }
        self.policies.validate()?;
        self.selected_cells()?;
        Ok(())
    }

    pub fn selected_cells(&self) -> Result<Vec<CellId>, SweepError> {
        match &self.cells {
            None => Ok(list_cells()),
            Some(ids) => {
                let mut cells = ids
                    .iter()
                    .map(|s| s.parse::<CellId>().map_err(|e| SweepError::Config(format!("cell {s:?}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                cells.sort_by_key(CellId::ordinal);
                cells.dedup();
                if cells.is_empty() {
                    return Err(SweepError::Config("empty cell subset".into()));
                }
                Ok(cells)
            }
        }
    }
}

pub fn list_cells() -> Vec<CellId> {
    CellId::all()
}

/// The shared cohort: the first `n_per_cell` cases of the file, or a
/// generated cohort of that size.
pub fn load_cohort(cfg: &SweepConfig) -> Result<Vec<Case>, SweepError> {
    match &cfg.cohort_file {
        Some(path) => {
            let mut cases = load_predictions(path)?;
            if cases.len() < cfg.n_per_cell {
                return Err(SweepError::Config(format!(
                    "{} has {} cases, n_per_cell is {}",
                    path.display(),
                    cases.len(),
                    cfg.n_per_cell
                )));
            }
            cases.truncate(cfg.n_per_cell);
            Ok(cases)
        }
        None => Ok(generate_cohort(&GeneratorConfig {
            n_cases: cfg.n_per_cell,
            ..cfg.generator.clone()
        })?),
    }
}

/// Cohort for one cell under `per_cell_cohort`.
pub fn cell_cohort(cfg: &SweepConfig, cell: &CellId) -> Result<Vec<Case>, SweepError> {
    let gen = GeneratorConfig {
        n_cases: cfg.n_per_cell,
        seed: indexed_seed(cfg.generator.seed, cell.ordinal() as u64),
        dataset: format!("{}-c{:02}", cfg.generator.dataset, cell.ordinal()),
        ..cfg.generator.clone()
    };
    Ok(generate_cohort(&gen)?)
}

/// All records of one cell, in case order.
pub fn run_cell(cfg: &SweepConfig, cases: &[Case], cell: &CellId) -> Vec<DecisionRecord> {
    let params = cfg.policies.effective(cell.policy, &cell.condition, &cfg.modifiers);
    let label = cell.to_string();
    cases
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let seed = case_seed(cfg.global_seed, &label, i as u64);
            simulate_case(case, &params, cell, seed, &cfg.latency, Mode::Batch)
        })
        .collect()
}

/// SHA-256 over the decision-relevant fields of `records`, hex encoded.
/// Timestamps and latencies are excluded.
pub fn decision_checksum(records: &[DecisionRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(
            format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.dataset, r.pid, r.cell, r.seed, r.action, r.final_d, r.final_p, r.risk_post, r.overridden
            )
            .as_bytes(),
        );
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellChecksum {
    pub cell: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub global_seed: u64,
    pub config: SweepConfig,
    pub total_records: usize,
    pub cells: Vec<CellChecksum>,
    pub log: String,
    pub cohort: String,
    pub report_dir: String,
}

pub struct SweepOutput {
    pub records: Vec<DecisionRecord>,
    pub cases: Vec<Case>,
    pub manifest: Manifest,
    pub report: Report,
    pub log_path: PathBuf,
    pub manifest_path: PathBuf,
    pub report_dir: PathBuf,
}

fn io_err(path: &Path, source: std::io::Error) -> SweepError {
    SweepError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One cell's records in case order.
pub type CellRecords = (CellId, Vec<DecisionRecord>);

/// Simulates every selected cell without touching the filesystem.
pub fn simulate_sweep(cfg: &SweepConfig) -> Result<(Vec<Case>, Vec<CellRecords>), SweepError> {
    cfg.validate()?;
    let cells = cfg.selected_cells()?;
    let run = |shared: &[Case]| -> Result<(Vec<Case>, Vec<CellRecords>), SweepError> {
        if cfg.per_cell_cohort {
            let per: Vec<(CellId, Vec<Case>, Vec<DecisionRecord>)> = cells
                .par_iter()
                .map(|cell| {
                    let cases = cell_cohort(cfg, cell).map_err(|e| SweepError::Cell {
                        cell: cell.to_string(),
                        message: e.to_string(),
                    })?;
                    let recs = run_cell(cfg, &cases, cell);
                    Ok((*cell, cases, recs))
                })
                .collect::<Result<_, SweepError>>()?;
            let mut all_cases = Vec::new();
            let mut out = Vec::new();
            for (cell, cases, recs) in per {
                all_cases.extend(cases);
                out.push((cell, recs));
            }
            Ok((all_cases, out))
        } else {
            let out = cells.par_iter().map(|cell| (*cell, run_cell(cfg, shared, cell))).collect();
            Ok((shared.to_vec(), out))
        }
    };
    let shared = if cfg.per_cell_cohort { Vec::new() } else { load_cohort(cfg)? };
    match cfg.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SweepError::Config(format!("worker pool: {e}")))?;
            pool.install(|| run(&shared))
        }
        None => run(&shared),
    }
}

/// Runs the sweep and writes `decisions.jsonl`, `cohort.csv`,
/// `manifest.json` and the report tables under `report/` in `out_dir`.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput, SweepError> {
    let started = std::time::Instant::now();
    let (cases, per_cell) = simulate_sweep(cfg)?;
    let cells: Vec<CellChecksum> = per_cell
        .iter()
        .map(|(cell, recs)| CellChecksum {
            cell: cell.to_string(),
            records: recs.len(),
            sha256: decision_checksum(recs),
        })
        .collect();
    let records: Vec<DecisionRecord> = per_cell.into_iter().flat_map(|(_, r)| r).collect();
    tracing::info!(records = records.len(), secs = started.elapsed().as_secs_f64(), "sweep simulated");

    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let log_path = out.join("decisions.jsonl");
    write_log(&log_path, &records)?;
    let cohort_path = out.join("cohort.csv");
    let file = File::create(&cohort_path).map_err(|e| io_err(&cohort_path, e))?;
    write_predictions(BufWriter::new(file), &cases)?;

    let report = build_report(&records, Some(&cases), &cfg.report)?;
    let report_dir = out.join("report");
    report.export(&report_dir)?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        global_seed: cfg.global_seed,
        config: cfg.clone(),
        total_records: records.len(),
        cells,
        log: log_path.display().to_string(),
        cohort: cohort_path.display().to_string(),
        report_dir: report_dir.display().to_string(),
    };
    let manifest_path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(LogError::from)?;
    std::fs::write(&manifest_path, text).map_err(|e| io_err(&manifest_path, e))?;
    tracing::info!(secs = started.elapsed().as_secs_f64(), dir = %out.display(), "sweep written");
    Ok(SweepOutput {
        records,
        cases,
        manifest,
        report,
        log_path,
        manifest_path,
        report_dir,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest, SweepError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| SweepError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SweepConfig {
        SweepConfig {
            n_per_cell: n,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn one_case_per_cell_gives_48_records() {
        let (_, per_cell) = simulate_sweep(&small(1)).unwrap();
        assert_eq!(per_cell.len(), 48);
        assert_eq!(per_cell.iter().map(|(_, r)| r.len()).sum::<usize>(), 48);
        assert_eq!(per_cell[0].1[0].cell, "safety|none|numeric|off|short");
    }

    #[test]
    fn deterministic_and_cell_independent() {
        let cfg = small(40);
        let (_, a) = simulate_sweep(&cfg).unwrap();
        let (_, b) = simulate_sweep(&SweepConfig {
            workers: Some(1),
            ..cfg.clone()
        })
        .unwrap();
        for ((_, ra), (_, rb)) in a.iter().zip(&b) {
            assert_eq!(decision_checksum(ra), decision_checksum(rb));
        }
        let only = SweepConfig {
            cells: Some(vec![a[30].0.to_string()]),
            ..cfg
        };
        let (_, c) = simulate_sweep(&only).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(decision_checksum(&c[0].1), decision_checksum(&a[30].1));
    }

    #[test]
    fn config_errors() {
        assert!(small(0).validate().is_err());
        let bad = SweepConfig {
            cells: Some(vec!["safety|none".into()]),
            ..small(1)
        };
        assert!(matches!(bad.validate(), Err(SweepError::Config(_))));
        let empty = SweepConfig {
            cells: Some(vec![]),
            ..small(1)
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn per_cell_cohorts_are_distinct() {
        let cfg = SweepConfig {
            per_cell_cohort: true,
            cells: Some(vec!["safety|none|numeric|off|short".into(), "parsimony|none|numeric|off|short".into()]),
            ..small(5)
        };
        let (cases, per_cell) = simulate_sweep(&cfg).unwrap();
        assert_eq!(cases.len(), 10);
        assert_ne!(per_cell[0].1[0].dataset, per_cell[1].1[0].dataset);
    }

    #[test]
    fn run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig {
            out_dir: dir.path().to_path_buf(),
            ..small(30)
        };
        let out = run_sweep(&cfg).unwrap();
        assert_eq!(out.manifest.total_records, 48 * 30);
        let manifest = read_manifest(&out.manifest_path).unwrap();
        assert_eq!(manifest, out.manifest);
        assert_eq!(manifest.config, cfg);
        for t in crate::report::TABLES {
            assert!(out.report_dir.join(format!("{t}.csv")).exists(), "{t}");
        }
    }
}
