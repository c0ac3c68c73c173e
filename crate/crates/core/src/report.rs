//! Aggregates over a decision log: acceptance with Wilson intervals, decision
//! mixes, upward-override rates, latency percentiles, confusion matrices and
//! calibration, plus their CSV exports.
//!
//! Every table is a pure function of the records (and, for confusion and
//! calibration tables, the cohort), so identical logs export identical bytes.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{calibrate_pipeline, CalibSample, CalibrationError, CalibrationResult, PipelineConfig, Target};
use crate::cohort::Case;
use crate::policy::{CellId, Friction, TimeBudget};
use crate::record::DecisionRecord;
use crate::severity::Action;

pub const DEFAULT_Z: f64 = 1.959964;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("wilson interval needs n >= 1")]
    NoTrials,
    #[error("{k} successes exceed {n} trials")]
    TooManySuccesses { k: u64, n: u64 },
    #[error("no records")]
    Empty,
    #[error("records cover only friction={0}; need both settings")]
    OneSided(Friction),
    #[error("record {index}: cell {cell:?} is not a valid cell id")]
    BadCell { index: usize, cell: String },
    #[error("record {index}: latency {value} is negative or not finite")]
    BadLatency { index: usize, value: f64 },
    #[error("record {index}: no case for dataset {dataset:?} pid {pid:?}")]
    UnknownCase { index: usize, dataset: String, pid: String },
    #[error("calibration ({target}): {source}")]
    Calibration {
        target: &'static str,
        #[source]
        source: CalibrationError,
    },
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonInterval {
    pub k: u64,
    pub n: u64,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub z: f64,
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_ci(k: u64, n: u64, z: f64) -> Result<WilsonInterval, ReportError> {
    if n == 0 {
        return Err(ReportError::NoTrials);
    }
    if k > n {
        return Err(ReportError::TooManySuccesses { k, n });
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if k == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok(WilsonInterval {
        k,
        n,
        p_hat: p,
        lo,
        hi,
        z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Policy,
    PolicyFriction,
    Cell,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Policy, Grouping::PolicyFriction, Grouping::Cell];

    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Policy => "policy",
            Grouping::PolicyFriction => "policy_friction",
            Grouping::Cell => "cell",
        }
    }

    fn key(self, cell: &CellId) -> (usize, String) {
        match self {
            Grouping::Policy => (cell.policy as usize, cell.policy.to_string()),
            Grouping::PolicyFriction => (
                cell.policy as usize * 2 + cell.condition.friction as usize,
                format!("{}|{}", cell.policy, cell.condition.friction),
            ),
            Grouping::Cell => (cell.ordinal(), cell.to_string()),
        }
    }
}

fn parse_cells(records: &[DecisionRecord]) -> Result<Vec<CellId>, ReportError> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            r.cell.parse::<CellId>().map_err(|_| ReportError::BadCell {
                index,
                cell: r.cell.clone(),
            })
        })
        .collect()
}

/// Action counts for one group, indexed by [`Action::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRow {
    pub group: String,
    pub n: u64,
    pub counts: [u64; 4],
}

impl MixRow {
    pub fn count(&self, action: Action) -> u64 {
        self.counts[action.index()]
    }

    pub fn share(&self, action: Action) -> f64 {
        self.count(action) as f64 / self.n as f64
    }
}

fn mix_rows(records: &[DecisionRecord], cells: &[CellId], grouping: Grouping) -> Vec<MixRow> {
    let mut groups: BTreeMap<usize, MixRow> = BTreeMap::new();
    for (r, cell) in records.iter().zip(cells) {
        let (ord, label) = grouping.key(cell);
        let row = groups.entry(ord).or_insert_with(|| MixRow {
            group: label,
            n: 0,
            counts: [0; 4],
        });
        row.n += 1;
        row.counts[r.action.index()] += 1;
    }
    groups.into_values().collect()
}

/// Action proportions per group, in canonical group order.
pub fn decision_mix(records: &[DecisionRecord], grouping: Grouping) -> Result<Vec<MixRow>, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(mix_rows(records, &parse_cells(records)?, grouping))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceDelta {
    pub none: WilsonInterval,
    pub confirm: WilsonInterval,
    /// `confirm − none`, in percentage points.
    pub delta_pp: f64,
}

pub fn acceptance_delta(records: &[DecisionRecord], z: f64) -> Result<AcceptanceDelta, ReportError> {
    acceptance_from_cells(records, &parse_cells(records)?, z)
}

fn acceptance_from_cells(records: &[DecisionRecord], cells: &[CellId], z: f64) -> Result<AcceptanceDelta, ReportError> {
    let mut k = [0u64; 2];
    let mut n = [0u64; 2];
    for (r, cell) in records.iter().zip(cells) {
        let f = cell.condition.friction as usize;
        n[f] += 1;
        k[f] += u64::from(r.action == Action::Confirm);
    }
    if n[0] == 0 {
        return Err(ReportError::OneSided(Friction::Confirm));
    }
    if n[1] == 0 {
        return Err(ReportError::OneSided(Friction::None));
    }
    let none = wilson_ci(k[0], n[0], z)?;
    let confirm = wilson_ci(k[1], n[1], z)?;
    Ok(AcceptanceDelta {
        none,
        confirm,
        delta_pp: 100.0 * (confirm.p_hat - none.p_hat),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideUpTable {
    /// Per `policy|friction`, canonical order.
    pub rows: Vec<(String, WilsonInterval)>,
    pub max_cell: String,
    pub max: WilsonInterval,
}

pub fn override_up_table(records: &[DecisionRecord], z: f64) -> Result<OverrideUpTable, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let cells = parse_cells(records)?;
    override_up_from_cells(records, &cells, z)
}

fn override_up_from_cells(records: &[DecisionRecord], cells: &[CellId], z: f64) -> Result<OverrideUpTable, ReportError> {
    let up = |row: &MixRow| wilson_ci(row.count(Action::OverrideUp), row.n, z);
    let rows = mix_rows(records, cells, Grouping::PolicyFriction)
        .iter()
        .map(|row| Ok((row.group.clone(), up(row)?)))
        .collect::<Result<Vec<_>, ReportError>>()?;
    let mut best: Option<(String, WilsonInterval)> = None;
    for row in mix_rows(records, cells, Grouping::Cell) {
        let ci = up(&row)?;
        // Strictly greater keeps the first cell in canonical order on ties.
        if best.as_ref().is_none_or(|(_, b)| ci.p_hat > b.p_hat) {
            best = Some((row.group, ci));
        }
    }
    let (max_cell, max) = best.ok_or(ReportError::Empty)?;
    Ok(OverrideUpTable { rows, max_cell, max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub min: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    pub mean: f64,
}

/// Nearest-rank percentile of ascending `sorted`: the value at rank
/// `ceil(q/100 · n)`.
pub fn percentile_nearest_rank(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn sorted_latencies(records: &[DecisionRecord]) -> Result<Vec<f64>, ReportError> {
    let mut v = Vec::with_capacity(records.len());
    for (index, r) in records.iter().enumerate() {
        if !(r.latency_ms.is_finite() && r.latency_ms >= 0.0) {
            return Err(ReportError::BadLatency {
                index,
                value: r.latency_ms,
            });
        }
        v.push(r.latency_ms);
    }
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub fn stats_of_sorted(sorted: &[f64]) -> LatencyStats {
    LatencyStats {
        n: sorted.len(),
        min: sorted[0],
        p50: percentile_nearest_rank(sorted, 50.0),
        p90: percentile_nearest_rank(sorted, 90.0),
        p95: percentile_nearest_rank(sorted, 95.0),
        p99: percentile_nearest_rank(sorted, 99.0),
        max: sorted[sorted.len() - 1],
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
    }
}

pub fn latency_stats(records: &[DecisionRecord]) -> Result<LatencyStats, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(stats_of_sorted(&sorted_latencies(records)?))
}

/// Empirical CDF as `(ms, fraction ≤ ms)`. With at most `max_points`
/// distinct values every value is listed; otherwise the CDF is sampled at
/// `max_points` evenly spaced ranks.
pub fn latency_cdf(sorted: &[f64], max_points: usize) -> Vec<(f64, f64)> {
    let n = sorted.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut push = |rank: usize| {
        let v = sorted[rank - 1];
        let frac = rank as f64 / n as f64;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    };
    let mut distinct = 0;
    for i in 0..n {
        if i + 1 == n || sorted[i + 1] != sorted[i] {
            distinct += 1;
        }
    }
    if distinct <= max_points.max(1) {
        for i in 0..n {
            if i + 1 == n || sorted[i + 1] != sorted[i] {
                push(i + 1);
            }
        }
    } else {
        let m = max_points.max(1);
        for i in 1..=m {
            push((i * n).div_ceil(m));
        }
    }
    out
}

/// Latency statistics per `friction|time` group.
pub fn latency_by_group(records: &[DecisionRecord]) -> Result<Vec<(String, LatencyStats)>, ReportError> {
    let cells = parse_cells(records)?;
    latency_groups_from_cells(records, &cells)
}

fn latency_groups_from_cells(records: &[DecisionRecord], cells: &[CellId]) -> Result<Vec<(String, LatencyStats)>, ReportError> {
    let mut groups: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    for (index, (r, cell)) in records.iter().zip(cells).enumerate() {
        if !(r.latency_ms.is_finite() && r.latency_ms >= 0.0) {
            return Err(ReportError::BadLatency {
                index,
                value: r.latency_ms,
            });
        }
        let c = &cell.condition;
        let ord = c.friction as usize * 2 + usize::from(c.time_budget == TimeBudget::Long);
        groups
            .entry(ord)
            .or_insert_with(|| (format!("{}|{}", c.friction, c.time_budget), Vec::new()))
            .1
            .push(r.latency_ms);
    }
    Ok(groups
        .into_values()
        .map(|(label, mut v)| {
            v.sort_by(f64::total_cmp);
            (label, stats_of_sorted(&v))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pre,
    Post,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Post => "post",
        }
    }
}

/// Rows are truth, columns the decided class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub target: Target,
    pub stage: Stage,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    fn new(target: Target, stage: Stage) -> Self {
        let k = match target {
            Target::Depression => 5,
            Target::Ptsd => 3,
        };
        Self {
            target,
            stage,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub type CaseIndex<'a> = HashMap<(&'a str, &'a str), &'a Case>;

pub fn index_cases(cases: &[Case]) -> CaseIndex<'_> {
    cases.iter().map(|c| ((c.dataset.as_str(), c.pid.as_str()), c)).collect()
}

fn resolve<'a>(index: &CaseIndex<'a>, i: usize, r: &DecisionRecord) -> Result<&'a Case, ReportError> {
    index
        .get(&(r.dataset.as_str(), r.pid.as_str()))
        .copied()
        .ok_or_else(|| ReportError::UnknownCase {
            index: i,
            dataset: r.dataset.clone(),
            pid: r.pid.clone(),
        })
}

/// Pre (truth vs prediction) and post (truth vs final decision) matrices for
/// both targets, in the order depression pre, depression post, PTSD pre,
/// PTSD post.
pub fn confusion_matrices(records: &[DecisionRecord], cases: &CaseIndex<'_>) -> Result<Vec<ConfusionMatrix>, ReportError> {
    let mut out = vec![
        ConfusionMatrix::new(Target::Depression, Stage::Pre),
        ConfusionMatrix::new(Target::Depression, Stage::Post),
        ConfusionMatrix::new(Target::Ptsd, Stage::Pre),
        ConfusionMatrix::new(Target::Ptsd, Stage::Post),
    ];
    for (i, r) in records.iter().enumerate() {
        let case = resolve(cases, i, r)?;
        let (td, tp) = (case.truth.depression() as usize, case.truth.ptsd() as usize);
        out[0].counts[td][r.pred_d as usize] += 1;
        out[1].counts[td][r.final_d as usize] += 1;
        out[2].counts[tp][r.pred_p as usize] += 1;
        out[3].counts[tp][r.final_p as usize] += 1;
    }
    Ok(out)
}

/// One calibration sample per record, keyed by participant.
pub fn calibration_samples(
    records: &[DecisionRecord],
    cases: &CaseIndex<'_>,
    target: Target,
) -> Result<Vec<CalibSample>, ReportError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let case = resolve(cases, i, r)?;
            let (prob, label) = match target {
                Target::Depression => (case.prob_dep, case.depression_positive()),
                Target::Ptsd => (case.prob_ptsd, case.ptsd_positive()),
            };
            Ok(CalibSample {
                participant_id: case.pid.clone(),
                prob,
                label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub n: u64,
    pub counts: [u64; 4],
    pub acceptance: WilsonInterval,
    pub mean_delta_risk: f64,
    pub latency: LatencyStats,
}

fn cell_summaries(records: &[DecisionRecord], cells: &[CellId], z: f64) -> Result<Vec<CellSummary>, ReportError> {
    struct Acc {
        label: String,
        counts: [u64; 4],
        delta: f64,
        lat: Vec<f64>,
    }
    let mut groups: BTreeMap<usize, Acc> = BTreeMap::new();
    for (r, cell) in records.iter().zip(cells) {
        let acc = groups.entry(cell.ordinal()).or_insert_with(|| Acc {
            label: cell.to_string(),
            counts: [0; 4],
            delta: 0.0,
            lat: Vec::new(),
        });
        acc.counts[r.action.index()] += 1;
        acc.delta += r.risk_post - r.risk_pre;
        acc.lat.push(r.latency_ms);
    }
    groups
        .into_values()
        .map(|mut a| {
            let n = a.lat.len() as u64;
            a.lat.sort_by(f64::total_cmp);
            Ok(CellSummary {
                cell: a.label,
                n,
                counts: a.counts,
                acceptance: wilson_ci(a.counts[Action::Confirm.index()], n, z)?,
                mean_delta_risk: a.delta / n as f64,
                latency: stats_of_sorted(&a.lat),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub z: f64,
    pub cdf_points: usize,
    pub calibration: PipelineConfig,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            z: DEFAULT_Z,
            cdf_points: 1000,
            calibration: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_records: usize,
    pub forest: Vec<CellSummary>,
    pub mix: Vec<(Grouping, Vec<MixRow>)>,
    pub acceptance: Option<AcceptanceDelta>,
    pub override_up: Option<OverrideUpTable>,
    pub latency: Option<LatencyStats>,
    pub latency_cdf: Vec<(f64, f64)>,
    pub latency_groups: Vec<(String, LatencyStats)>,
    pub confusion: Vec<ConfusionMatrix>,
    pub calibration: Vec<(Target, CalibrationResult)>,
}

/// Builds every table. Confusion and calibration tables need the cohort and
/// are left empty without it.
pub fn build_report(records: &[DecisionRecord], cases: Option<&[Case]>, opts: &ReportOptions) -> Result<Report, ReportError> {
    let cells = parse_cells(records)?;
    let sorted = sorted_latencies(records)?;
    let mut report = Report {
        n_records: records.len(),
        forest: cell_summaries(records, &cells, opts.z)?,
        mix: Grouping::ALL.iter().map(|&g| (g, mix_rows(records, &cells, g))).collect(),
        acceptance: acceptance_from_cells(records, &cells, opts.z).ok(),
        override_up: if records.is_empty() {
            None
        } else {
            Some(override_up_from_cells(records, &cells, opts.z)?)
        },
        latency: (!sorted.is_empty()).then(|| stats_of_sorted(&sorted)),
        latency_cdf: latency_cdf(&sorted, opts.cdf_points),
        latency_groups: latency_groups_from_cells(records, &cells)?,
        confusion: Vec::new(),
        calibration: Vec::new(),
    };
    if let Some(cases) = cases {
        let index = index_cases(cases);
        if !records.is_empty() {
            report.confusion = confusion_matrices(records, &index)?;
            for target in Target::ALL {
                let samples = calibration_samples(records, &index, target)?;
                let result = calibrate_pipeline(&samples, &opts.calibration).map_err(|source| ReportError::Calibration {
                    target: target.as_str(),
                    source,
                })?;
                report.calibration.push((target, result));
            }
        }
    }
    Ok(report)
}

/// Names of the exported tables; each is written as `<name>.csv`.
pub const TABLES: [&str; 9] = [
    "forest",
    "decision_mix",
    "override_up",
    "latency_cdf",
    "latency_by_group",
    "calibration_curve",
    "calibration_summary",
    "confusion_matrix",
    "key_metrics",
];

fn p6(x: f64) -> String {
    format!("{x:.6}")
}

fn ms(x: f64) -> String {
    format!("{x:.4}")
}

fn opt6(x: Option<f64>) -> String {
    x.map(p6).unwrap_or_default()
}

fn table<const N: usize>(header: [&str; N], rows: Vec<Vec<String>>) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

impl Report {
    /// Renders one table as CSV text.
    pub fn table_csv(&self, name: &str) -> Result<String, ReportError> {
        match name {
            "forest" => table(
                [
                    "cell", "n", "n_down", "n_confirm", "n_up", "n_deferral", "accept", "accept_lo", "accept_hi",
                    "mean_delta_risk", "p50_ms", "p90_ms", "p95_ms", "p99_ms",
                ],
                self.forest
                    .iter()
                    .map(|s| {
                        let mut row = vec![s.cell.clone(), s.n.to_string()];
                        row.extend(s.counts.iter().map(u64::to_string));
                        row.extend([
                            p6(s.acceptance.p_hat),
                            p6(s.acceptance.lo),
                            p6(s.acceptance.hi),
                            p6(s.mean_delta_risk),
                            ms(s.latency.p50),
                            ms(s.latency.p90),
                            ms(s.latency.p95),
                            ms(s.latency.p99),
                        ]);
                        row
                    })
                    .collect(),
            ),
            "decision_mix" => table(
                ["grouping", "group", "n", "accept", "up", "down", "deferral"],
                self.mix
                    .iter()
                    .flat_map(|(g, rows)| {
                        rows.iter().map(move |r| {
                            vec![
                                g.as_str().to_string(),
                                r.group.clone(),
                                r.n.to_string(),
                                p6(r.share(Action::Confirm)),
                                p6(r.share(Action::OverrideUp)),
                                p6(r.share(Action::OverrideDown)),
                                p6(r.share(Action::Deferral)),
                            ]
                        })
                    })
                    .collect(),
            ),
            "override_up" => {
                let mut rows: Vec<Vec<String>> = Vec::new();
                if let Some(t) = &self.override_up {
                    for (group, ci) in &t.rows {
                        rows.push(vec![
                            "policy_friction".into(),
                            group.clone(),
                            ci.n.to_string(),
                            ci.k.to_string(),
                            p6(ci.p_hat),
                            p6(ci.lo),
                            p6(ci.hi),
                        ]);
                    }
                    rows.push(vec![
                        "max_cell".into(),
                        t.max_cell.clone(),
                        t.max.n.to_string(),
                        t.max.k.to_string(),
                        p6(t.max.p_hat),
                        p6(t.max.lo),
                        p6(t.max.hi),
                    ]);
                }
                table(["scope", "group", "n", "k", "rate", "lo", "hi"], rows)
            }
            "latency_cdf" => table(
                ["ms", "fraction"],
                self.latency_cdf.iter().map(|&(v, f)| vec![ms(v), p6(f)]).collect(),
            ),
            "latency_by_group" => table(
                ["group", "n", "min_ms", "p50_ms", "p90_ms", "p95_ms", "p99_ms", "max_ms", "mean_ms"],
                self.latency
                    .iter()
                    .map(|s| ("all".to_string(), s))
                    .chain(self.latency_groups.iter().map(|(g, s)| (g.clone(), s)))
                    .map(|(g, s)| {
                        vec![
                            g,
                            s.n.to_string(),
                            ms(s.min),
                            ms(s.p50),
                            ms(s.p90),
                            ms(s.p95),
                            ms(s.p99),
                            ms(s.max),
                            ms(s.mean),
                        ]
                    })
                    .collect(),
            ),
            "calibration_curve" => table(
                ["target", "stage", "bin", "lo", "hi", "count", "mean_pred", "frac_pos"],
                self.calibration
                    .iter()
                    .flat_map(|(target, r)| {
                        [(Stage::Pre, &r.curve_pre), (Stage::Post, &r.curve_post)]
                            .into_iter()
                            .flat_map(move |(stage, curve)| {
                                curve.iter().enumerate().map(move |(i, b)| {
                                    vec![
                                        target.as_str().to_string(),
                                        stage.as_str().to_string(),
                                        i.to_string(),
                                        p6(b.lo),
                                        p6(b.hi),
                                        b.count.to_string(),
                                        opt6(b.mean_pred),
                                        opt6(b.frac_pos),
                                    ]
                                })
                            })
                    })
                    .collect(),
            ),
            "calibration_summary" => table(
                [
                    "target", "model", "n_fit", "n_eval", "ece_pre", "ece_post", "mce_pre", "mce_post", "auc_pre",
                    "auc_post",
                ],
                self.calibration
                    .iter()
                    .map(|(target, r)| {
                        vec![
                            target.as_str().to_string(),
                            r.model.kind().to_string(),
                            r.n_fit.to_string(),
                            r.n_eval.to_string(),
                            p6(r.pre.ece),
                            p6(r.post.ece),
                            p6(r.pre.mce),
                            p6(r.post.mce),
                            opt6(r.auc_pre),
                            opt6(r.auc_post),
                        ]
                    })
                    .collect(),
            ),
            "confusion_matrix" => table(
                ["target", "stage", "truth", "decided", "count"],
                self.confusion
                    .iter()
                    .flat_map(|m| {
                        m.counts.iter().enumerate().flat_map(move |(t, row)| {
                            row.iter().enumerate().map(move |(d, c)| {
                                vec![
                                    m.target.as_str().to_string(),
                                    m.stage.as_str().to_string(),
                                    t.to_string(),
                                    d.to_string(),
                                    c.to_string(),
                                ]
                            })
                        })
                    })
                    .collect(),
            ),
            "key_metrics" => {
                let mut rows = Vec::new();
                if let Some(a) = &self.acceptance {
                    rows.push(vec![
                        "acceptance_delta_pp".into(),
                        format!("{:.4}", a.delta_pp),
                        format!(
                            "confirm {} [{}, {}]; none {} [{}, {}]",
                            p6(a.confirm.p_hat),
                            p6(a.confirm.lo),
                            p6(a.confirm.hi),
                            p6(a.none.p_hat),
                            p6(a.none.lo),
                            p6(a.none.hi)
                        ),
                    ]);
                }
                if let Some(t) = &self.override_up {
                    rows.push(vec![
                        "max_override_up".into(),
                        p6(t.max.p_hat),
                        format!("{} [{}, {}]", t.max_cell, p6(t.max.lo), p6(t.max.hi)),
                    ]);
                }
                if let Some(l) = &self.latency {
                    rows.push(vec!["p95_latency_ms".into(), ms(l.p95), format!("n {}", l.n)]);
                }
                table(["metric", "value", "detail"], rows)
            }
            other => Err(ReportError::UnknownTable(other.to_string())),
        }
    }

    /// Writes every table into `dir` (created if missing) and returns the
    /// paths in [`TABLES`] order.
    pub fn export(&self, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
        std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        TABLES
            .iter()
            .map(|name| {
                let path = dir.join(format!("{name}.csv"));
                std::fs::write(&path, self.table_csv(name)?).map_err(|source| ReportError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                Ok(path)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::tests::sample;

    fn rec(action: Action, cell: &str, latency: f64) -> DecisionRecord {
        let mut r = sample(action);
        r.cell = cell.into();
        r.latency_ms = latency;
        r
    }

    #[test]
    fn wilson_examples() {
        let ci = wilson_ci(0, 1, 1.96).unwrap();
        assert_eq!(ci.lo, 0.0);
        assert!((ci.hi - 1.96f64.powi(2) / (1.0 + 1.96f64.powi(2))).abs() < 1e-12);
        for n in [1u64, 7, 100] {
            let ci = wilson_ci(n, n, DEFAULT_Z).unwrap();
            assert_eq!(ci.hi, 1.0);
            let z2 = DEFAULT_Z * DEFAULT_Z;
            assert!((ci.lo - n as f64 / (n as f64 + z2)).abs() < 1e-12);
        }
        let n = 10_000;
        let ci = wilson_ci(n / 2, n, DEFAULT_Z).unwrap();
        let normal = DEFAULT_Z * (0.25 / n as f64).sqrt();
        assert!(((ci.hi - ci.lo) / 2.0 / normal - 1.0).abs() < 0.01);
        assert!(matches!(wilson_ci(0, 0, 1.96), Err(ReportError::NoTrials)));
        assert!(wilson_ci(3, 2, 1.96).is_err());
    }

    #[test]
    fn wilson_shrinks_with_n() {
        let a = wilson_ci(3, 10, DEFAULT_Z).unwrap();
        let b = wilson_ci(30, 100, DEFAULT_Z).unwrap();
        assert!(b.hi - b.lo < a.hi - a.lo);
        assert!(a.lo <= a.p_hat && a.p_hat <= a.hi);
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=10).map(|i| f64::from(i) * 10.0).collect();
        assert_eq!(percentile_nearest_rank(&v, 50.0), 50.0);
        assert_eq!(percentile_nearest_rank(&v, 95.0), 100.0);
        assert_eq!(percentile_nearest_rank(&v, 0.0), 10.0);
        let s = stats_of_sorted(&[7.0]);
        assert_eq!((s.min, s.p50, s.p99, s.max), (7.0, 7.0, 7.0, 7.0));
    }

    #[test]
    fn cdf_lists_distinct_values_or_caps() {
        let cdf = latency_cdf(&[1.0, 1.0, 2.0, 3.0], 10);
        assert_eq!(cdf, vec![(1.0, 0.5), (2.0, 0.75), (3.0, 1.0)]);
        let many: Vec<f64> = (0..10_000).map(f64::from).collect();
        let capped = latency_cdf(&many, 100);
        assert_eq!(capped.len(), 100);
        assert_eq!(capped.last().unwrap().1, 1.0);
        assert!(capped.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        assert!(latency_cdf(&[], 10).is_empty());
    }

    #[test]
    fn mix_all_confirm() {
        let recs: Vec<_> = ["safety|none|numeric|off|short", "deferral|confirm|banded|on|long"]
            .iter()
            .map(|c| rec(Action::Confirm, c, 1.0))
            .collect();
        for g in Grouping::ALL {
            for row in decision_mix(&recs, g).unwrap() {
                assert_eq!(row.share(Action::Confirm), 1.0);
            }
        }
        let up = override_up_table(&recs, DEFAULT_Z).unwrap();
        assert!(up.rows.iter().all(|(_, ci)| ci.k == 0));
        assert_eq!(up.max.p_hat, 0.0);
        assert_eq!(up.max_cell, "safety|none|numeric|off|short");
    }

    #[test]
    fn acceptance_needs_both_frictions() {
        let recs = vec![rec(Action::Confirm, "safety|none|numeric|off|short", 1.0)];
        assert!(matches!(acceptance_delta(&recs, DEFAULT_Z), Err(ReportError::OneSided(_))));
        let recs = vec![
            rec(Action::OverrideUp, "safety|none|numeric|off|short", 1.0),
            rec(Action::Confirm, "safety|none|numeric|off|short", 1.0),
            rec(Action::Confirm, "safety|confirm|numeric|off|short", 1.0),
        ];
        let d = acceptance_delta(&recs, DEFAULT_Z).unwrap();
        assert!((d.delta_pp - 50.0).abs() < 1e-9);
    }

    #[test]
    fn bad_inputs_are_located() {
        let recs = vec![rec(Action::Confirm, "safety|none|numeric|off|short", 1.0), rec(Action::Confirm, "bogus", 1.0)];
        assert!(matches!(decision_mix(&recs, Grouping::Policy), Err(ReportError::BadCell { index: 1, .. })));
        let recs = vec![rec(Action::Confirm, "safety|none|numeric|off|short", -1.0)];
        assert!(matches!(latency_stats(&recs), Err(ReportError::BadLatency { index: 0, .. })));
    }

    #[test]
    fn empty_report_exports_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let report = build_report(&[], Some(&[]), &ReportOptions::default()).unwrap();
        let paths = report.export(dir.path()).unwrap();
        assert_eq!(paths.len(), TABLES.len());
        for p in paths {
            let text = std::fs::read_to_string(&p).unwrap();
            assert_eq!(text.lines().count(), 1, "{}", p.display());
        }
        assert!(matches!(report.table_csv("nope"), Err(ReportError::UnknownTable(_))));
    }
}
