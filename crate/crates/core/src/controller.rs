//! The decision codepath shared by batch runs and the HTTP service.
//!
//! [`simulate_case`] is the whole simulated decision: risk, policy draw,
//! friction, `apply_action`, record. Batch sweeps call it directly; the
//! service calls it through [`Controller::apply`] for simulated actors, so a
//! seed produces the same decision on both paths. Human actors go through the
//! soft-stop protocol instead: an override under confirm friction first
//! returns a single-use token, and only the call presenting it finalizes.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{generate_evidence, Case, EvidenceBundle, EvidenceConfig};
use crate::evidence::{
    channel_runs, EvidenceError, cue_ribbon, keyword_contrast, streak_totals, Channel, CueRibbon, KeywordTable, Run, StreakParams,
    StreakTotals,
};
use crate::policy::{decide_action_traced, CellId, Friction, ModifierTable, PolicyError, PolicyParams, PolicyTable, TimeBudget};
use crate::record::{now_rfc3339, DecisionRecord, LogContents, LogError, LogWriter, Mode};
use crate::report::{build_report, Report, ReportError, ReportOptions};
use crate::seed::{case_seed, rng_from};
use crate::severity::{apply_action, risk, Action, DecisionOutcome, RiskScore, SeverityPair};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("no case {pid:?} in dataset {dataset:?}")]
    UnknownCase { dataset: String, pid: String },
    #[error("duplicate case {pid:?} in dataset {dataset:?}")]
    DuplicateCase { dataset: String, pid: String },
    #[error("no session {0:?}")]
    UnknownSession(String),
    #[error("a human decision needs an action")]
    MissingAction,
    #[error("confirmation token already used")]
    TokenReplay,
    #[error("confirmation token does not match the pending decision")]
    InvalidToken,
    #[error("case {pid:?} in dataset {dataset:?} is already decided in this session")]
    AlreadyDecided { dataset: String, pid: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Simulated deliberation time, lognormal per (friction, time budget).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub enabled: bool,
    /// Median milliseconds, indexed `[friction][time]` with none/short first.
    pub median_ms: [[f64; 2]; 2],
    /// Log-scale standard deviation.
    pub sigma: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            enabled: true,
            median_ms: [[55.0, 68.0], [60.0, 74.0]],
            sigma: 0.45,
        }
    }
}

impl LatencyModel {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, friction: Friction, time: TimeBudget, rng: &mut R) -> Option<f64> {
        if !self.enabled {
            return None;
        }
        let median = self.median_ms[friction as usize][usize::from(time == TimeBudget::Long)];
        let dist = LogNormal::new(median.ln(), self.sigma).expect("finite lognormal parameters");
        Some(dist.sample(rng))
    }
}

/// Builds the record for a finalized decision.
#[allow(clippy::too_many_arguments)]
fn finalize(
    case: &Case,
    action: Action,
    mode: Mode,
    cell: &str,
    seed: u64,
    measured_ms: f64,
    sim_ms: Option<f64>,
    rationale: Option<String>,
) -> (DecisionOutcome, DecisionRecord) {
    let outcome = apply_action(case.pred, action);
    let record = DecisionRecord {
        dataset: case.dataset.clone(),
        pid: case.pid.clone(),
        pred_d: case.pred.depression(),
        pred_p: case.pred.ptsd(),
        risk_pre: risk(case.pred).value(),
        action,
        final_d: outcome.final_pair.depression(),
        final_p: outcome.final_pair.ptsd(),
        risk_post: outcome.risk_star.value(),
        overridden: outcome.overridden,
        latency_ms: measured_ms + sim_ms.unwrap_or(0.0),
        mode,
        cell: cell.to_string(),
        seed,
        timestamp: now_rfc3339(),
        latency_sim_ms: sim_ms,
        rationale,
    };
    (outcome, record)
}

/// One simulated decision. `params` are the cell's effective parameters and
/// `seed` the per-case seed; the draw order is the policy's four noise
/// terms, the categorical draw, then the deliberation time.
pub fn simulate_case(
    case: &Case,
    params: &PolicyParams,
    cell: &CellId,
    seed: u64,
    latency: &LatencyModel,
    mode: Mode,
) -> DecisionRecord {
    simulate_outcome(case, params, cell, &cell.to_string(), seed, latency, mode).1
}

fn simulate_outcome(
    case: &Case,
    params: &PolicyParams,
    cell: &CellId,
    cell_label: &str,
    seed: u64,
    latency: &LatencyModel,
    mode: Mode,
) -> (DecisionOutcome, DecisionRecord) {
    let start = Instant::now();
    let mut rng = rng_from(seed);
    let trace = decide_action_traced(case.pred, risk(case.pred), params, &mut rng);
    let sim = latency.sample(cell.condition.friction, cell.condition.time_budget, &mut rng);
    let measured = start.elapsed().as_secs_f64() * 1e3;
    finalize(case, trace.action, mode, cell_label, seed, measured, sim, None)
}

/// A loaded cohort with lookup by (dataset, pid).
#[derive(Debug, Clone, Default)]
pub struct Cohort {
    cases: Vec<Case>,
    index: HashMap<(String, String), usize>,
}

impl Cohort {
    pub fn new(cases: Vec<Case>) -> Result<Self, ControllerError> {
        let mut index = HashMap::with_capacity(cases.len());
        for (i, c) in cases.iter().enumerate() {
            if index.insert((c.dataset.clone(), c.pid.clone()), i).is_some() {
                return Err(ControllerError::DuplicateCase {
                    dataset: c.dataset.clone(),
                    pid: c.pid.clone(),
                });
            }
        }
        Ok(Self { cases, index })
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Position in the cohort and the case.
    pub fn get(&self, dataset: &str, pid: &str) -> Result<(usize, &Case), ControllerError> {
        self.index
            .get(&(dataset.to_string(), pid.to_string()))
            .map(|&i| (i, &self.cases[i]))
            .ok_or_else(|| ControllerError::UnknownCase {
                dataset: dataset.to_string(),
                pid: pid.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnDecided {
    #[default]
    Reject,
    AppendRevision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub global_seed: u64,
    pub policies: PolicyTable,
    pub modifiers: ModifierTable,
    pub latency: LatencyModel,
    pub evidence: EvidenceConfig,
    pub on_decided: OnDecided,
    /// Cell of the session used when a request names none.
    pub default_cell: CellId,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            global_seed: 20251015,
            policies: PolicyTable::default(),
            modifiers: ModifierTable::default(),
            latency: LatencyModel::default(),
            evidence: EvidenceConfig::default(),
            on_decided: OnDecided::Reject,
            default_cell: CellId::all()[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Simulated,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyRequest {
    #[serde(default)]
    pub session: Option<String>,
    pub dataset: String,
    pub pid: String,
    #[serde(default)]
    pub action: Option<Action>,
    pub actor: Actor,
    #[serde(default)]
    pub confirmation_token: Option<String>,
    #[serde(default)]
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ApplyResponse {
    Finalized {
        outcome: DecisionOutcome,
        record: DecisionRecord,
    },
    ConfirmationRequired {
        token: String,
        dataset: String,
        pid: String,
        action: Action,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub cell: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Replaces the cell's effective parameters when given.
    #[serde(default)]
    pub params: Option<PolicyParams>,
    #[serde(default)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session: String,
    pub cell: String,
    pub seed: u64,
    pub params: PolicyParams,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
struct Pending {
    token: String,
    dataset: String,
    pid: String,
    action: Action,
}

#[derive(Debug)]
struct Session {
    cell: CellId,
    cell_label: String,
    params: PolicyParams,
    seed: u64,
    mode: Mode,
    cursor: usize,
    pending: Option<Pending>,
    used_tokens: HashSet<String>,
    decided: HashSet<(String, String)>,
}

impl Session {
    fn info(&self, id: &str) -> SessionInfo {
        SessionInfo {
            session: id.to_string(),
            cell: self.cell_label.clone(),
            seed: self.seed,
            params: self.params,
            mode: self.mode,
        }
    }
}

pub const DEFAULT_SESSION: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub phq8: u8,
    pub phq8_moderate: bool,
    pub pclc: u8,
    pub pclc_probable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: Channel,
    pub params: StreakParams,
    pub totals: StreakTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSummary {
    pub session_seconds: f64,
    pub flat_prosody_seconds: u32,
    pub silence_seconds: u32,
    pub stress_burst_seconds: u32,
    pub streaks: Vec<ChannelSummary>,
    pub keywords_global: KeywordTable,
    pub keywords_negative: KeywordTable,
    pub ribbon: CueRibbon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionContext {
    pub cell: String,
    pub params: PolicyParams,
    pub confirm_tier: f64,
    pub friction: Friction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePayload {
    pub dataset: String,
    pub pid: String,
    pub pred: SeverityPair,
    pub risk: RiskScore,
    pub prob_dep: f64,
    pub prob_ptsd: f64,
    pub anchors: Anchors,
    pub evidence: EvidenceSummary,
    pub context: DecisionContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidencePayload {
    pub dataset: String,
    pub pid: String,
    pub bundle: EvidenceBundle,
    pub runs: Vec<Run>,
}

pub const RIBBON_WINDOW_SECONDS: f64 = 30.0;
pub const KEYWORD_TOP_K: usize = 10;

const STOPWORDS: &[&str] = &[
    "the", "and", "is", "it", "to", "of", "at", "for", "with", "my", "me", "be", "it's", "i'm", "i'll", "a", "an", "in",
    "on", "so", "up", "out", "go", "all",
];

/// Shared decision service state: cohort, sessions and the log writer.
pub struct Controller {
    cohort: Arc<Cohort>,
    cfg: ControllerConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    log: Option<Mutex<LogWriter>>,
    next_session: Mutex<u64>,
}

impl Controller {
    pub fn new(cohort: Arc<Cohort>, cfg: ControllerConfig, log: Option<LogWriter>) -> Result<Self, ControllerError> {
        cfg.policies.validate()?;
        let ctl = Self {
            cohort,
            cfg,
            sessions: Mutex::new(HashMap::new()),
            log: log.map(Mutex::new),
            next_session: Mutex::new(0),
        };
        let default = ctl.make_session(ctl.cfg.default_cell, ctl.cfg.global_seed, None, Mode::Api);
        ctl.sessions
            .lock()
            .insert(DEFAULT_SESSION.to_string(), Arc::new(Mutex::new(default)));
        Ok(ctl)
    }

    pub fn cohort(&self) -> &Cohort {
        &self.cohort
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    fn make_session(&self, cell: CellId, seed: u64, params: Option<PolicyParams>, mode: Mode) -> Session {
        let params = params.unwrap_or_else(|| self.cfg.policies.effective(cell.policy, &cell.condition, &self.cfg.modifiers));
        Session {
            cell,
            cell_label: cell.to_string(),
            params,
            seed,
            mode,
            cursor: 0,
            pending: None,
            used_tokens: HashSet::new(),
            decided: HashSet::new(),
        }
    }

    pub fn create_session(&self, req: &SessionRequest) -> Result<SessionInfo, ControllerError> {
        let cell: CellId = req.cell.parse()?;
        if let Some(p) = &req.params {
            p.validate()?;
        }
        let session = self.make_session(cell, req.seed.unwrap_or(self.cfg.global_seed), req.params, req.mode.unwrap_or(Mode::Api));
        let id = {
            let mut n = self.next_session.lock();
            *n += 1;
            format!("s{:06}-{:08x}", *n, rand::random::<u32>())
        };
        let info = session.info(&id);
        self.sessions.lock().insert(id, Arc::new(Mutex::new(session)));
        Ok(info)
    }

    pub fn session_info(&self, id: &str) -> Result<SessionInfo, ControllerError> {
        Ok(self.session(id)?.lock().info(id))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ControllerError> {
        self.sessions
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| ControllerError::UnknownSession(id.to_string()))
    }

    pub fn get_case(&self, dataset: &str, pid: &str, session: Option<&str>) -> Result<CasePayload, ControllerError> {
        let (_, case) = self.cohort.get(dataset, pid)?;
        let sid = session.unwrap_or(DEFAULT_SESSION);
        let (cell, params, friction) = {
            let s = self.session(sid)?;
            let s = s.lock();
            (s.cell_label.clone(), s.params, s.cell.condition.friction)
        };
        let bundle = generate_evidence(case, self.cfg.global_seed, &self.cfg.evidence);
        let r = risk(case.pred);
        Ok(CasePayload {
            dataset: case.dataset.clone(),
            pid: case.pid.clone(),
            pred: case.pred,
            risk: r,
            prob_dep: case.prob_dep,
            prob_ptsd: case.prob_ptsd,
            anchors: Anchors {
                phq8: case.phq8,
                phq8_moderate: case.phq8 >= 10,
                pclc: case.pclc,
                pclc_probable: case.pclc >= crate::cohort::PCL_PROBABLE,
            },
            evidence: self.summarize(&bundle),
            context: DecisionContext {
                cell,
                confirm_tier: params.confirm_tier(r),
                params,
                friction,
            },
        })
    }

    fn summarize(&self, bundle: &EvidenceBundle) -> EvidenceSummary {
        let session = self.cfg.evidence.session_seconds;
        let streaks = Channel::ALL
            .iter()
            .map(|&channel| {
                let params = channel.default_params();
                let runs = channel_runs(&bundle.au_frames, channel, &params);
                ChannelSummary {
                    channel,
                    params,
                    totals: streak_totals(&runs, channel),
                }
            })
            .collect();
        let stop: HashSet<String> = STOPWORDS.iter().map(|s| s.to_string()).collect();
        let (keywords_global, keywords_negative) = keyword_contrast(&bundle.utterances(), &stop, KEYWORD_TOP_K);
        let ribbon = cue_ribbon(&bundle.cue_events, RIBBON_WINDOW_SECONDS, session)
            .expect("generated cue events lie inside the session");
        let count = |f: fn(&crate::cohort::AudioSecond) -> bool| bundle.audio_rails.iter().filter(|s| f(s)).count() as u32;
        EvidenceSummary {
            session_seconds: session,
            flat_prosody_seconds: count(|s| s.flat_prosody),
            silence_seconds: count(|s| s.silence),
            stress_burst_seconds: count(|s| s.stress_burst),
            streaks,
            keywords_global,
            keywords_negative,
            ribbon,
        }
    }

    /// Full evidence streams plus runs detected with `params` (per-channel
    /// defaults when `None`).
    pub fn get_evidence(&self, dataset: &str, pid: &str, params: Option<StreakParams>) -> Result<EvidencePayload, ControllerError> {
        let (_, case) = self.cohort.get(dataset, pid)?;
        if let Some(p) = &params {
            p.validate()?;
        }
        let bundle = generate_evidence(case, self.cfg.global_seed, &self.cfg.evidence);
        let runs = Channel::ALL
            .iter()
            .flat_map(|&ch| channel_runs(&bundle.au_frames, ch, &params.unwrap_or_else(|| ch.default_params())))
            .collect();
        Ok(EvidencePayload {
            dataset: case.dataset.clone(),
            pid: case.pid.clone(),
            bundle,
            runs,
        })
    }

    /// Finalizes or soft-stops one decision and appends the record.
    pub fn apply(&self, req: &ApplyRequest) -> Result<ApplyResponse, ControllerError> {
        let start = Instant::now();
        let (index, case) = self.cohort.get(&req.dataset, &req.pid)?;
        let sid = req.session.as_deref().unwrap_or(DEFAULT_SESSION);
        let session = self.session(sid)?;
        let mut s = session.lock();
        let key = (case.dataset.clone(), case.pid.clone());
        if s.decided.contains(&key) && self.cfg.on_decided == OnDecided::Reject {
            return Err(ControllerError::AlreadyDecided {
                dataset: key.0,
                pid: key.1,
            });
        }
        let seed = case_seed(s.seed, &s.cell_label, index as u64);
        let (outcome, record) = match req.actor {
            Actor::Simulated => {
                let (outcome, mut record) =
                    simulate_outcome(case, &s.params, &s.cell, &s.cell_label, seed, &self.cfg.latency, s.mode);
                let extra = start.elapsed().as_secs_f64() * 1e3;
                record.latency_ms = extra + record.latency_sim_ms.unwrap_or(0.0);
                (outcome, record)
            }
            Actor::Human => {
                let action = req.action.ok_or(ControllerError::MissingAction)?;
                let needs_token = s.cell.condition.friction == Friction::Confirm && action.is_override_like();
                if needs_token {
                    match &req.confirmation_token {
                        None => {
                            let token = format!("{:016x}{:016x}", rand::random::<u64>(), rand::random::<u64>());
                            s.pending = Some(Pending {
                                token: token.clone(),
                                dataset: key.0.clone(),
                                pid: key.1.clone(),
                                action,
                            });
                            return Ok(ApplyResponse::ConfirmationRequired {
                                token,
                                dataset: key.0,
                                pid: key.1,
                                action,
                            });
                        }
                        Some(tok) => {
                            if s.used_tokens.contains(tok) {
                                return Err(ControllerError::TokenReplay);
                            }
                            let ok = s
                                .pending
                                .as_ref()
                                .is_some_and(|p| &p.token == tok && p.dataset == key.0 && p.pid == key.1 && p.action == action);
                            if !ok {
                                return Err(ControllerError::InvalidToken);
                            }
                            s.used_tokens.insert(tok.clone());
                            s.pending = None;
                        }
                    }
                }
                let measured = start.elapsed().as_secs_f64() * 1e3;
                let mode = if s.mode == Mode::Batch { Mode::Api } else { s.mode };
                finalize(case, action, mode, &s.cell_label, seed, measured, None, req.rationale.clone())
            }
        };
        if let Some(log) = &self.log {
            let mut w = log.lock();
            w.append(&record)?;
            w.flush()?;
        }
        s.decided.insert(key);
        s.cursor = index + 1;
        Ok(ApplyResponse::Finalized { outcome, record })
    }

    /// Next undecided case after the session cursor, if any.
    pub fn next_case(&self, session: Option<&str>) -> Result<Option<(String, String)>, ControllerError> {
        let s = self.session(session.unwrap_or(DEFAULT_SESSION))?;
        let s = s.lock();
        Ok(self.cohort.cases()[s.cursor.min(self.cohort.len())..]
            .iter()
            .find(|c| !s.decided.contains(&(c.dataset.clone(), c.pid.clone())))
            .map(|c| (c.dataset.clone(), c.pid.clone())))
    }

    pub fn log_path(&self) -> Option<std::path::PathBuf> {
        self.log.as_ref().map(|l| l.lock().path().to_path_buf())
    }
}

/// A corrupt or inconsistent log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub line: usize,
    pub fields: Vec<String>,
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub records: usize,
    pub parse_errors: Vec<(usize, String)>,
    pub mismatches: Vec<Mismatch>,
    pub report: Report,
}

/// Re-verifies every record and rebuilds the report from the log alone (plus
/// the cohort for confusion and calibration tables).
pub fn replay(log: &LogContents, cases: Option<&[Case]>, opts: &ReportOptions) -> Result<ReplayOutcome, ControllerError> {
    let mismatches = log
        .records
        .iter()
        .zip(&log.lines)
        .filter_map(|(r, &line)| {
            let bad = r.verify();
            (!bad.is_empty()).then(|| Mismatch {
                line,
                fields: bad.into_iter().map(String::from).collect(),
            })
        })
        .collect();
    Ok(ReplayOutcome {
        records: log.records.len(),
        parse_errors: log.errors.clone(),
        mismatches,
        report: build_report(&log.records, cases, opts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, GeneratorConfig};
    use crate::record::{parse_log, ReadMode};

    fn cohort(n: usize) -> Arc<Cohort> {
        let cfg = GeneratorConfig {
            n_cases: n,
            ..GeneratorConfig::default()
        };
        Arc::new(Cohort::new(generate_cohort(&cfg).unwrap()).unwrap())
    }

    fn controller(n: usize, log: Option<LogWriter>) -> Controller {
        let cfg = ControllerConfig {
            evidence: EvidenceConfig {
                session_seconds: 60.0,
                frame_rate: 10.0,
            },
            ..ControllerConfig::default()
        };
        Controller::new(cohort(n), cfg, log).unwrap()
    }

    fn human(session: &str, pid: &str, action: Action, token: Option<String>) -> ApplyRequest {
        ApplyRequest {
            session: Some(session.into()),
            dataset: "synthetic".into(),
            pid: pid.into(),
            action: Some(action),
            actor: Actor::Human,
            confirmation_token: token,
            rationale: None,
        }
    }

    fn session(ctl: &Controller, cell: &str) -> String {
        ctl.create_session(&SessionRequest {
            cell: cell.into(),
            seed: None,
            params: None,
            mode: None,
        })
        .unwrap()
        .session
    }

    #[test]
    fn simulate_is_deterministic() {
        let c = cohort(20);
        let cell = CellId::all()[5];
        let params = PolicyTable::default().effective(cell.policy, &cell.condition, &ModifierTable::default());
        for case in c.cases() {
            let a = simulate_case(case, &params, &cell, 42, &LatencyModel::default(), Mode::Batch);
            let b = simulate_case(case, &params, &cell, 42, &LatencyModel::default(), Mode::Api);
            assert_eq!(a.decision_fields(), b.decision_fields());
            assert_eq!(a.latency_sim_ms, b.latency_sim_ms);
            assert!(a.verify().is_empty());
        }
    }

    #[test]
    fn zero_priors_confirm() {
        let c = cohort(10);
        let cell = CellId::all()[0];
        let params = PolicyParams {
            b_up: 0.0,
            b_down: 0.0,
            b_def: 0.0,
            epsilon: 0.0,
            ..PolicyTable::default().safety
        };
        for (i, case) in c.cases().iter().enumerate() {
            let r = simulate_case(case, &params, &cell, i as u64, &LatencyModel::disabled(), Mode::Batch);
            assert_eq!(r.action, Action::Confirm);
            assert_eq!(r.latency_sim_ms, None);
        }
    }

    #[test]
    fn api_simulated_matches_batch() {
        let ctl = controller(30, None);
        for cell in [CellId::all()[0], CellId::all()[27], CellId::all()[47]] {
            let label = cell.to_string();
            let sid = session(&ctl, &label);
            let params = ctl.session_info(&sid).unwrap().params;
            for (i, case) in ctl.cohort().cases().iter().enumerate() {
                let batch = simulate_case(
                    case,
                    &params,
                    &cell,
                    case_seed(ctl.config().global_seed, &label, i as u64),
                    &LatencyModel::default(),
                    Mode::Batch,
                );
                let req = ApplyRequest {
                    session: Some(sid.clone()),
                    dataset: case.dataset.clone(),
                    pid: case.pid.clone(),
                    action: None,
                    actor: Actor::Simulated,
                    confirmation_token: None,
                    rationale: None,
                };
                let ApplyResponse::Finalized { record, .. } = ctl.apply(&req).unwrap() else {
                    panic!("simulated actors never soft-stop");
                };
                assert_eq!(record.decision_fields(), batch.decision_fields());
                assert_eq!(record.mode, Mode::Api);
            }
        }
    }

    #[test]
    fn human_up_without_friction_finalizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let ctl = controller(5, Some(LogWriter::open(&path).unwrap()));
        let sid = session(&ctl, "safety|none|numeric|off|short");
        let pid = ctl.cohort().cases()[0].pid.clone();
        let resp = ctl.apply(&human(&sid, &pid, Action::OverrideUp, None)).unwrap();
        let ApplyResponse::Finalized { outcome, .. } = resp else {
            panic!("no friction, no soft stop");
        };
        let pred = ctl.cohort().cases()[0].pred;
        assert_eq!(outcome, apply_action(pred, Action::OverrideUp));
        let log = std::fs::read_to_string(&path).unwrap();
        assert_eq!(log.lines().count(), 1);
    }

    #[test]
    fn soft_stop_protocol() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let ctl = controller(5, Some(LogWriter::open(&path).unwrap()));
        let sid = session(&ctl, "deferral|confirm|numeric|off|long");
        let pid = ctl.cohort().cases()[1].pid.clone();

        let ApplyResponse::ConfirmationRequired { token, .. } = ctl.apply(&human(&sid, &pid, Action::OverrideUp, None)).unwrap() else {
            panic!("override under friction must soft-stop");
        };
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 0);

        assert!(matches!(
            ctl.apply(&human(&sid, &pid, Action::OverrideDown, Some(token.clone()))),
            Err(ControllerError::InvalidToken)
        ));
        let resp = ctl.apply(&human(&sid, &pid, Action::OverrideUp, Some(token.clone()))).unwrap();
        assert!(matches!(resp, ApplyResponse::Finalized { .. }));
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);

        let other = ctl.cohort().cases()[2].pid.clone();
        assert!(matches!(
            ctl.apply(&human(&sid, &other, Action::OverrideUp, Some(token))),
            Err(ControllerError::TokenReplay)
        ));
        assert!(matches!(
            ctl.apply(&human(&sid, &pid, Action::Confirm, None)),
            Err(ControllerError::AlreadyDecided { .. })
        ));
        // Confirm needs no token even under friction.
        let resp = ctl.apply(&human(&sid, &other, Action::Confirm, None)).unwrap();
        assert!(matches!(resp, ApplyResponse::Finalized { .. }));
        let log = parse_log(std::fs::read(&path).unwrap().as_slice(), ReadMode::Strict).unwrap();
        assert_eq!(log.records.len(), 2);
    }

    #[test]
    fn revisions_when_configured() {
        let cfg = ControllerConfig {
            on_decided: OnDecided::AppendRevision,
            ..ControllerConfig::default()
        };
        let ctl = Controller::new(cohort(3), cfg, None).unwrap();
        let pid = ctl.cohort().cases()[0].pid.clone();
        ctl.apply(&human(DEFAULT_SESSION, &pid, Action::Confirm, None)).unwrap();
        ctl.apply(&human(DEFAULT_SESSION, &pid, Action::OverrideUp, None)).unwrap();
    }

    #[test]
    fn unknown_things_are_errors() {
        let ctl = controller(3, None);
        assert!(matches!(ctl.get_case("synthetic", "nope", None), Err(ControllerError::UnknownCase { .. })));
        assert!(matches!(
            ctl.apply(&human("missing", "P00000", Action::Confirm, None)),
            Err(ControllerError::UnknownSession(_))
        ));
        let mut req = human(DEFAULT_SESSION, "P00000", Action::Confirm, None);
        req.action = None;
        assert!(matches!(ctl.apply(&req), Err(ControllerError::MissingAction)));
    }

    #[test]
    fn case_payload_round_trips() {
        let ctl = controller(3, None);
        let case = &ctl.cohort().cases()[1];
        let payload = ctl.get_case(&case.dataset, &case.pid, None).unwrap();
        assert_eq!(payload.risk, risk(case.pred));
        let json = serde_json::to_string(&payload).unwrap();
        let back: CasePayload = serde_json::from_str(&json).unwrap();
        assert_eq!(back, payload);
        let ev = ctl.get_evidence(&case.dataset, &case.pid, None).unwrap();
        assert_eq!(ev.bundle.au_frames.len(), 600);
    }

    #[test]
    fn replay_flags_corrupted_line() {
        let c = cohort(10);
        let cell = CellId::all()[3];
        let params = PolicyTable::default().effective(cell.policy, &cell.condition, &ModifierTable::default());
        let mut text = String::new();
        for (i, case) in c.cases().iter().enumerate() {
            let mut r = simulate_case(case, &params, &cell, i as u64, &LatencyModel::default(), Mode::Batch);
            if i == 4 {
                r.risk_post += 5.0;
            }
            text.push_str(&r.to_line().unwrap());
        }
        let log = parse_log(text.as_bytes(), ReadMode::Strict).unwrap();
        let out = replay(&log, Some(c.cases()), &ReportOptions::default()).unwrap();
        assert_eq!(out.mismatches.len(), 1);
        assert_eq!(out.mismatches[0].line, 5);
        assert_eq!(out.records, 10);
    }
}
