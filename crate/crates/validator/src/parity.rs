//! In-process versus HTTP decision parity.

use serde::{Deserialize, Serialize};

use clinloop_core::cohort::Case;
use clinloop_core::controller::{simulate_case, Actor, ApplyRequest, ApplyResponse, ControllerConfig, SessionRequest};
use clinloop_core::policy::CellId;
use clinloop_core::record::{DecisionFields, Mode};
use clinloop_core::seed::case_seed;

use crate::{Client, Exchange, ValidatorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub index: usize,
    pub dataset: String,
    pub pid: String,
    /// Names of the decision fields that differ (or `"response"` when the
    /// service refused the request).
    pub fields: Vec<String>,
    pub local: DecisionFields,
    pub remote: Option<DecisionFields>,
    pub exchange: Exchange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub cell: String,
    pub seed: u64,
    pub n: usize,
    pub compared: usize,
    pub passed: bool,
    pub first_divergence: Option<Divergence>,
}

fn differing(a: &DecisionFields, b: &DecisionFields) -> Vec<String> {
    let mut out = Vec::new();
    if a.action != b.action {
        out.push("action");
    }
    if a.final_d != b.final_d {
        out.push("final_d");
    }
    if a.final_p != b.final_p {
        out.push("final_p");
    }
    if a.risk_post != b.risk_post {
        out.push("risk_post");
    }
    if a.overridden != b.overridden {
        out.push("overridden");
    }
    out.into_iter().map(String::from).collect()
}

/// Runs the first `n` cases of `cases` through a fresh service session for
/// `cell` and in-process with `cfg`, stopping at the first disagreement.
/// `cases` must be the service's cohort in the same order.
pub fn validate_parity(
    client: &Client,
    cases: &[Case],
    cfg: &ControllerConfig,
    seed: u64,
    cell: CellId,
    n: usize,
) -> Result<ParityReport, ValidatorError> {
    if n > cases.len() {
        return Err(ValidatorError::Setup(format!("n = {n} exceeds the cohort size {}", cases.len())));
    }
    let label = cell.to_string();
    let mut report = ParityReport {
        cell: label.clone(),
        seed,
        n,
        compared: 0,
        passed: true,
        first_divergence: None,
    };
    if n == 0 {
        return Ok(report);
    }
    let session = client.create_session(&SessionRequest {
        cell: label.clone(),
        seed: Some(seed),
        params: None,
        mode: Some(Mode::Api),
    })?;
    let params = cfg.policies.effective(cell.policy, &cell.condition, &cfg.modifiers);
    for (i, case) in cases[..n].iter().enumerate() {
        let local = simulate_case(case, &params, &cell, case_seed(seed, &label, i as u64), &cfg.latency, Mode::Batch)
            .decision_fields();
        let (resp, exchange) = client.apply(&ApplyRequest {
            session: Some(session.session.clone()),
            dataset: case.dataset.clone(),
            pid: case.pid.clone(),
            action: None,
            actor: Actor::Simulated,
            confirmation_token: None,
            rationale: None,
        })?;
        let remote = match resp {
            Ok(ApplyResponse::Finalized { record, .. }) => Some(record.decision_fields()),
            _ => None,
        };
        let fields = match &remote {
            Some(r) => differing(&local, r),
            None => vec!["response".to_string()],
        };
        report.compared += 1;
        if !fields.is_empty() {
            report.passed = false;
            report.first_divergence = Some(Divergence {
                index: i,
                dataset: case.dataset.clone(),
                pid: case.pid.clone(),
                fields,
                local,
                remote,
                exchange,
            });
            break;
        }
    }
    tracing::debug!(cell = %label, passed = report.passed, "parity");
    Ok(report)
}

/// [`validate_parity`] for every cell in canonical order.
pub fn validate_all_cells(
    client: &Client,
    cases: &[Case],
    cfg: &ControllerConfig,
    seed: u64,
    n: usize,
) -> Result<Vec<ParityReport>, ValidatorError> {
    CellId::all()
        .into_iter()
        .map(|cell| validate_parity(client, cases, cfg, seed, cell, n))
        .collect()
}
