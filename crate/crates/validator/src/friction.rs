//! Scripted checks of the override confirmation step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use clinloop_core::cohort::Case;
use clinloop_core::controller::{Actor, ApplyRequest, ApplyResponse, SessionRequest};
use clinloop_core::policy::{CellId, Friction};
use clinloop_core::record::Mode;
use clinloop_core::seed::rng_from;
use clinloop_core::Action;

use crate::{Client, Exchange, ValidatorError};

/// One named property and, when it failed, the exchanges that show it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub transcript: Vec<Exchange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionReport {
    pub seed: u64,
    pub n: usize,
    pub passed: bool,
    pub checks: Vec<FrictionCheck>,
}

const OVERRIDES: [Action; 3] = [Action::OverrideDown, Action::OverrideUp, Action::Deferral];

struct Tally {
    name: &'static str,
    failure: Option<(String, Vec<Exchange>)>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self { name, failure: None }
    }

    /// Records the first counterexample only.
    fn fail(&mut self, detail: String, transcript: &[Exchange]) {
        if self.failure.is_none() {
            self.failure = Some((detail, transcript.to_vec()));
        }
    }

    fn finish(self, ok_detail: String) -> FrictionCheck {
        match self.failure {
            None => FrictionCheck {
                name: self.name.into(),
                passed: true,
                detail: ok_detail,
                transcript: Vec::new(),
            },
            Some((detail, transcript)) => FrictionCheck {
                name: self.name.into(),
                passed: false,
                detail,
                transcript,
            },
        }
    }
}

fn request(session: &str, case: &Case, action: Action, token: Option<&str>) -> ApplyRequest {
    ApplyRequest {
        session: Some(session.to_string()),
        dataset: case.dataset.clone(),
        pid: case.pid.clone(),
        action: Some(action),
        actor: Actor::Human,
        confirmation_token: token.map(str::to_string),
        rationale: token.map(|_| "validator attestation".to_string()),
    }
}

fn session_for(client: &Client, friction: Friction, seed: u64) -> Result<String, ValidatorError> {
    let cell = CellId::all()
        .into_iter()
        .find(|c| c.condition.friction == friction)
        .expect("every friction level has cells");
    Ok(client
        .create_session(&SessionRequest {
            cell: cell.to_string(),
            seed: Some(seed),
            params: None,
            mode: Some(Mode::Ui),
        })?
        .session)
}

/// Scripts `n` human decisions in a confirm-friction session and `n` in a
/// no-friction session. Actions are drawn from a generator seeded by
/// `seed`, so reruns send the same requests.
pub fn validate_friction(client: &Client, cases: &[Case], seed: u64, n: usize) -> Result<FrictionReport, ValidatorError> {
    if n > cases.len() {
        return Err(ValidatorError::Setup(format!("n = {n} exceeds the cohort size {}", cases.len())));
    }
    let mut rng = rng_from(seed);
    let mut soft_stop = Tally::new("override without token is soft-stopped and not logged");
    let mut one_line = Tally::new("confirmed override appends exactly one log line");
    let mut replay = Tally::new("reused token is rejected");
    let mut confirm_direct = Tally::new("confirm needs no token");
    let mut no_friction = Tally::new("friction=none never asks for confirmation");

    let confirm_session = session_for(client, Friction::Confirm, seed)?;
    let mut used_token: Option<String> = None;
    for case in &cases[..n] {
        let mut transcript = Vec::new();
        let action = if rng.random_bool(0.25) {
            Action::Confirm
        } else {
            OVERRIDES[rng.random_range(0..OVERRIDES.len())]
        };
        let before = client.log_total()?;
        if action == Action::Confirm {
            let (resp, ex) = client.apply(&request(&confirm_session, case, action, None))?;
            transcript.push(ex);
            let after = client.log_total()?;
            if !matches!(resp, Ok(ApplyResponse::Finalized { .. })) || after != before + 1 {
                confirm_direct.fail(format!("{}: log {before} -> {after}", case.pid), &transcript);
            }
            continue;
        }
        let (resp, ex) = client.apply(&request(&confirm_session, case, action, None))?;
        transcript.push(ex);
        let mid = client.log_total()?;
        let token = match resp {
            Ok(ApplyResponse::ConfirmationRequired { token, .. }) if mid == before => token,
            other => {
                soft_stop.fail(format!("{}: got {other:?}, log {before} -> {mid}", case.pid), &transcript);
                continue;
            }
        };
        if let Some(old) = &used_token {
            let (resp, ex) = client.apply(&request(&confirm_session, case, action, Some(old)))?;
            transcript.push(ex);
            let ok = matches!(&resp, Err(f) if f.status == 409 && f.error == "token_replay");
            if !ok || client.log_total()? != before {
                replay.fail(format!("{}: reused token answered {resp:?}", case.pid), &transcript);
            }
        }
        let (resp, ex) = client.apply(&request(&confirm_session, case, action, Some(&token)))?;
        transcript.push(ex);
        let after = client.log_total()?;
        match resp {
            Ok(ApplyResponse::Finalized { record, .. }) if after == before + 1 && record.action == action => {}
            other => one_line.fail(format!("{}: got {other:?}, log {before} -> {after}", case.pid), &transcript),
        }
        used_token = Some(token);
    }

    let free_session = session_for(client, Friction::None, seed)?;
    for case in &cases[..n] {
        let action = Action::ALL[rng.random_range(0..Action::ALL.len())];
        let (resp, ex) = client.apply(&request(&free_session, case, action, None))?;
        if !matches!(resp, Ok(ApplyResponse::Finalized { .. })) {
            no_friction.fail(format!("{}: {action} answered {resp:?}", case.pid), &[ex]);
        }
    }

    let checks = vec![
        soft_stop.finish(format!("{n} scripted decisions")),
        one_line.finish("each confirmed override logged once".into()),
        replay.finish("every reuse answered 409".into()),
        confirm_direct.finish("confirm finalized directly".into()),
        no_friction.finish(format!("{n} decisions, no soft stops")),
    ];
    Ok(FrictionReport {
        seed,
        n,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
