//! Blocking HTTP client for the decision service.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use ureq::Agent;

use clinloop_core::controller::{ApplyRequest, ApplyResponse, SessionInfo, SessionRequest};

use crate::ValidatorError;

/// A non-2xx answer from the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiFailure {
    pub status: u16,
    pub error: String,
    pub message: String,
}

/// One request and its answer, kept for counterexample transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub method: String,
    pub path: String,
    pub request: Option<Value>,
    pub status: u16,
    pub response: String,
}

pub struct Client {
    base: String,
    agent: Agent,
}

impl Client {
    pub fn new(base_url: &str) -> Self {
        let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Sends one request and returns status plus body text.
    pub fn exchange(&self, method: &'static str, path: &str, body: Option<&Value>) -> Result<Exchange, ValidatorError> {
        let url = format!("{}{}", self.base, path);
        let transport = |e: ureq::Error| ValidatorError::Transport {
            method,
            url: url.clone(),
            message: e.to_string(),
        };
        let mut resp = match (method, body) {
            ("GET", _) => self.agent.get(&url).call().map_err(transport)?,
            (_, Some(b)) => self.agent.post(&url).send_json(b).map_err(transport)?,
            (_, None) => self.agent.post(&url).send_empty().map_err(transport)?,
        };
        let status = resp.status().as_u16();
        let response = resp.body_mut().read_to_string().map_err(transport)?;
        Ok(Exchange {
            method: method.to_string(),
            path: path.to_string(),
            request: body.cloned(),
            status,
            response,
        })
    }

    fn decode<T: DeserializeOwned>(&self, ex: &Exchange) -> Result<Result<T, ApiFailure>, ValidatorError> {
        let protocol = || ValidatorError::Protocol {
            url: format!("{}{}", self.base, ex.path),
            status: ex.status,
            body: ex.response.clone(),
        };
        if (200..300).contains(&ex.status) {
            return serde_json::from_str(&ex.response).map(Ok).map_err(|_| protocol());
        }
        let v: Value = serde_json::from_str(&ex.response).map_err(|_| protocol())?;
        let field = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
        match (field("error"), field("message")) {
            (Some(error), Some(message)) => Ok(Err(ApiFailure {
                status: ex.status,
                error,
                message,
            })),
            _ => Err(protocol()),
        }
    }

    pub fn health(&self) -> Result<(), ValidatorError> {
        let ex = self.exchange("GET", "/health", None)?;
        if ex.status == 200 {
            Ok(())
        } else {
            Err(ValidatorError::Protocol {
                url: format!("{}/health", self.base),
                status: ex.status,
                body: ex.response,
            })
        }
    }

    pub fn create_session(&self, req: &SessionRequest) -> Result<SessionInfo, ValidatorError> {
        let body = serde_json::to_value(req).map_err(|e| ValidatorError::Setup(e.to_string()))?;
        let ex = self.exchange("POST", "/session", Some(&body))?;
        self.decode(&ex)?.map_err(|f| ValidatorError::Setup(format!("creating session: {} ({})", f.message, f.error)))
    }

    /// Posts an apply request. The exchange is returned for transcripts.
    pub fn apply(&self, req: &ApplyRequest) -> Result<(Result<ApplyResponse, ApiFailure>, Exchange), ValidatorError> {
        let body = serde_json::to_value(req).map_err(|e| ValidatorError::Setup(e.to_string()))?;
        let ex = self.exchange("POST", "/apply", Some(&body))?;
        Ok((self.decode(&ex)?, ex))
    }

    /// Number of records in the service log.
    pub fn log_total(&self) -> Result<usize, ValidatorError> {
        let ex = self.exchange("GET", "/log?offset=0&limit=0", None)?;
        let v: Value = self
            .decode(&ex)?
            .map_err(|f| ValidatorError::Setup(format!("reading log: {}", f.message)))?;
        v.get("total")
            .and_then(Value::as_u64)
            .map(|t| t as usize)
            .ok_or_else(|| ValidatorError::Protocol {
                url: format!("{}{}", self.base, ex.path),
                status: ex.status,
                body: ex.response,
            })
    }
}
