//! End-to-end checks against a running decision service.
//!
//! * [`validate_parity`] drives simulated decisions over HTTP and compares
//!   them with the same decisions computed in-process.
//! * [`validate_schema`] checks every line of a decision log.
//! * [`validate_friction`] scripts the confirmation flow.
//!
//! Transport problems surface as [`ValidatorError`]; a check that ran to
//! completion and found a problem is a failed report, not an error.

mod client;
mod friction;
mod parity;
mod schema;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{ApiFailure, Client, Exchange};
pub use friction::{validate_friction, FrictionCheck, FrictionReport};
pub use parity::{validate_all_cells, validate_parity, Divergence, ParityReport};
pub use schema::{validate_schema, SchemaReport, Violation};

#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("transport error on {method} {url}: {message}")]
    Transport {
        method: &'static str,
        url: String,
        message: String,
    },
    #[error("unexpected response from {url} ({status}): {body}")]
    Protocol { url: String, status: u16, body: String },
    #[error("{0}")]
    Setup(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Everything one validator run found, in a form that serialises to the
/// report file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub passed: bool,
    pub parity: Vec<ParityReport>,
    pub schema: Option<SchemaReport>,
    pub friction: Option<FrictionReport>,
}

impl ValidationSummary {
    pub fn new(parity: Vec<ParityReport>, schema: Option<SchemaReport>, friction: Option<FrictionReport>) -> Self {
        let passed = parity.iter().all(|p| p.passed)
            && schema.as_ref().is_none_or(|s| s.passed)
            && friction.as_ref().is_none_or(|f| f.passed);
        Self {
            passed,
            parity,
            schema,
            friction,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), ValidatorError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ValidatorError::Setup(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| ValidatorError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
