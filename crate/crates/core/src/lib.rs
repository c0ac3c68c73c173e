//! Core of the clinician-in-the-loop decision simulator.
//!
//! The crate is organised around one decision loop: a case arrives with a
//! predicted severity pair, a clinician policy picks an action, the action is
//! applied and the result is appended to a JSON Lines log. Everything else
//! (cohort synthesis, evidence summaries, calibration, the factorial sweep and
//! the report tables) either feeds that loop or folds over its log.

pub mod calibration;
pub mod cohort;
pub mod controller;
pub mod evidence;
pub mod mbc;
pub mod policy;
pub mod record;
pub mod report;
pub mod seed;
pub mod severity;
pub mod sweep;

pub use controller::Controller;
pub use policy::{PolicyKind, PolicyParams, UICondition};
pub use record::DecisionRecord;
pub use severity::{apply_action, risk, Action, DecisionOutcome, RiskScore, SeverityPair};
