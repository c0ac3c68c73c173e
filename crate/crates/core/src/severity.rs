//! Severity pairs, the risk score and the deterministic half of the
//! decision loop (applying an action to a predicted pair).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest depression class (PHQ-8 bands 0..=4).
pub const MAX_DEPRESSION: u8 = 4;
/// Highest PTSD class (PCL-C bands 0..=2).
pub const MAX_PTSD: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeverityError {
    #[error("depression class {0} outside 0..=4")]
    Depression(u8),
    #[error("ptsd class {0} outside 0..=2")]
    Ptsd(u8),
    #[error("unknown action {0:?}")]
    UnknownAction(String),
}

/// An ordinal (depression, PTSD) severity pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawPair", into = "RawPair")]
pub struct SeverityPair {
    d: u8,
    p: u8,
}

#[derive(Serialize, Deserialize)]
struct RawPair {
    d: u8,
    p: u8,
}

impl TryFrom<RawPair> for SeverityPair {
    type Error = SeverityError;
    fn try_from(raw: RawPair) -> Result<Self, Self::Error> {
        SeverityPair::new(raw.d, raw.p)
    }
}

impl From<SeverityPair> for RawPair {
    fn from(pair: SeverityPair) -> Self {
        RawPair { d: pair.d, p: pair.p }
    }
}

impl SeverityPair {
    pub fn new(d: u8, p: u8) -> Result<Self, SeverityError> {
        if d > MAX_DEPRESSION {
            return Err(SeverityError::Depression(d));
        }
        if p > MAX_PTSD {
            return Err(SeverityError::Ptsd(p));
        }
        Ok(Self { d, p })
    }

    /// Builds a pair from signed components, saturating into range.
    pub fn clamped(d: i32, p: i32) -> Self {
        Self {
            d: clamp(d, 0, MAX_DEPRESSION as i32) as u8,
            p: clamp(p, 0, MAX_PTSD as i32) as u8,
        }
    }

    pub fn depression(self) -> u8 {
        self.d
    }

    pub fn ptsd(self) -> u8 {
        self.p
    }

    /// All 15 valid pairs, depression-major.
    pub fn all() -> impl Iterator<Item = SeverityPair> {
        (0..=MAX_DEPRESSION).flat_map(|d| (0..=MAX_PTSD).map(move |p| SeverityPair { d, p }))
    }
}

impl fmt::Display for SeverityPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.d, self.p)
    }
}

/// Percent-of-maximum risk in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RiskScore(pub f64);

impl RiskScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for RiskScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `100 * (0.6 * d/4 + 0.4 * p/2)`.
///
/// Evaluated as `15 d + 20 p`, which is the same quantity without rounding:
/// every score is an exact multiple of 5.
pub fn risk(pair: SeverityPair) -> RiskScore {
    RiskScore(f64::from(15 * u16::from(pair.d) + 20 * u16::from(pair.p)))
}

/// `min(max(x, lo), hi)`. Panics when `lo > hi`.
pub fn clamp<T: PartialOrd>(x: T, lo: T, hi: T) -> T {
    assert!(lo <= hi, "clamp called with lo > hi");
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Clinician action. Index order matches [`crate::policy::ActionProbs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    #[serde(rename = "down")]
    OverrideDown,
    Confirm,
    #[serde(rename = "up")]
    OverrideUp,
    Deferral,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::OverrideDown,
        Action::Confirm,
        Action::OverrideUp,
        Action::Deferral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::OverrideDown => "down",
            Action::Confirm => "confirm",
            Action::OverrideUp => "up",
            Action::Deferral => "deferral",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::OverrideDown => 0,
            Action::Confirm => 1,
            Action::OverrideUp => 2,
            Action::Deferral => 3,
        }
    }

    /// Anything other than Confirm is subject to the friction clause.
    pub fn is_override_like(self) -> bool {
        self != Action::Confirm
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = SeverityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "down" => Ok(Action::OverrideDown),
            "confirm" => Ok(Action::Confirm),
            "up" => Ok(Action::OverrideUp),
            "deferral" => Ok(Action::Deferral),
            other => Err(SeverityError::UnknownAction(other.to_string())),
        }
    }
}

/// Result of applying an action to a predicted pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    #[serde(rename = "final")]
    pub final_pair: SeverityPair,
    /// `action != confirm`; deferral therefore counts as overridden even
    /// though the severities are unchanged.
    pub overridden: bool,
    pub risk_star: RiskScore,
    pub action: Action,
}

pub fn apply_action(pair: SeverityPair, action: Action) -> DecisionOutcome {
    let (d, p) = (i32::from(pair.d), i32::from(pair.p));
    let final_pair = match action {
        Action::OverrideUp => SeverityPair::clamped(d + 1, p + 1),
        Action::OverrideDown => SeverityPair::clamped(d - 1, p - 1),
        Action::Confirm | Action::Deferral => pair,
    };
    DecisionOutcome {
        final_pair,
        overridden: action != Action::Confirm,
        risk_star: risk(final_pair),
        action,
    }
}
