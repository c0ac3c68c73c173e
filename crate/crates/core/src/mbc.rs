//! Measurement-based care: reliable / clinically significant change between
//! two questionnaire totals, and the rule that feeds a significant change
//! back into the policy thresholds for the next session.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::PolicyParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MbcError {
    #[error("{instrument:?} total {total} outside {lo}..={hi}")]
    OutOfRange {
        instrument: Instrument,
        total: u8,
        lo: u8,
        hi: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    /// PHQ-8, total 0..=24.
    Phq,
    /// PCL-C, total 17..=85.
    Pcl,
}

impl Instrument {
    pub fn range(self) -> (u8, u8) {
        match self {
            Instrument::Phq => (0, 24),
            Instrument::Pcl => (17, 85),
        }
    }

    /// Default (reliable, clinically significant) change thresholds.
    pub fn default_thresholds(self) -> ChangeThresholds {
        match self {
            Instrument::Phq => ChangeThresholds {
                reliable: 5,
                significant: 10,
            },
            Instrument::Pcl => ChangeThresholds {
                reliable: 15,
                significant: 20,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeThresholds {
    pub reliable: u8,
    pub significant: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeClass {
    None,
    Reliable,
    ClinicallySignificant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Improved,
    Worsened,
}

/// Lower totals mean fewer symptoms on both instruments.
pub fn direction(prev_total: u8, curr_total: u8) -> Option<Direction> {
    match curr_total.cmp(&prev_total) {
        std::cmp::Ordering::Less => Some(Direction::Improved),
        std::cmp::Ordering::Greater => Some(Direction::Worsened),
        std::cmp::Ordering::Equal => None,
    }
}

pub fn classify_change(prev_total: u8, curr_total: u8, instrument: Instrument) -> Result<ChangeClass, MbcError> {
    classify_change_with(prev_total, curr_total, instrument, instrument.default_thresholds())
}

pub fn classify_change_with(
    prev_total: u8,
    curr_total: u8,
    instrument: Instrument,
    thresholds: ChangeThresholds,
) -> Result<ChangeClass, MbcError> {
    let (lo, hi) = instrument.range();
    for total in [prev_total, curr_total] {
        if !(lo..=hi).contains(&total) {
            return Err(MbcError::OutOfRange {
                instrument,
                total,
                lo,
                hi,
            });
        }
    }
    let delta = prev_total.abs_diff(curr_total);
    Ok(if delta >= thresholds.significant {
        ChangeClass::ClinicallySignificant
    } else if delta >= thresholds.reliable {
        ChangeClass::Reliable
    } else {
        ChangeClass::None
    })
}

/// Default threshold step, in risk points.
pub const THRESHOLD_STEP: f64 = 10.0;

pub fn update_policy_thresholds(params: &PolicyParams, change: ChangeClass, direction: Direction) -> PolicyParams {
    update_policy_thresholds_by(params, change, direction, THRESHOLD_STEP)
}

/// A clinically significant worsening lowers both thresholds by `step`
/// (more cases reach the higher confirm tiers); an equally large improvement
/// raises them. Results stay in `[0, 100]`.
pub fn update_policy_thresholds_by(
    params: &PolicyParams,
    change: ChangeClass,
    direction: Direction,
    step: f64,
) -> PolicyParams {
    let mut out = *params;
    if change != ChangeClass::ClinicallySignificant {
        return out;
    }
    let shift = match direction {
        Direction::Worsened => -step,
        Direction::Improved => step,
    };
    out.tau_d = (out.tau_d + shift).clamp(0.0, 100.0);
    out.tau_p = (out.tau_p + shift).clamp(0.0, 100.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyTable;

    #[test]
    fn classify_examples() {
        assert_eq!(classify_change(18, 7, Instrument::Phq).unwrap(), ChangeClass::ClinicallySignificant);
        assert_eq!(classify_change(12, 6, Instrument::Phq).unwrap(), ChangeClass::Reliable);
        assert_eq!(classify_change(44, 43, Instrument::Pcl).unwrap(), ChangeClass::None);
        assert_eq!(classify_change(30, 50, Instrument::Pcl).unwrap(), ChangeClass::ClinicallySignificant);
    }

    #[test]
    fn classify_rejects_out_of_range() {
        assert!(classify_change(25, 3, Instrument::Phq).is_err());
        assert!(classify_change(16, 30, Instrument::Pcl).is_err());
        assert!(classify_change(30, 86, Instrument::Pcl).is_err());
    }

    #[test]
    fn classify_is_symmetric_and_monotone() {
        for inst in [Instrument::Phq, Instrument::Pcl] {
            let (lo, hi) = inst.range();
            for a in lo..=hi {
                let mut last = ChangeClass::None;
                for b in a..=hi {
                    let fwd = classify_change(a, b, inst).unwrap();
                    assert_eq!(fwd, classify_change(b, a, inst).unwrap());
                    assert!(fwd >= last);
                    last = fwd;
                }
            }
        }
    }

    #[test]
    fn threshold_updates() {
        let base = PolicyTable::default().safety;
        let worse = update_policy_thresholds(&base, ChangeClass::ClinicallySignificant, Direction::Worsened);
        assert_eq!(worse.tau_d, 40.0);
        let same = update_policy_thresholds(&base, ChangeClass::None, Direction::Worsened);
        assert_eq!(same.tau_d, 50.0);
        let same = update_policy_thresholds(&base, ChangeClass::Reliable, Direction::Improved);
        assert_eq!(same, base);
        let low = PolicyParams { tau_d: 5.0, ..base };
        let floored = update_policy_thresholds(&low, ChangeClass::ClinicallySignificant, Direction::Worsened);
        assert_eq!(floored.tau_d, 0.0);
        let high = PolicyParams { tau_p: 95.0, ..base };
        let capped = update_policy_thresholds(&high, ChangeClass::ClinicallySignificant, Direction::Improved);
        assert_eq!(capped.tau_p, 100.0);
        capped.validate().unwrap();
    }

    #[test]
    fn direction_of_totals() {
        assert_eq!(direction(18, 7), Some(Direction::Improved));
        assert_eq!(direction(7, 18), Some(Direction::Worsened));
        assert_eq!(direction(7, 7), None);
    }
}
