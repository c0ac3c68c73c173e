//! The stochastic clinician policy.
//!
//! A policy scores four actions for a predicted pair: a confirm score tiered
//! on the risk thresholds, indicator-gated override priors and a flat deferral
//! prior. Each score is perturbed by `epsilon * U` with `U ~ Uniform[0, 1]`,
//! floored at `1e-6` and normalised. After the categorical draw, the friction
//! clause turns any non-confirm action whose probability is below `gamma`
//! into Confirm.
//!
//! UI conditions act on the parameters through [`ModifierTable`]; the default
//! per-policy parameters live in [`PolicyTable`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::severity::{Action, RiskScore, SeverityPair};

/// Lower bound applied to every perturbed score before normalisation.
pub const SCORE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy parameter {field}: {value}")]
    InvalidParam { field: &'static str, value: f64 },
    #[error("unknown {kind} value {value:?}")]
    UnknownValue { kind: &'static str, value: String },
    #[error("malformed cell id {0:?}")]
    MalformedCell(String),
}

/// Synthetic-clinician parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub tau_d: f64,
    pub tau_p: f64,
    pub b_up: f64,
    pub b_down: f64,
    pub b_def: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Additive bump to the confirm tier, set by display/explanation modifiers.
    #[serde(default)]
    pub confirm_bump: f64,
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let check = |field: &'static str, value: f64, ok: bool| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(PolicyError::InvalidParam { field, value })
            }
        };
        check("tau_d", self.tau_d, (0.0..=100.0).contains(&self.tau_d))?;
        check("tau_p", self.tau_p, (0.0..=100.0).contains(&self.tau_p))?;
        check("b_up", self.b_up, self.b_up >= 0.0)?;
        check("b_down", self.b_down, self.b_down >= 0.0)?;
        check("b_def", self.b_def, self.b_def >= 0.0)?;
        check("epsilon", self.epsilon, self.epsilon >= 0.0)?;
        check("gamma", self.gamma, (0.0..=1.0).contains(&self.gamma))?;
        check("confirm_bump", self.confirm_bump, self.confirm_bump >= 0.0)?;
        Ok(())
    }

    /// Confirm score before perturbation.
    pub fn confirm_tier(&self, r: RiskScore) -> f64 {
        let r = r.value();
        let base = if r >= self.tau_d.max(self.tau_p) {
            0.7
        } else if r >= self.tau_d.min(self.tau_p) {
            0.5
        } else {
            0.2
        };
        base + self.confirm_bump
    }
}

macro_rules! two_valued {
    ($(#[$m:meta])* $name:ident, $label:literal, $a:ident = $sa:literal, $b:ident = $sb:literal) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $a,
            $b,
        }

        impl $name {
            pub const ALL: [$name; 2] = [$name::$a, $name::$b];

            pub fn as_str(self) -> &'static str {
                match self {
                    $name::$a => $sa,
                    $name::$b => $sb,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = PolicyError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $sa => Ok($name::$a),
                    $sb => Ok($name::$b),
                    other => Err(PolicyError::UnknownValue {
                        kind: $label,
                        value: other.to_string(),
                    }),
                }
            }
        }
    };
}

two_valued!(Display, "display", Numeric = "numeric", Banded = "banded");
two_valued!(Explanations, "explanations", Off = "off", On = "on");
two_valued!(Friction, "friction", None = "none", Confirm = "confirm");
two_valued!(TimeBudget, "time", Short = "short", Long = "long");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Safety,
    Parsimony,
    Deferral,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Safety, PolicyKind::Parsimony, PolicyKind::Deferral];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Safety => "safety",
            PolicyKind::Parsimony => "parsimony",
            PolicyKind::Deferral => "deferral",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "safety" => Ok(PolicyKind::Safety),
            "parsimony" => Ok(PolicyKind::Parsimony),
            "deferral" => Ok(PolicyKind::Deferral),
            other => Err(PolicyError::UnknownValue {
                kind: "policy",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UICondition {
    pub display: Display,
    pub explanations: Explanations,
    pub friction: Friction,
    pub time_budget: TimeBudget,
}

impl UICondition {
    /// The 16 conditions, friction-major then display, explanations, time.
    pub fn all() -> Vec<UICondition> {
        let mut out = Vec::with_capacity(16);
        for friction in Friction::ALL {
            for display in Display::ALL {
                for explanations in Explanations::ALL {
                    for time_budget in TimeBudget::ALL {
                        out.push(UICondition {
                            display,
                            explanations,
                            friction,
                            time_budget,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One factorial cell: a policy crossed with a UI condition.
///
/// The textual id is `policy|friction|display|explanations|time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CellId {
    pub policy: PolicyKind,
    pub condition: UICondition,
}

impl CellId {
    /// All 48 cells in canonical order: policy (safety, parsimony, deferral),
    /// then friction (none, confirm), display (numeric, banded), explanations
    /// (off, on) and time (short, long).
    pub fn all() -> Vec<CellId> {
        PolicyKind::ALL
            .iter()
            .flat_map(|&policy| {
                UICondition::all()
                    .into_iter()
                    .map(move |condition| CellId { policy, condition })
            })
            .collect()
    }

    /// Position in the canonical order of [`CellId::all`].
    pub fn ordinal(&self) -> usize {
        let c = &self.condition;
        let bit = |b: bool| usize::from(b);
        self.policy as usize * 16
            + bit(c.friction == Friction::Confirm) * 8
            + bit(c.display == Display::Banded) * 4
            + bit(c.explanations == Explanations::On) * 2
            + bit(c.time_budget == TimeBudget::Long)
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.condition;
        write!(
            f,
            "{}|{}|{}|{}|{}",
            self.policy, c.friction, c.display, c.explanations, c.time_budget
        )
    }
}

impl From<CellId> for String {
    fn from(c: CellId) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for CellId {
    type Error = PolicyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for CellId {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('|').collect();
        let [policy, friction, display, explanations, time] = parts.as_slice() else {
            return Err(PolicyError::MalformedCell(s.to_string()));
        };
        Ok(CellId {
            policy: policy.parse()?,
            condition: UICondition {
                display: display.parse()?,
                explanations: explanations.parse()?,
                friction: friction.parse()?,
                time_budget: time.parse()?,
            },
        })
    }
}

/// How UI factors map onto policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModifierTable {
    /// Friction threshold used when friction = confirm (none sets 0).
    pub gamma0: f64,
    /// Multiplier on epsilon under the short time budget.
    pub short_time_epsilon_factor: f64,
    /// Confirm-tier bump for the banded display.
    pub banded_confirm_bump: f64,
    /// Confirm-tier bump when explanations are on.
    pub explanations_confirm_bump: f64,
}

impl Default for ModifierTable {
    fn default() -> Self {
        Self {
            gamma0: 0.35,
            short_time_epsilon_factor: 2.0,
            banded_confirm_bump: 0.05,
            explanations_confirm_bump: 0.05,
        }
    }
}

impl ModifierTable {
    pub fn apply(&self, base: &PolicyParams, cond: &UICondition) -> PolicyParams {
        let mut out = *base;
        out.gamma = match cond.friction {
            Friction::Confirm => self.gamma0,
            Friction::None => 0.0,
        };
        if cond.time_budget == TimeBudget::Short {
            out.epsilon *= self.short_time_epsilon_factor;
        }
        if cond.display == Display::Banded {
            out.confirm_bump += self.banded_confirm_bump;
        }
        if cond.explanations == Explanations::On {
            out.confirm_bump += self.explanations_confirm_bump;
        }
        out
    }
}

/// Default parameters per policy kind, before UI modifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyTable {
    pub safety: PolicyParams,
    pub parsimony: PolicyParams,
    pub deferral: PolicyParams,
}

impl Default for PolicyTable {
    fn default() -> Self {
        let base = PolicyParams {
            tau_d: 50.0,
            tau_p: 70.0,
            b_up: 0.0,
            b_down: 0.0,
            b_def: 0.0,
            epsilon: 0.005,
            gamma: 0.0,
            confirm_bump: 0.0,
        };
        Self {
            safety: PolicyParams { b_up: 0.07, ..base },
            parsimony: PolicyParams {
                b_down: 30.0,
                epsilon: 0.0002,
                ..base
            },
            deferral: PolicyParams {
                b_up: 0.12,
                b_down: 0.2,
                b_def: 0.2,
                ..base
            },
        }
    }
}

impl PolicyTable {
    pub fn base(&self, kind: PolicyKind) -> &PolicyParams {
        match kind {
            PolicyKind::Safety => &self.safety,
            PolicyKind::Parsimony => &self.parsimony,
            PolicyKind::Deferral => &self.deferral,
        }
    }

    pub fn effective(&self, kind: PolicyKind, cond: &UICondition, modifiers: &ModifierTable) -> PolicyParams {
        modifiers.apply(self.base(kind), cond)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.safety.validate()?;
        self.parsimony.validate()?;
        self.deferral.validate()
    }
}

/// Effective parameters for a cell under the default tables.
pub fn effective_policy(kind: PolicyKind, cond: &UICondition) -> PolicyParams {
    PolicyTable::default().effective(kind, cond, &ModifierTable::default())
}

/// Probability vector over (down, confirm, up, deferral).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionProbs(pub [f64; 4]);

impl ActionProbs {
    pub fn get(&self, action: Action) -> f64 {
        self.0[action.index()]
    }

    /// Inverse-CDF draw with `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> Action {
        let mut acc = 0.0;
        for action in Action::ALL {
            acc += self.get(action);
            if u < acc {
                return action;
            }
        }
        // u landed in the rounding slack above the final partial sum.
        Action::ALL
            .into_iter()
            .rev()
            .find(|a| self.get(*a) > 0.0)
            .unwrap_or(Action::Confirm)
    }

    /// Exact P(final = Confirm) after the friction clause at `gamma`,
    /// summed over the categorical outcomes.
    pub fn confirm_probability(&self, gamma: f64) -> f64 {
        Action::ALL
            .into_iter()
            .filter(|&a| resolve_friction(a, self, gamma) == Action::Confirm)
            .map(|a| self.get(a))
            .sum()
    }
}

/// Pure scoring step; `noise` holds `U1..U4`, one per action in index order.
pub fn action_probabilities(
    pair: SeverityPair,
    r: RiskScore,
    params: &PolicyParams,
    noise: [f64; 4],
) -> ActionProbs {
    let d = pair.depression();
    let p = pair.ptsd();
    let up_gate = matches!(d, 2 | 3) || p == 1;
    let down_gate = d <= 1 && p == 0;
    let scores = [
        if down_gate { params.b_down } else { 0.0 },
        params.confirm_tier(r),
        if up_gate { params.b_up } else { 0.0 },
        params.b_def,
    ];
    let mut perturbed = [0.0; 4];
    for i in 0..4 {
        perturbed[i] = (scores[i] + params.epsilon * noise[i]).max(SCORE_FLOOR);
    }
    let total: f64 = perturbed.iter().sum();
    ActionProbs(perturbed.map(|s| s / total))
}

/// The soft stop: a non-confirm action less likely than `gamma` becomes Confirm.
pub fn resolve_friction(sampled: Action, probs: &ActionProbs, gamma: f64) -> Action {
    if sampled.is_override_like() && probs.get(sampled) < gamma {
        Action::Confirm
    } else {
        sampled
    }
}

/// Everything drawn while deciding one case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionTrace {
    pub probs: ActionProbs,
    pub sampled: Action,
    pub action: Action,
}

/// Draws `U1..U4` then the categorical uniform from `rng`, in that order.
pub fn decide_action_traced<R: Rng + ?Sized>(
    pair: SeverityPair,
    r: RiskScore,
    params: &PolicyParams,
    rng: &mut R,
) -> DecisionTrace {
    let noise: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
    let probs = action_probabilities(pair, r, params, noise);
    let sampled = probs.sample(rng.random::<f64>());
    DecisionTrace {
        probs,
        sampled,
        action: resolve_friction(sampled, &probs, params.gamma),
    }
}

pub fn decide_action<R: Rng + ?Sized>(
    pair: SeverityPair,
    r: RiskScore,
    params: &PolicyParams,
    rng: &mut R,
) -> Action {
    decide_action_traced(pair, r, params, rng).action
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use crate::severity::risk;

    fn pair(d: u8, p: u8) -> SeverityPair {
        SeverityPair::new(d, p).unwrap()
    }

    fn hand_params(b_up: f64, b_down: f64, b_def: f64) -> PolicyParams {
        PolicyParams {
            tau_d: 50.0,
            tau_p: 50.0,
            b_up,
            b_down,
            b_def,
            epsilon: 0.0,
            gamma: 0.0,
            confirm_bump: 0.0,
        }
    }

    #[test]
    fn probabilities_high_tier_with_up_gate() {
        let pr = action_probabilities(pair(3, 1), RiskScore(65.0), &hand_params(0.3, 0.4, 0.0), [0.5; 4]);
        let total = 1.0 + 2e-6;
        assert!((pr.0[0] - 1e-6 / total).abs() < 1e-12);
        assert!((pr.0[1] - 0.7 / total).abs() < 1e-12);
        assert!((pr.0[2] - 0.3 / total).abs() < 1e-12);
        assert!((pr.0[3] - 1e-6 / total).abs() < 1e-12);
    }

    #[test]
    fn probabilities_low_tier_with_down_gate() {
        let pr = action_probabilities(pair(0, 0), RiskScore(0.0), &hand_params(0.3, 0.4, 0.0), [0.0; 4]);
        let total = 0.6 + 2e-6;
        assert!((pr.0[0] - 0.4 / total).abs() < 1e-12);
        assert!((pr.0[1] - 0.2 / total).abs() < 1e-12);
        assert!(pr.0[2] < 2e-6 && pr.0[3] < 2e-6);
    }

    #[test]
    fn zero_priors_confirm_dominates() {
        let params = hand_params(0.0, 0.0, 0.0);
        for pr in SeverityPair::all() {
            let probs = action_probabilities(pr, risk(pr), &params, [0.3; 4]);
            assert!(probs.get(Action::Confirm) > 1.0 - 1e-4);
        }
    }

    #[test]
    fn friction_clause_examples() {
        let probs = ActionProbs([0.0, 0.7, 0.3, 0.0]);
        assert_eq!(resolve_friction(Action::OverrideUp, &probs, 0.35), Action::Confirm);
        assert_eq!(resolve_friction(Action::OverrideUp, &probs, 0.0), Action::OverrideUp);
        assert_eq!(resolve_friction(Action::Confirm, &probs, 1.0), Action::Confirm);
    }

    #[test]
    fn tier_boundaries_are_inclusive() {
        let params = PolicyParams {
            tau_d: 50.0,
            tau_p: 70.0,
            ..hand_params(0.0, 0.0, 0.0)
        };
        assert_eq!(params.confirm_tier(RiskScore(70.0)), 0.7);
        assert_eq!(params.confirm_tier(RiskScore(65.0)), 0.5);
        assert_eq!(params.confirm_tier(RiskScore(50.0)), 0.5);
        assert_eq!(params.confirm_tier(RiskScore(45.0)), 0.2);
    }

    #[test]
    fn sampling_walks_cumulative_mass() {
        let probs = ActionProbs([0.25, 0.25, 0.25, 0.25]);
        assert_eq!(probs.sample(0.0), Action::OverrideDown);
        assert_eq!(probs.sample(0.3), Action::Confirm);
        assert_eq!(probs.sample(0.6), Action::OverrideUp);
        assert_eq!(probs.sample(0.99), Action::Deferral);
        assert_eq!(ActionProbs([0.2, 0.8, 0.0, 0.0]).sample(1.0 - 1e-17), Action::Confirm);
    }

    #[test]
    fn decide_is_deterministic_per_seed() {
        let params = effective_policy(PolicyKind::Deferral, &UICondition::all()[0]);
        for seed in 0..50 {
            let pr = pair((seed % 5) as u8, (seed % 3) as u8);
            let a = decide_action(pr, risk(pr), &params, &mut rng_from(seed));
            let b = decide_action(pr, risk(pr), &params, &mut rng_from(seed));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn effective_policy_modifiers() {
        for cond in UICondition::all() {
            let pars = effective_policy(PolicyKind::Parsimony, &cond);
            assert_eq!(pars.b_up, 0.0);
            let safety = effective_policy(PolicyKind::Safety, &cond);
            let deferral = effective_policy(PolicyKind::Deferral, &cond);
            match cond.friction {
                Friction::None => assert_eq!(safety.gamma, 0.0),
                Friction::Confirm => {
                    assert_eq!(deferral.gamma, 0.35);
                    assert!(deferral.b_def > 0.0);
                }
            }
            let expected_bump = 0.05 * (u8::from(cond.display == Display::Banded) + u8::from(cond.explanations == Explanations::On)) as f64;
            assert!((safety.confirm_bump - expected_bump).abs() < 1e-12);
            safety.validate().unwrap();
        }
    }

    #[test]
    fn cells_are_canonical() {
        let cells = CellId::all();
        assert_eq!(cells.len(), 48);
        assert_eq!(cells[0].to_string(), "safety|none|numeric|off|short");
        assert_eq!(cells[47].to_string(), "deferral|confirm|banded|on|long");
        let ids: std::collections::BTreeSet<String> = cells.iter().map(|c| c.to_string()).collect();
        assert_eq!(ids.len(), 48);
        for (i, c) in cells.iter().enumerate() {
            assert_eq!(c.to_string().parse::<CellId>().unwrap(), *c);
            assert_eq!(c.ordinal(), i);
        }
        assert!("safety|none|numeric".parse::<CellId>().is_err());
        assert!("safety|sometimes|numeric|off|short".parse::<CellId>().is_err());
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut p = hand_params(0.1, 0.1, 0.1);
        p.gamma = 1.5;
        assert!(p.validate().is_err());
        p.gamma = 0.2;
        p.b_up = -0.1;
        assert!(p.validate().is_err());
    }
}
