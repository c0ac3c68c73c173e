//! Synthetic cohorts in the prediction-store shape.
//!
//! Each case carries a ground-truth severity pair, a model prediction, raw
//! (deliberately miscalibrated) probabilities for the two binary anchors and
//! questionnaire totals consistent with the truth. Generation is a pure
//! function of the config: case `i` draws from its own stream seeded by
//! `(seed, i)`.

mod evidence;
mod table;

pub use evidence::{generate_evidence, AudioSecond, CueCategory, CueEvent, EvidenceBundle, EvidenceConfig, GazePoint};
pub use table::{load_predictions, parse_predictions, write_predictions, PREDICTION_HEADER};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{indexed_seed, rng_from};
use crate::severity::{SeverityPair, MAX_DEPRESSION, MAX_PTSD};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("PHQ-8 total {0} outside 0..=24")]
    PhqRange(i64),
    #[error("PCL-C total {0} outside 17..=85")]
    PclRange(i64),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}, field {field}: {message}")]
    Row {
        row: usize,
        field: String,
        message: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One cohort member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub dataset: String,
    pub pid: String,
    pub truth: SeverityPair,
    pub pred: SeverityPair,
    /// Raw model probability that PHQ-8 >= 10.
    pub prob_dep: f64,
    /// Raw model probability that PCL-C >= 44.
    pub prob_ptsd: f64,
    pub phq8: u8,
    pub pclc: u8,
}

impl Case {
    /// Binary depression anchor (PHQ-8 >= 10, equivalently truth class >= 2).
    pub fn depression_positive(&self) -> bool {
        self.truth.depression() >= 2
    }

    /// Binary PTSD anchor (PCL-C >= 44, equivalently truth class 2).
    pub fn ptsd_positive(&self) -> bool {
        self.truth.ptsd() == 2
    }
}

/// PHQ-8 total to depression class: 0-4, 5-9, 10-14, 15-19, 20-24.
pub fn phq_to_class(total: i64) -> Result<u8, CohortError> {
    if !(0..=24).contains(&total) {
        return Err(CohortError::PhqRange(total));
    }
    Ok((total / 5) as u8)
}

/// Inclusive PHQ-8 band for a depression class.
pub fn phq_band(class: u8) -> (u8, u8) {
    let lo = class.min(MAX_DEPRESSION) * 5;
    (lo, lo + 4)
}

/// Lower PCL-C bound of the middle band. The probable-PTSD cut (44) is fixed.
pub const PCL_SUBTHRESHOLD: u8 = 30;
pub const PCL_PROBABLE: u8 = 44;

/// PCL-C total to PTSD class: 17-29, 30-43, 44-85.
pub fn pcl_to_class(total: i64) -> Result<u8, CohortError> {
    if !(17..=85).contains(&total) {
        return Err(CohortError::PclRange(total));
    }
    Ok(if total >= i64::from(PCL_PROBABLE) {
        2
    } else if total >= i64::from(PCL_SUBTHRESHOLD) {
        1
    } else {
        0
    })
}

pub fn pcl_band(class: u8) -> (u8, u8) {
    match class {
        0 => (17, PCL_SUBTHRESHOLD - 1),
        1 => (PCL_SUBTHRESHOLD, PCL_PROBABLE - 1),
        _ => (PCL_PROBABLE, 85),
    }
}

/// Joint distribution over the 15 truth pairs, indexed `[d][p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityPrior {
    pub joint: [[f64; 3]; 5],
}

impl Default for SeverityPrior {
    /// Skewed towards low severity, with PTSD concentrated in the more
    /// depressed classes. Class-2 PTSD marginal is 12%.
    fn default() -> Self {
        Self {
            joint: [
                [0.384, 0.008, 0.008],
                [0.250, 0.012, 0.018],
                [0.083, 0.038, 0.029],
                [0.037, 0.029, 0.034],
                [0.018, 0.021, 0.031],
            ],
        }
    }
}

impl SeverityPrior {
    pub fn ptsd_marginal(&self, p: usize) -> f64 {
        self.joint.iter().map(|row| row[p]).sum()
    }

    fn validate(&self) -> Result<(), CohortError> {
        let total: f64 = self.joint.iter().flatten().sum();
        if self.joint.iter().flatten().any(|w| !(w.is_finite() && *w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(CohortError::Config("severity prior must be nonnegative and sum to 1".into()));
        }
        Ok(())
    }

    fn sample(&self, u: f64) -> SeverityPair {
        let mut acc = 0.0;
        let mut last = SeverityPair::new(0, 0).unwrap();
        for d in 0..=MAX_DEPRESSION {
            for p in 0..=MAX_PTSD {
                let w = self.joint[d as usize][p as usize];
                if w > 0.0 {
                    last = SeverityPair::new(d, p).unwrap();
                    acc += w;
                    if u < acc {
                        return last;
                    }
                }
            }
        }
        last
    }
}

/// Probability of the prediction missing the truth by one class, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub dep_down: f64,
    pub dep_up: f64,
    pub ptsd_down: f64,
    pub ptsd_up: f64,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self {
            dep_down: 0.10,
            dep_up: 0.10,
            ptsd_down: 0.08,
            ptsd_up: 0.08,
        }
    }
}

impl ErrorModel {
    pub fn exact() -> Self {
        Self {
            dep_down: 0.0,
            dep_up: 0.0,
            ptsd_down: 0.0,
            ptsd_up: 0.0,
        }
    }

    fn validate(&self) -> Result<(), CohortError> {
        let ok = |a: f64, b: f64| a >= 0.0 && b >= 0.0 && a + b <= 1.0;
        if ok(self.dep_down, self.dep_up) && ok(self.ptsd_down, self.ptsd_up) {
            Ok(())
        } else {
            Err(CohortError::Config("error-model probabilities must be >= 0 and sum to <= 1 per axis".into()))
        }
    }
}

fn shift(u: f64, down: f64, up: f64) -> i32 {
    if u < down {
        -1
    } else if u < down + up {
        1
    } else {
        0
    }
}

/// `sigmoid(slope * positive + intercept + noise_sd * N(0,1))` per anchor.
///
/// The defaults make the raw probabilities overconfident with an offset, so
/// the depression anchor starts with an ECE near 0.13.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityModel {
    pub dep_slope: f64,
    pub dep_intercept: f64,
    pub ptsd_slope: f64,
    pub ptsd_intercept: f64,
    pub noise_sd: f64,
}

impl Default for ProbabilityModel {
    fn default() -> Self {
        Self {
            dep_slope: 3.5,
            dep_intercept: -1.5,
            ptsd_slope: 3.0,
            ptsd_intercept: -1.2,
            noise_sd: 1.3,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_cases: usize,
    pub seed: u64,
    pub dataset: String,
    pub session_seconds: f64,
    /// AU frames per second.
    pub frame_rate: f64,
    pub error_model: ErrorModel,
    pub severity_prior: SeverityPrior,
    pub probability_model: ProbabilityModel,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_cases: 10_000,
            seed: 20_251_015,
            dataset: "synthetic".into(),
            session_seconds: 600.0,
            frame_rate: 30.0,
            error_model: ErrorModel::default(),
            severity_prior: SeverityPrior::default(),
            probability_model: ProbabilityModel::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), CohortError> {
        if self.n_cases == 0 {
            return Err(CohortError::Config("n_cases must be positive".into()));
        }
        if self.frame_rate.is_nan() || self.frame_rate <= 0.0 {
            return Err(CohortError::Config("frame_rate must be positive".into()));
        }
        if self.session_seconds.is_nan() || self.session_seconds < 0.0 {
            return Err(CohortError::Config("session_seconds must be nonnegative".into()));
        }
        self.error_model.validate()?;
        self.severity_prior.validate()
    }

    pub fn evidence_config(&self) -> EvidenceConfig {
        EvidenceConfig {
            session_seconds: self.session_seconds,
            frame_rate: self.frame_rate,
        }
    }
}

pub fn participant_id(index: usize) -> String {
    format!("P{index:05}")
}

pub fn generate_case(cfg: &GeneratorConfig, index: usize) -> Case {
    let mut rng = rng_from(indexed_seed(cfg.seed, index as u64));
    let truth = cfg.severity_prior.sample(rng.random::<f64>());
    let (phq_lo, phq_hi) = phq_band(truth.depression());
    let (pcl_lo, pcl_hi) = pcl_band(truth.ptsd());
    let phq8 = rng.random_range(phq_lo..=phq_hi);
    let pclc = rng.random_range(pcl_lo..=pcl_hi);

    let em = &cfg.error_model;
    let dd = shift(rng.random::<f64>(), em.dep_down, em.dep_up);
    let dp = shift(rng.random::<f64>(), em.ptsd_down, em.ptsd_up);
    let pred = SeverityPair::clamped(i32::from(truth.depression()) + dd, i32::from(truth.ptsd()) + dp);

    let pm = &cfg.probability_model;
    let n_dep: f64 = StandardNormal.sample(&mut rng);
    let n_ptsd: f64 = StandardNormal.sample(&mut rng);
    let dep_pos = f64::from(u8::from(truth.depression() >= 2));
    let ptsd_pos = f64::from(u8::from(truth.ptsd() == 2));
    Case {
        dataset: cfg.dataset.clone(),
        pid: participant_id(index),
        truth,
        pred,
        prob_dep: sigmoid(pm.dep_slope * dep_pos + pm.dep_intercept + pm.noise_sd * n_dep),
        prob_ptsd: sigmoid(pm.ptsd_slope * ptsd_pos + pm.ptsd_intercept + pm.noise_sd * n_ptsd),
        phq8,
        pclc,
    }
}

pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<Vec<Case>, CohortError> {
    cfg.validate()?;
    Ok((0..cfg.n_cases).map(|i| generate_case(cfg, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::wilson_ci;

    fn small(n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_cases: n,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn band_examples() {
        assert_eq!(phq_to_class(10).unwrap(), 2);
        assert_eq!(phq_to_class(9).unwrap(), 1);
        assert_eq!(phq_to_class(0).unwrap(), 0);
        assert_eq!(phq_to_class(24).unwrap(), 4);
        assert!(phq_to_class(25).is_err());
        assert!(phq_to_class(-1).is_err());
        assert_eq!(pcl_to_class(44).unwrap(), 2);
        assert_eq!(pcl_to_class(43).unwrap(), 1);
        assert_eq!(pcl_to_class(17).unwrap(), 0);
        assert_eq!(pcl_to_class(35).unwrap(), 1);
        assert!(pcl_to_class(16).is_err());
        assert!(pcl_to_class(86).is_err());
    }

    #[test]
    fn bands_round_trip() {
        for class in 0..=4u8 {
            let (lo, hi) = phq_band(class);
            for t in lo..=hi {
                assert_eq!(phq_to_class(i64::from(t)).unwrap(), class);
            }
        }
        for class in 0..=2u8 {
            let (lo, hi) = pcl_band(class);
            for t in lo..=hi {
                assert_eq!(pcl_to_class(i64::from(t)).unwrap(), class);
            }
        }
    }

    #[test]
    fn default_prior_is_normalised() {
        let prior = SeverityPrior::default();
        prior.validate().unwrap();
        assert!((prior.ptsd_marginal(2) - 0.12).abs() < 1e-12);
    }

    #[test]
    fn zero_error_model_copies_truth() {
        let cfg = GeneratorConfig {
            error_model: ErrorModel::exact(),
            ..small(500)
        };
        for case in generate_cohort(&cfg).unwrap() {
            assert_eq!(case.pred, case.truth);
        }
    }

    #[test]
    fn cohort_is_deterministic_and_sized() {
        let cfg = small(300);
        let a = generate_cohort(&cfg).unwrap();
        assert_eq!(a, generate_cohort(&cfg).unwrap());
        assert_eq!(a.len(), 300);
        let other = generate_cohort(&GeneratorConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn ten_thousand_cases() {
        assert_eq!(generate_cohort(&small(10_000)).unwrap().len(), 10_000);
    }

    #[test]
    fn questionnaires_match_truth_bands() {
        for case in generate_cohort(&small(2_000)).unwrap() {
            assert_eq!(phq_to_class(i64::from(case.phq8)).unwrap(), case.truth.depression());
            assert_eq!(pcl_to_class(i64::from(case.pclc)).unwrap(), case.truth.ptsd());
            assert!((0.0..=1.0).contains(&case.prob_dep));
            assert!((0.0..=1.0).contains(&case.prob_ptsd));
        }
    }

    #[test]
    fn ptsd_rate_within_wilson_bounds() {
        let cases = generate_cohort(&small(20_000)).unwrap();
        let k = cases.iter().filter(|c| c.truth.ptsd() == 2).count() as u64;
        let ci = wilson_ci(k, cases.len() as u64, 1.959964).unwrap();
        let target = SeverityPrior::default().ptsd_marginal(2);
        assert!(ci.lo <= target && target <= ci.hi, "{ci:?} vs {target}");
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_cohort(&small(0)).is_err());
        let cfg = GeneratorConfig {
            error_model: ErrorModel {
                dep_down: 0.7,
                dep_up: 0.7,
                ..ErrorModel::default()
            },
            ..small(10)
        };
        assert!(generate_cohort(&cfg).is_err());
        let cfg = GeneratorConfig {
            frame_rate: 0.0,
            ..small(10)
        };
        assert!(generate_cohort(&cfg).is_err());
    }
}
