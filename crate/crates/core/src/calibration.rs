//! Post-hoc probability calibration: participant-level split, isotonic
//! regression (pool-adjacent-violators) with boundary clipping, Platt scaling
//! as the scarce-positive fallback, and ECE/MCE/reliability/AUC metrics.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("fit fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("need at least 2 participants, got {0}")]
    TooFewParticipants(usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("labels are all {0}; isotonic fit needs both classes")]
    FallbackNeeded(bool),
    #[error("labels are all {0}; Platt fit needs both classes")]
    SingleClass(bool),
    #[error("Platt scaling did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("sample {index}: probability {value} outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("{probs} probabilities but {labels} labels")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("bin count must be at least 1")]
    NoBins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSample {
    pub participant_id: String,
    pub prob: f64,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Depression,
    Ptsd,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Depression, Target::Ptsd];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Depression => "depression",
            Target::Ptsd => "ptsd",
        }
    }
}

fn check_probs(samples: &[CalibSample]) -> Result<(), CalibrationError> {
    match samples.iter().position(|s| !(0.0..=1.0).contains(&s.prob)) {
        Some(index) => Err(CalibrationError::InvalidProbability {
            index,
            value: samples[index].prob,
        }),
        None => Ok(()),
    }
}

/// Partitions participants (not records) into fit and eval sides.
///
/// `round(fit_fraction * n)` participants, at least one and at most `n - 1`,
/// go to the fit side. The assignment depends only on the participant set and
/// the seed.
pub fn split_by_participant(
    samples: &[CalibSample],
    fit_fraction: f64,
    seed: u64,
) -> Result<(Vec<CalibSample>, Vec<CalibSample>), CalibrationError> {
    if !(fit_fraction > 0.0 && fit_fraction < 1.0) {
        return Err(CalibrationError::InvalidFraction(fit_fraction));
    }
    let ids: BTreeSet<&str> = samples.iter().map(|s| s.participant_id.as_str()).collect();
    let n = ids.len();
    if n < 2 {
        return Err(CalibrationError::TooFewParticipants(n));
    }
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(&mut rng_from(seed));
    let n_fit = ((fit_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let fit_ids: HashSet<&str> = ids[..n_fit].iter().copied().collect();
    let (fit, eval) = samples.iter().cloned().partition(|s| fit_ids.contains(s.participant_id.as_str()));
    Ok((fit, eval))
}

/// Weighted isotonic (nondecreasing) least-squares fit of `values` in the
/// given order. Returns one fitted value per input.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len(), "values and weights differ in length");
    // Each block: (weighted mean, total weight, member count).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().expect("two blocks present") = ((m1 * w1 + m2 * w2) / w, w, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    /// Breakpoint inputs, strictly increasing.
    pub xs: Vec<f64>,
    /// Breakpoint outputs, nondecreasing, in `[0, 1]`.
    pub ys: Vec<f64>,
}

impl IsotonicModel {
    /// Linear interpolation between breakpoints; inputs outside
    /// `[xs[0], xs[last]]` take the boundary value.
    pub fn predict(&self, x: f64) -> f64 {
        let last = self.xs.len() - 1;
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[last] {
            return self.ys[last];
        }
        let hi = self.xs.partition_point(|&b| b <= x);
        let lo = hi - 1;
        let (x0, x1, y0, y1) = (self.xs[lo], self.xs[hi], self.ys[lo], self.ys[hi]);
        if y0 == y1 {
            return y0;
        }
        (y0 + (y1 - y0) * (x - x0) / (x1 - x0)).clamp(y0, y1)
    }
}

pub fn fit_isotonic(samples: &[CalibSample]) -> Result<IsotonicModel, CalibrationError> {
    if samples.len() < 2 {
        return Err(CalibrationError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    check_probs(samples)?;
    let first = samples[0].label;
    if samples.iter().all(|s| s.label == first) {
        return Err(CalibrationError::FallbackNeeded(first));
    }
    let mut sorted: Vec<(f64, bool)> = samples.iter().map(|s| (s.prob, s.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Pool ties: one point per distinct probability.
    let mut xs: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (x, y) in sorted {
        if xs.last() == Some(&x) {
            *sums.last_mut().expect("parallel vectors") += f64::from(u8::from(y));
            *weights.last_mut().expect("parallel vectors") += 1.0;
        } else {
            xs.push(x);
            sums.push(f64::from(u8::from(y)));
            weights.push(1.0);
        }
    }
    let means: Vec<f64> = sums.iter().zip(&weights).map(|(s, w)| s / w).collect();
    let fitted = pava(&means, &weights);

    // Keep only the two ends of each constant block.
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for i in 0..xs.len() {
        let starts = i == 0 || fitted[i - 1] != fitted[i];
        let ends = i + 1 == xs.len() || fitted[i + 1] != fitted[i];
        if starts || ends {
            bx.push(xs[i]);
            by.push(fitted[i].clamp(0.0, 1.0));
        }
    }
    Ok(IsotonicModel { xs: bx, ys: by })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlattInput {
    /// Feed the probability itself to the logistic map.
    #[default]
    Raw,
    /// Feed `logit(p)`, with `p` kept away from 0 and 1.
    Logit,
}

impl PlattInput {
    fn transform(self, p: f64) -> f64 {
        match self {
            PlattInput::Raw => p,
            PlattInput::Logit => {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                (p / (1.0 - p)).ln()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattModel {
    pub a: f64,
    pub b: f64,
    pub input: PlattInput,
}

impl PlattModel {
    pub fn predict(&self, p: f64) -> f64 {
        sigmoid(self.a * self.input.transform(p) + self.b)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub const PLATT_TOLERANCE: f64 = 1e-8;
pub const PLATT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattOptions {
    pub input: PlattInput,
    /// Fit single-class data using the smoothed targets alone instead of
    /// rejecting it.
    pub allow_single_class: bool,
}

impl Default for PlattOptions {
    fn default() -> Self {
        Self {
            input: PlattInput::Raw,
            allow_single_class: false,
        }
    }
}

/// Maximum-likelihood logistic fit on smoothed targets
/// `(n₊+1)/(n₊+2)` and `1/(n₋+2)`, by Newton's method with backtracking.
pub fn fit_platt(samples: &[CalibSample], opts: PlattOptions) -> Result<PlattModel, CalibrationError> {
    if samples.is_empty() {
        return Err(CalibrationError::TooFewSamples { needed: 1, got: 0 });
    }
    check_probs(samples)?;
    let n_pos = samples.iter().filter(|s| s.label).count();
    let n_neg = samples.len() - n_pos;
    if !opts.allow_single_class {
        if samples.len() < 2 {
            return Err(CalibrationError::TooFewSamples {
                needed: 2,
                got: samples.len(),
            });
        }
        if n_pos == 0 || n_neg == 0 {
            return Err(CalibrationError::SingleClass(n_pos > 0));
        }
    }
    let t_pos = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let t_neg = 1.0 / (n_neg as f64 + 2.0);
    let data: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (opts.input.transform(s.prob), if s.label { t_pos } else { t_neg }))
        .collect();

    let loss = |a: f64, b: f64| -> f64 {
        data.iter()
            .map(|&(f, t)| {
                let z = a * f + b;
                // -[t log σ(z) + (1-t) log(1-σ(z))] = log(1+e^z) - t z
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - t * z
            })
            .sum()
    };

    let prior = (n_pos as f64 + 1.0) / (n_neg as f64 + 1.0);
    let (mut a, mut b) = (0.0, prior.ln());
    let mut current = loss(a, b);
    for iter in 1..=PLATT_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for &(f, t) in &data {
            let q = sigmoid(a * f + b);
            let r = q - t;
            let w = q * (1.0 - q);
            ga += r * f;
            gb += r;
            haa += w * f * f;
            hab += w * f;
            hbb += w;
        }
        if ga.abs() < PLATT_TOLERANCE && gb.abs() < PLATT_TOLERANCE {
            return Ok(PlattModel { a, b, input: opts.input });
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det.abs() > f64::MIN_POSITIVE {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga / haa, -gb / hbb)
        };
        let mut step = 1.0;
        let slope = ga * da + gb * db;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let next = loss(na, nb);
            if next <= current + 1e-4 * step * slope {
                a = na;
                b = nb;
                current = next;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                // No further descent is available at this precision.
                return Ok(PlattModel { a, b, input: opts.input });
            }
        }
        if (step * da).abs() < PLATT_TOLERANCE * (1.0 + a.abs()) && (step * db).abs() < PLATT_TOLERANCE * (1.0 + b.abs()) {
            tracing::debug!(iter, "Platt fit converged on step size");
            return Ok(PlattModel { a, b, input: opts.input });
        }
    }
    Err(CalibrationError::NonConvergence {
        iterations: PLATT_MAX_ITER,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CalibrationModel {
    Isotonic(IsotonicModel),
    Platt(PlattModel),
}

impl CalibrationModel {
    pub fn predict(&self, p: f64) -> f64 {
        match self {
            CalibrationModel::Isotonic(m) => m.predict(p),
            CalibrationModel::Platt(m) => m.predict(p),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CalibrationModel::Isotonic(_) => "isotonic",
            CalibrationModel::Platt(_) => "platt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibMetrics {
    pub ece: f64,
    pub mce: f64,
    pub n: usize,
    pub n_bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_pred: Option<f64>,
    pub frac_pos: Option<f64>,
}

pub type ReliabilityCurve = Vec<ReliabilityBin>;

fn bin_of(p: f64, n_bins: usize) -> usize {
    ((p * n_bins as f64).floor() as usize).min(n_bins - 1)
}

fn check_pair(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<(), CalibrationError> {
    if probs.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch {
            probs: probs.len(),
            labels: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(CalibrationError::TooFewSamples { needed: 1, got: 0 });
    }
    if n_bins == 0 {
        return Err(CalibrationError::NoBins);
    }
    match probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(index) => Err(CalibrationError::InvalidProbability {
            index,
            value: probs[index],
        }),
        None => Ok(()),
    }
}

/// Equal-width reliability bins over `[0, 1]`; a probability of exactly 1
/// falls in the last bin.
pub fn reliability_curve(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<ReliabilityCurve, CalibrationError> {
    check_pair(probs, labels, n_bins)?;
    let mut sum_p = vec![0.0; n_bins];
    let mut pos = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = bin_of(p, n_bins);
        sum_p[b] += p;
        pos[b] += usize::from(y);
        count[b] += 1;
    }
    Ok((0..n_bins)
        .map(|b| {
            let c = count[b];
            ReliabilityBin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                count: c,
                mean_pred: (c > 0).then(|| sum_p[b] / c as f64),
                frac_pos: (c > 0).then(|| pos[b] as f64 / c as f64),
            }
        })
        .collect())
}

pub fn ece_mce(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<CalibMetrics, CalibrationError> {
    let curve = reliability_curve(probs, labels, n_bins)?;
    Ok(metrics_from_curve(&curve, n_bins))
}

fn metrics_from_curve(curve: &[ReliabilityBin], n_bins: usize) -> CalibMetrics {
    let n: usize = curve.iter().map(|b| b.count).sum();
    let mut ece = 0.0;
    let mut mce: f64 = 0.0;
    for bin in curve {
        if let (Some(conf), Some(acc)) = (bin.mean_pred, bin.frac_pos) {
            let gap = (acc - conf).abs();
            ece += bin.count as f64 / n as f64 * gap;
            mce = mce.max(gap);
        }
    }
    CalibMetrics {
        ece: ece.min(mce),
        mce,
        n,
        n_bins,
    }
}

/// Area under the ROC curve by pair counting; tied scores count one half.
/// `None` when either class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let n_pos = labels.iter().filter(|&&y| y).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Twice the Mann-Whitney U, kept integral.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        twice_u += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    Some(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub fit_fraction: f64,
    pub seed: u64,
    pub n_bins: usize,
    pub min_positives: usize,
    pub platt_input: PlattInput,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fit_fraction: 0.30,
            seed: 0,
            n_bins: 10,
            min_positives: 10,
            platt_input: PlattInput::Raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub model: CalibrationModel,
    pub n_fit: usize,
    pub n_eval: usize,
    pub pre: CalibMetrics,
    pub post: CalibMetrics,
    pub curve_pre: ReliabilityCurve,
    pub curve_post: ReliabilityCurve,
    pub auc_pre: Option<f64>,
    pub auc_post: Option<f64>,
}

/// Splits by participant, fits on the fit side (isotonic, or Platt when the
/// fit side has fewer than `min_positives` positives) and scores the eval
/// side before and after remapping.
pub fn calibrate_pipeline(samples: &[CalibSample], cfg: &PipelineConfig) -> Result<CalibrationResult, CalibrationError> {
    check_probs(samples)?;
    let (fit, eval) = split_by_participant(samples, cfg.fit_fraction, cfg.seed)?;
    let positives = fit.iter().filter(|s| s.label).count();
    let model = if positives < cfg.min_positives {
        tracing::info!(positives, min = cfg.min_positives, "too few positives for isotonic; using Platt");
        CalibrationModel::Platt(fit_platt(
            &fit,
            PlattOptions {
                input: cfg.platt_input,
                allow_single_class: true,
            },
        )?)
    } else {
        match fit_isotonic(&fit) {
            Ok(m) => CalibrationModel::Isotonic(m),
            Err(CalibrationError::FallbackNeeded(_)) => CalibrationModel::Platt(fit_platt(
                &fit,
                PlattOptions {
                    input: cfg.platt_input,
                    allow_single_class: true,
                },
            )?),
            Err(e) => return Err(e),
        }
    };
    let labels: Vec<bool> = eval.iter().map(|s| s.label).collect();
    let raw: Vec<f64> = eval.iter().map(|s| s.prob).collect();
    let mapped: Vec<f64> = raw.iter().map(|&p| model.predict(p)).collect();
    let curve_pre = reliability_curve(&raw, &labels, cfg.n_bins)?;
    let curve_post = reliability_curve(&mapped, &labels, cfg.n_bins)?;
    Ok(CalibrationResult {
        n_fit: fit.len(),
        n_eval: eval.len(),
        pre: metrics_from_curve(&curve_pre, cfg.n_bins),
        post: metrics_from_curve(&curve_post, cfg.n_bins),
        curve_pre,
        curve_post,
        auc_pre: auc(&raw, &labels),
        auc_post: auc(&mapped, &labels),
        model,
    })
}
