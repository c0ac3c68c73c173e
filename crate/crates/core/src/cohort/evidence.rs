//! Synthetic evidence streams for one case.
//!
//! Coupling to the ground truth:
//! - audio: flat-prosody and silence rates grow with the depression class,
//!   stress bursts with the PTSD class;
//! - face: smile (AU12) onsets fall with the depression class, brow-tension
//!   (AU04) onsets rise with it; blinks are severity-independent;
//! - gaze: probable PTSD widens the spread and shifts gaze downwards;
//! - transcript: negation/negative/absolutist cues rise with depression, past
//!   focus rises with probable PTSD.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Case;
use crate::evidence::AUFrame;
use crate::seed::{keyed_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceConfig {
    pub session_seconds: f64,
    pub frame_rate: f64,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            session_seconds: 600.0,
            frame_rate: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioSecond {
    pub t: u32,
    pub flat_prosody: bool,
    pub silence: bool,
    pub stress_burst: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueCategory {
    Negation,
    Absolutist,
    Hedging,
    Positive,
    Negative,
    Past,
    Present,
    Future,
}

impl CueCategory {
    pub const ALL: [CueCategory; 8] = [
        CueCategory::Negation,
        CueCategory::Absolutist,
        CueCategory::Hedging,
        CueCategory::Positive,
        CueCategory::Negative,
        CueCategory::Past,
        CueCategory::Present,
        CueCategory::Future,
    ];

    /// Utterances in these categories feed the negative keyword table.
    pub fn is_negative_context(self) -> bool {
        matches!(self, CueCategory::Negation | CueCategory::Negative | CueCategory::Absolutist)
    }

    fn templates(self) -> &'static [&'static str] {
        match self {
            CueCategory::Negation => &[
                "I don't sleep much anymore",
                "I can't really focus at work",
                "nothing really helps lately",
                "I don't go out with friends now",
            ],
            CueCategory::Absolutist => &[
                "I always feel tired",
                "everything goes wrong for me",
                "I never get a break",
                "it's completely hopeless",
            ],
            CueCategory::Hedging => &[
                "maybe it's just stress",
                "I guess it's sort of okay",
                "I think it could be worse",
                "perhaps I sleep a bit better",
            ],
            CueCategory::Positive => &[
                "I enjoyed the weekend with family",
                "work has been good recently",
                "I like going for walks",
                "I feel pretty relaxed today",
            ],
            CueCategory::Negative => &[
                "I feel sad most days",
                "I'm tired and worried all the time",
                "sleep is terrible these days",
                "I feel worthless sometimes",
            ],
            CueCategory::Past => &[
                "back then I was deployed overseas",
                "I keep thinking about what happened",
                "it used to be different before the accident",
                "I remember the night it happened",
            ],
            CueCategory::Present => &[
                "right now I'm managing",
                "these days I stay home",
                "at the moment things are busy",
                "today I feel okay",
            ],
            CueCategory::Future => &[
                "I plan to start a new job",
                "next month I'll visit my sister",
                "I hope things will improve",
                "I want to travel next year",
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueEvent {
    pub t: f64,
    pub category: CueCategory,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazePoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub audio_rails: Vec<AudioSecond>,
    pub cue_events: Vec<CueEvent>,
    pub au_frames: Vec<AUFrame>,
    pub gaze_points: Vec<GazePoint>,
}

impl EvidenceBundle {
    /// (text, negative-context) pairs for keyword tables.
    pub fn utterances(&self) -> Vec<(String, bool)> {
        self.cue_events
            .iter()
            .map(|e| (e.text.clone(), e.category.is_negative_context()))
            .collect()
    }
}

/// Seconds between utterance slots.
const UTTERANCE_SLOT: f64 = 8.0;

pub fn generate_evidence(case: &Case, seed: u64, cfg: &EvidenceConfig) -> EvidenceBundle {
    let mut rng = rng_from(keyed_seed(seed, &case.pid));
    let d = f64::from(case.truth.depression());
    let p = case.truth.ptsd();
    let seconds = cfg.session_seconds.max(0.0).floor() as u32;

    let audio_rails = (0..seconds)
        .map(|t| AudioSecond {
            t,
            flat_prosody: rng.random_bool(0.05 + 0.07 * d),
            silence: rng.random_bool(0.04 + 0.05 * d),
            stress_burst: rng.random_bool(0.02 + 0.06 * f64::from(p)),
        })
        .collect();

    let cue_events = transcript(&mut rng, d, p == 2, cfg.session_seconds);
    let (au_frames, gaze_points) = face(&mut rng, d, p == 2, cfg);
    EvidenceBundle {
        audio_rails,
        cue_events,
        au_frames,
        gaze_points,
    }
}

fn transcript(rng: &mut ChaCha8Rng, d: f64, probable_ptsd: bool, session: f64) -> Vec<CueEvent> {
    let weights = |cat: CueCategory| match cat {
        CueCategory::Negation => 1.0 + 0.6 * d,
        CueCategory::Absolutist => 0.5 + 0.4 * d,
        CueCategory::Hedging => 1.0,
        CueCategory::Positive => 2.0 - 0.4 * d,
        CueCategory::Negative => 0.5 + 0.6 * d,
        CueCategory::Past => 1.0 + if probable_ptsd { 1.5 } else { 0.0 },
        CueCategory::Present => 1.5,
        CueCategory::Future => 1.0 - 0.15 * d,
    };
    let total: f64 = CueCategory::ALL.iter().map(|&c| weights(c)).sum();
    let mut events = Vec::new();
    let mut slot = 0.0;
    while slot + UTTERANCE_SLOT <= session {
        let t = slot + rng.random::<f64>() * UTTERANCE_SLOT;
        let mut u = rng.random::<f64>() * total;
        let mut category = CueCategory::Future;
        for cat in CueCategory::ALL {
            u -= weights(cat);
            if u < 0.0 {
                category = cat;
                break;
            }
        }
        let templates = category.templates();
        let text = templates[rng.random_range(0..templates.len())].to_string();
        events.push(CueEvent { t, category, text });
        slot += UTTERANCE_SLOT;
    }
    events
}

/// Fills `trace[start..start+len]` with a plateau around `level`.
fn paint(trace: &mut [f64], start: usize, len: usize, level: f64, rng: &mut ChaCha8Rng) {
    let end = (start + len).min(trace.len());
    for v in &mut trace[start..end] {
        *v = (level + (rng.random::<f64>() - 0.5) * 0.1).clamp(0.0, 1.0);
    }
}

fn face(rng: &mut ChaCha8Rng, d: f64, probable_ptsd: bool, cfg: &EvidenceConfig) -> (Vec<AUFrame>, Vec<GazePoint>) {
    let n = (cfg.session_seconds.max(0.0) * cfg.frame_rate).floor() as usize;
    let fps = cfg.frame_rate;
    let mut au12: Vec<f64> = (0..n).map(|_| 0.05 + 0.2 * rng.random::<f64>()).collect();
    let mut au04: Vec<f64> = (0..n).map(|_| 0.05 + 0.2 * rng.random::<f64>()).collect();
    let mut au45: Vec<f64> = (0..n).map(|_| 0.1 * rng.random::<f64>()).collect();

    let smile_rate = 0.10 * (1.0 - 0.2 * d);
    let tension_rate = 0.02 + 0.02 * d;
    let seconds = (n as f64 / fps).ceil() as usize;
    for s in 0..seconds {
        let start = (s as f64 * fps) as usize;
        if rng.random_bool(smile_rate) {
            let len = ((1.0 + 2.0 * rng.random::<f64>()) * fps) as usize;
            let level = 0.6 + 0.35 * rng.random::<f64>();
            paint(&mut au12, start, len, level, rng);
        }
        if rng.random_bool(tension_rate) {
            let len = ((1.0 + 3.0 * rng.random::<f64>()) * fps) as usize;
            let level = 0.55 + 0.35 * rng.random::<f64>();
            paint(&mut au04, start, len, level, rng);
        }
        if rng.random_bool(0.3) {
            let len = rng.random_range(3..=6);
            let level = 0.7 + 0.3 * rng.random::<f64>();
            paint(&mut au45, start, len, level, rng);
        }
    }

    let spread = if probable_ptsd { 0.2 } else { 0.08 };
    let drop = if probable_ptsd { -0.15 } else { 0.0 };
    let target_dist = Normal::new(0.0, spread).expect("finite spread");
    let jitter = Normal::new(0.0, 0.01).expect("finite jitter");
    let mut gaze_points = Vec::with_capacity(seconds);
    let mut frames = Vec::with_capacity(n);
    let mut target = (0.0, drop);
    for i in 0..n {
        if i % (fps.max(1.0) as usize).max(1) == 0 {
            target = (target_dist.sample(rng), drop + target_dist.sample(rng));
            gaze_points.push(GazePoint {
                t: i as f64 / fps,
                x: target.0,
                y: target.1,
            });
        }
        frames.push(AUFrame {
            t: i as f64 / fps,
            au12: au12[i],
            au04: au04[i],
            au45: au45[i],
            gaze_x: target.0 + jitter.sample(rng),
            gaze_y: target.1 + jitter.sample(rng),
        });
    }
    (frames, gaze_points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_case, GeneratorConfig};
    use crate::evidence::{channel_runs, Channel};
    use crate::severity::SeverityPair;

    fn case_with(d: u8, p: u8) -> Case {
        let mut c = generate_case(&GeneratorConfig::default(), 0);
        c.truth = SeverityPair::new(d, p).unwrap();
        c
    }

    #[test]
    fn smile_runs_fall_with_severity() {
        let cfg = EvidenceConfig::default();
        for seed in [1u64, 2, 3] {
            let low = generate_evidence(&case_with(0, 0), seed, &cfg);
            let high = generate_evidence(&case_with(4, 2), seed, &cfg);
            let smiles = |b: &EvidenceBundle| channel_runs(&b.au_frames, Channel::Smile, &Channel::Smile.default_params()).len();
            assert!(smiles(&low) > smiles(&high), "seed {seed}: {} vs {}", smiles(&low), smiles(&high));
        }
    }

    #[test]
    fn zero_length_session_is_empty() {
        let cfg = EvidenceConfig {
            session_seconds: 0.0,
            frame_rate: 30.0,
        };
        let b = generate_evidence(&case_with(2, 1), 9, &cfg);
        assert_eq!(b, EvidenceBundle::default());
    }

    #[test]
    fn deterministic_per_pid_and_seed() {
        let cfg = EvidenceConfig {
            session_seconds: 60.0,
            frame_rate: 10.0,
        };
        let c = case_with(3, 2);
        assert_eq!(generate_evidence(&c, 4, &cfg), generate_evidence(&c, 4, &cfg));
        assert_ne!(generate_evidence(&c, 4, &cfg), generate_evidence(&c, 5, &cfg));
    }

    #[test]
    fn streams_are_time_ordered_and_bounded() {
        let cfg = EvidenceConfig {
            session_seconds: 120.0,
            frame_rate: 30.0,
        };
        let b = generate_evidence(&case_with(2, 2), 11, &cfg);
        assert_eq!(b.au_frames.len(), 3600);
        assert_eq!(b.audio_rails.len(), 120);
        assert!(b.au_frames.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(b.cue_events.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(b.cue_events.iter().all(|e| (0.0..=120.0).contains(&e.t)));
        assert!(b
            .au_frames
            .iter()
            .all(|f| [f.au12, f.au04, f.au45].iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn probable_ptsd_raises_past_focus() {
        let cfg = EvidenceConfig {
            session_seconds: 3600.0,
            frame_rate: 1.0,
        };
        let past = |b: &EvidenceBundle| b.cue_events.iter().filter(|e| e.category == CueCategory::Past).count();
        let without = generate_evidence(&case_with(1, 0), 3, &cfg);
        let with = generate_evidence(&case_with(1, 2), 3, &cfg);
        assert!(past(&with) > past(&without));
    }
}
