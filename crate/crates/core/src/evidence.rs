//! Interpretable evidence summaries: AU streaks, keyword contrast tables and
//! cue ribbons. None of these feed the risk score; they are display evidence.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{CueCategory, CueEvent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("event at t={t} outside session [0, {session}]")]
    EventOutsideSession { t: f64, session: f64 },
    #[error("window must be positive, got {0}")]
    Window(f64),
    #[error("invalid streak params: {0}")]
    Params(String),
}

/// One frame of facial action-unit intensities and gaze offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AUFrame {
    pub t: f64,
    /// AU12, smile.
    pub au12: f64,
    /// AU04, brow tension.
    pub au04: f64,
    /// AU45, blink.
    pub au45: f64,
    pub gaze_x: f64,
    pub gaze_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreakParams {
    pub threshold: f64,
    /// Minimum run length in frames, applied after merging.
    pub min_duration: usize,
    /// Largest unmarked gap (frames) bridged when merging.
    /// [`StreakParams::UNBOUNDED_GAP`] merges everything.
    pub merge_gap: usize,
}

impl StreakParams {
    pub const UNBOUNDED_GAP: usize = usize::MAX;

    pub fn validate(&self) -> Result<(), EvidenceError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(EvidenceError::Params(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.min_duration == 0 {
            return Err(EvidenceError::Params("min_duration must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Smile,
    Tension,
    Blink,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Smile, Channel::Tension, Channel::Blink];

    pub fn intensity(self, frame: &AUFrame) -> f64 {
        match self {
            Channel::Smile => frame.au12,
            Channel::Tension => frame.au04,
            Channel::Blink => frame.au45,
        }
    }

    /// Slider defaults shown with a fresh case.
    pub fn default_params(self) -> StreakParams {
        match self {
            Channel::Smile => StreakParams {
                threshold: 0.5,
                min_duration: 15,
                merge_gap: 6,
            },
            Channel::Tension => StreakParams {
                threshold: 0.5,
                min_duration: 15,
                merge_gap: 6,
            },
            Channel::Blink => StreakParams {
                threshold: 0.6,
                min_duration: 2,
                merge_gap: 3,
            },
        }
    }
}

/// Inclusive frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    // Inclusive bounds, so a span always holds at least one frame.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub channel: Channel,
    pub start_frame: usize,
    pub end_frame: usize,
}

/// Mark frames `>= threshold`, take maximal marked intervals, merge neighbours
/// separated by at most `merge_gap` unmarked frames, then drop anything
/// shorter than `min_duration`.
pub fn detect_streaks(trace: &[f64], params: &StreakParams) -> Vec<Span> {
    let mut merged: Vec<Span> = Vec::new();
    let mut i = 0;
    while i < trace.len() {
        if trace[i] < params.threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < trace.len() && trace[i] >= params.threshold {
            i += 1;
        }
        let span = Span { start, end: i - 1 };
        match merged.last_mut() {
            Some(prev) if span.start - prev.end - 1 <= params.merge_gap => prev.end = span.end,
            _ => merged.push(span),
        }
    }
    merged.retain(|s| s.len() >= params.min_duration);
    merged
}

pub fn channel_runs(frames: &[AUFrame], channel: Channel, params: &StreakParams) -> Vec<Run> {
    let trace: Vec<f64> = frames.iter().map(|f| channel.intensity(f)).collect();
    detect_streaks(&trace, params)
        .into_iter()
        .map(|s| Run {
            channel,
            start_frame: s.start,
            end_frame: s.end,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreakTotals {
    pub channel: Channel,
    pub runs: usize,
    pub covered_frames: usize,
}

pub fn streak_totals(runs: &[Run], channel: Channel) -> StreakTotals {
    let mine = runs.iter().filter(|r| r.channel == channel);
    StreakTotals {
        channel,
        runs: mine.clone().count(),
        covered_frames: mine.map(|r| r.end_frame - r.start_frame + 1).sum(),
    }
}

/// Word counts sorted by count descending, then token ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub entries: Vec<(String, u32)>,
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercased runs of letters; an apostrophe stays only when it sits between
/// two letters, so "don't" is one token and "'tis" is "tis".
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphabetic() {
            cur.extend(c.to_lowercase());
        } else if is_apostrophe(c)
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphabetic())
        {
            cur.push('\'');
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn count_tokens<'a, I: Iterator<Item = &'a str>>(texts: I, stopwords: &HashSet<String>) -> HashMap<String, u32> {
    let mut counts = HashMap::new();
    for text in texts {
        for tok in tokenize(text) {
            if tok.chars().count() < 2 || stopwords.contains(&tok) {
                continue;
            }
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    counts
}

fn ranked(counts: HashMap<String, u32>, top_k: usize) -> KeywordTable {
    let mut entries: Vec<(String, u32)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(top_k);
    KeywordTable { entries }
}

/// Global keyword table and the table restricted to negative contexts.
pub fn keyword_contrast(
    utterances: &[(String, bool)],
    stopwords: &HashSet<String>,
    top_k: usize,
) -> (KeywordTable, KeywordTable) {
    let global = count_tokens(utterances.iter().map(|(t, _)| t.as_str()), stopwords);
    let negative = count_tokens(
        utterances.iter().filter(|(_, neg)| *neg).map(|(t, _)| t.as_str()),
        stopwords,
    );
    (ranked(global, top_k), ranked(negative, top_k))
}

/// Per-window cue counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueRibbon {
    pub window_seconds: f64,
    pub windows: usize,
    pub counts: BTreeMap<CueCategory, Vec<u32>>,
}

/// Bins events into half-open windows `[k w, (k+1) w)`. An event exactly at
/// the session end goes into the last window.
pub fn cue_ribbon(events: &[CueEvent], window_seconds: f64, session_seconds: f64) -> Result<CueRibbon, EvidenceError> {
    if window_seconds.is_nan() || window_seconds <= 0.0 {
        return Err(EvidenceError::Window(window_seconds));
    }
    let windows = (session_seconds / window_seconds).ceil().max(0.0) as usize;
    let mut counts: BTreeMap<CueCategory, Vec<u32>> =
        CueCategory::ALL.iter().map(|&c| (c, vec![0; windows])).collect();
    for ev in events {
        if !(0.0..=session_seconds).contains(&ev.t) || windows == 0 {
            return Err(EvidenceError::EventOutsideSession {
                t: ev.t,
                session: session_seconds,
            });
        }
        let idx = ((ev.t / window_seconds).floor() as usize).min(windows - 1);
        counts.get_mut(&ev.category).expect("all categories present")[idx] += 1;
    }
    Ok(CueRibbon {
        window_seconds,
        windows,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(threshold: f64, min_duration: usize, merge_gap: usize) -> StreakParams {
        StreakParams {
            threshold,
            min_duration,
            merge_gap,
        }
    }

    const TRACE: [f64; 7] = [0.0, 0.6, 0.7, 0.2, 0.8, 0.9, 0.0];

    #[test]
    fn streak_examples() {
        assert_eq!(detect_streaks(&TRACE, &params(0.5, 2, 1)), vec![Span { start: 1, end: 5 }]);
        assert_eq!(
            detect_streaks(&TRACE, &params(0.5, 2, 0)),
            vec![Span { start: 1, end: 2 }, Span { start: 4, end: 5 }]
        );
        assert!(detect_streaks(&[0.0; 10], &params(0.5, 1, 0)).is_empty());
        assert!(detect_streaks(&[], &params(0.5, 1, 0)).is_empty());
    }

    #[test]
    fn threshold_is_inclusive_and_min_duration_after_merge() {
        assert_eq!(detect_streaks(&[0.5], &params(0.5, 1, 0)), vec![Span { start: 0, end: 0 }]);
        // Two single frames merged over one gap survive a min_duration of 3.
        assert_eq!(detect_streaks(&[0.9, 0.0, 0.9], &params(0.5, 3, 1)), vec![Span { start: 0, end: 2 }]);
    }

    #[test]
    fn unbounded_gap_gives_one_run() {
        let trace = [0.9, 0.0, 0.0, 0.0, 0.9, 0.0, 0.0, 0.9];
        let runs = detect_streaks(&trace, &params(0.5, 1, StreakParams::UNBOUNDED_GAP));
        assert_eq!(runs, vec![Span { start: 0, end: 7 }]);
    }

    #[test]
    fn params_validation() {
        assert!(params(1.2, 1, 0).validate().is_err());
        assert!(params(0.5, 0, 0).validate().is_err());
        assert!(params(0.5, 1, 0).validate().is_ok());
    }

    #[test]
    fn tokenizer_keeps_inner_apostrophes() {
        assert_eq!(tokenize("I don't sleep"), vec!["i", "don't", "sleep"]);
        assert_eq!(tokenize("'Tis  the rock'n'roll, ok?"), vec!["tis", "the", "rock'n'roll", "ok"]);
        assert_eq!(tokenize("can\u{2019}t"), vec!["can't"]);
        assert_eq!(tokenize("words' end"), vec!["words", "end"]);
    }

    #[test]
    fn keyword_contrast_example() {
        let utts = vec![("I don't sleep".to_string(), true), ("sleep is fine".to_string(), false)];
        let (global, negative) = keyword_contrast(&utts, &HashSet::new(), 10);
        assert_eq!(global.entries[0], ("sleep".to_string(), 2));
        assert_eq!(
            negative.entries,
            vec![("don't".to_string(), 1), ("sleep".to_string(), 1)]
        );
        let (g, n) = keyword_contrast(&[], &HashSet::new(), 5);
        assert!(g.entries.is_empty() && n.entries.is_empty());
        let positive_only = vec![("all good here".to_string(), false)];
        assert!(keyword_contrast(&positive_only, &HashSet::new(), 5).1.entries.is_empty());
    }

    #[test]
    fn keyword_stopwords_and_top_k() {
        let stop: HashSet<String> = ["is".to_string()].into_iter().collect();
        let utts = vec![("sleep is fine sleep is bad".to_string(), false)];
        let (global, _) = keyword_contrast(&utts, &stop, 2);
        assert_eq!(global.entries, vec![("sleep".to_string(), 2), ("bad".to_string(), 1)]);
    }

    fn ev(t: f64, category: CueCategory) -> CueEvent {
        CueEvent {
            t,
            category,
            text: String::new(),
        }
    }

    #[test]
    fn ribbon_examples() {
        let events = [ev(1.0, CueCategory::Negation), ev(2.0, CueCategory::Negation), ev(11.0, CueCategory::Negation)];
        let ribbon = cue_ribbon(&events, 10.0, 20.0).unwrap();
        assert_eq!(ribbon.counts[&CueCategory::Negation], vec![2, 1]);
        let empty = cue_ribbon(&[], 10.0, 25.0).unwrap();
        assert_eq!(empty.windows, 3);
        assert!(empty.counts.values().all(|v| v == &vec![0, 0, 0]));
        let boundary = cue_ribbon(&[ev(10.0, CueCategory::Hedging)], 10.0, 20.0).unwrap();
        assert_eq!(boundary.counts[&CueCategory::Hedging], vec![0, 1]);
        let end = cue_ribbon(&[ev(20.0, CueCategory::Hedging)], 10.0, 20.0).unwrap();
        assert_eq!(end.counts[&CueCategory::Hedging], vec![0, 1]);
        assert!(cue_ribbon(&[ev(21.0, CueCategory::Past)], 10.0, 20.0).is_err());
        assert!(cue_ribbon(&[ev(-0.5, CueCategory::Past)], 10.0, 20.0).is_err());
        assert!(cue_ribbon(&[], 0.0, 20.0).is_err());
    }

    proptest! {
        #[test]
        fn ribbon_conserves_counts(ts in proptest::collection::vec((0.0f64..100.0, 0usize..8), 0..60), w in 0.5f64..30.0) {
            let events: Vec<CueEvent> = ts.iter().map(|&(t, c)| ev(t, CueCategory::ALL[c])).collect();
            let ribbon = cue_ribbon(&events, w, 100.0).unwrap();
            for cat in CueCategory::ALL {
                let expected = events.iter().filter(|e| e.category == cat).count() as u32;
                prop_assert_eq!(ribbon.counts[&cat].iter().sum::<u32>(), expected);
            }
        }

        #[test]
        fn keyword_totals_conserved(words in proptest::collection::vec("[a-z]{1,5}", 0..40)) {
            let text = words.join(" ");
            let stop: HashSet<String> = HashSet::new();
            let (global, _) = keyword_contrast(&[(text, false)], &stop, usize::MAX);
            let expected = words.iter().filter(|w| w.len() >= 2).count() as u32;
            prop_assert_eq!(global.entries.iter().map(|e| e.1).sum::<u32>(), expected);
        }

        #[test]
        fn higher_threshold_never_covers_more(trace in proptest::collection::vec(0.0f64..1.0, 0..60),
                                             lo in 0.0f64..1.0, bump in 0.0f64..0.5,
                                             min_duration in 1usize..5, gap in 0usize..4) {
            let covered = |th: f64| -> usize {
                detect_streaks(&trace, &params(th, min_duration, gap)).iter().map(|s| s.len()).sum()
            };
            prop_assert!(covered((lo + bump).min(1.0)) <= covered(lo));
        }
    }
}
