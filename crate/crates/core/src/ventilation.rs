//! Mouth-state sequence cleaning and ventilation-rate estimation.
//!
//! A track becomes a per-frame sequence of mouth states (gaps are missing
//! slots) and passes through a fixed chain of rules: the dropped-jaw gate,
//! single-gap imputation, singleton discard/conversion, longest gap-free span
//! selection, flank trimming and cycle averaging. The mean open/closed cycle
//! duration `d` (frames) gives a rate of `60 * fps / d` cycles per minute.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::MouthState;
use crate::numfmt::{ser_f64, ser_opt_f64};
use crate::seed;
use crate::track::TrackRecord;

/// One frame of a mouth sequence; `None` is a missed detection.
pub type Slot = Option<MouthState>;

#[derive(Debug, Error, PartialEq)]
pub enum VentilationError {
    #[error("cycle duration and fps must be positive (got {duration} frames at {fps} fps)")]
    Domain { duration: f64, fps: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MouthSequence {
    pub track_id: u64,
    pub start_frame: u32,
    pub states: Vec<Slot>,
}

impl MouthSequence {
    pub fn new(track_id: u64, start_frame: u32, states: Vec<Slot>) -> Self {
        Self {
            track_id,
            start_frame,
            states,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn with_states(&self, states: Vec<Slot>) -> Self {
        Self::new(self.track_id, self.start_frame, states)
    }
}

/// Maximal run of identical slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub value: Slot,
    pub start: usize,
    pub len: usize,
}

pub fn runs(states: &[Slot]) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (i, s) in states.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.value == *s => r.len += 1,
            _ => out.push(Run {
                value: *s,
                start: i,
                len: 1,
            }),
        }
    }
    out
}

/// Slots from the first to the last associated frame; unassociated frames are missing.
pub fn build_sequence(track: &TrackRecord) -> MouthSequence {
    let Some(start) = track.first_frame() else {
        return MouthSequence::new(track.track_id, 0, Vec::new());
    };
    let mut states = vec![None; track.span_len()];
    for e in &track.entries {
        states[(e.frame_index - start) as usize] = Some(e.state);
    }
    MouthSequence::new(track.track_id, start, states)
}

/// Rejects sequences where dropped-jaw slots are a strict majority; otherwise
/// turns every dropped-jaw slot into a missed detection.
pub fn dropped_jaw_gate(seq: &MouthSequence) -> Option<MouthSequence> {
    let dropped = seq
        .states
        .iter()
        .filter(|s| **s == Some(MouthState::DroppedJaw))
        .count();
    if dropped > seq.len() / 2 {
        return None;
    }
    let states = seq
        .states
        .iter()
        .map(|s| match s {
            Some(MouthState::DroppedJaw) => None,
            other => *other,
        })
        .collect();
    Some(seq.with_states(states))
}

/// Fills every isolated single missing slot with one of its two neighbours,
/// chosen by a fair coin. Longer gaps and edge gaps are left alone.
pub fn impute_single_gaps<R: Rng + ?Sized>(seq: &MouthSequence, rng: &mut R) -> MouthSequence {
    let s = &seq.states;
    let mut out = s.clone();
    for i in 1..s.len().saturating_sub(1) {
        if s[i].is_none() {
            if let (Some(prev), Some(next)) = (s[i - 1], s[i + 1]) {
                out[i] = Some(if prev == next || rng.random_bool(0.5) {
                    prev
                } else {
                    next
                });
            }
        }
    }
    seq.with_states(out)
}

fn flanked_by(rs: &[Run], k: usize, state: MouthState) -> bool {
    k > 0 && k + 1 < rs.len() && rs[k - 1].value == Some(state) && rs[k + 1].value == Some(state)
}

/// Discards sequences containing open-closed-open with a one-frame closed
/// run; otherwise rewrites one-frame open runs between closed runs to closed.
pub fn singleton_rules(seq: &MouthSequence) -> Option<MouthSequence> {
    let rs = runs(&seq.states);
    let discard = rs.iter().enumerate().any(|(k, r)| {
        r.value == Some(MouthState::Closed) && r.len == 1 && flanked_by(&rs, k, MouthState::Open)
    });
    if discard {
        return None;
    }
    let mut states = seq.states.clone();
    for (k, r) in rs.iter().enumerate() {
        if r.value == Some(MouthState::Open) && r.len == 1 && flanked_by(&rs, k, MouthState::Closed) {
            states[r.start] = Some(MouthState::Closed);
        }
    }
    Some(seq.with_states(states))
}

/// Contiguous gap-free slice of a sequence, with absolute frame offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub start_frame: u32,
    pub states: Vec<MouthState>,
}

impl Span {
    pub fn end_frame(&self) -> Option<u32> {
        (!self.states.is_empty()).then(|| self.start_frame + self.states.len() as u32 - 1)
    }
}

/// Longest run of slots with no missed detection; earliest wins ties.
pub fn longest_clean_span(seq: &MouthSequence) -> Span {
    let mut best: (usize, usize) = (0, 0);
    let mut i = 0;
    let s = &seq.states;
    while i < s.len() {
        if s[i].is_none() {
            i += 1;
            continue;
        }
        let start = i;
        while i < s.len() && s[i].is_some() {
            i += 1;
        }
        if i - start > best.1 {
            best = (start, i - start);
        }
    }
    Span {
        start_frame: seq.start_frame + best.0 as u32,
        states: s[best.0..best.0 + best.1].iter().map(|x| x.expect("gap-free")).collect(),
    }
}

fn state_runs(states: &[MouthState]) -> Vec<(MouthState, usize)> {
    let mut out: Vec<(MouthState, usize)> = Vec::new();
    for &s in states {
        match out.last_mut() {
            Some((v, n)) if *v == s => *n += 1,
            _ => out.push((s, 1)),
        }
    }
    out
}

/// Drops the first and the last maximal run, which were observed partially.
pub fn trim_flanks(span: &Span) -> Span {
    let rs = state_runs(&span.states);
    if rs.len() <= 2 {
        return Span {
            start_frame: span.start_frame,
            states: Vec::new(),
        };
    }
    let head = rs[0].1;
    let tail = rs[rs.len() - 1].1;
    Span {
        start_frame: span.start_frame + head as u32,
        states: span.states[head..span.states.len() - tail].to_vec(),
    }
}

/// Mean cycle duration and number of complete cycles.
///
/// Runs are paired in order starting from the first one; each pair is one
/// cycle, and an unpaired trailing run is ignored.
pub fn cycle_duration(span: &Span) -> Option<(f64, usize)> {
    let rs = state_runs(&span.states);
    let cycles: Vec<usize> = rs.chunks_exact(2).map(|p| p[0].1 + p[1].1).collect();
    if cycles.is_empty() {
        return None;
    }
    let mean = cycles.iter().sum::<usize>() as f64 / cycles.len() as f64;
    Some((mean, cycles.len()))
}

/// Cycles per minute for a cycle of `cycle_duration_frames` at `fps`.
pub fn ventilation_rate(cycle_duration_frames: f64, fps: f64) -> Result<f64, VentilationError> {
    if !(cycle_duration_frames > 0.0 && fps > 0.0) {
        return Err(VentilationError::Domain {
            duration: cycle_duration_frames,
            fps,
        });
    }
    Ok(60.0 * fps / cycle_duration_frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VentilationEstimate {
    pub track_id: u64,
    #[serde(serialize_with = "ser_f64")]
    pub cycle_duration_frames: f64,
    #[serde(serialize_with = "ser_f64")]
    pub ventilation_rate_cpm: f64,
    pub n_complete_cycles: usize,
    pub used_span: (u32, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackOutcome {
    Estimated(VentilationEstimate),
    NeverClosed,
    NeverOpened,
    DroppedJawMajority,
    DiscardedSingletonClosed,
    NoCompleteCycle,
}

impl TrackOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            TrackOutcome::Estimated(_) => "estimated",
            TrackOutcome::NeverClosed => "never_closed",
            TrackOutcome::NeverOpened => "never_opened",
            TrackOutcome::DroppedJawMajority => "dropped_jaw_majority",
            TrackOutcome::DiscardedSingletonClosed => "discarded_singleton_closed",
            TrackOutcome::NoCompleteCycle => "no_complete_cycle",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "never_closed" => TrackOutcome::NeverClosed,
            "never_opened" => TrackOutcome::NeverOpened,
            "dropped_jaw_majority" => TrackOutcome::DroppedJawMajority,
            "discarded_singleton_closed" => TrackOutcome::DiscardedSingletonClosed,
            "no_complete_cycle" => TrackOutcome::NoCompleteCycle,
            _ => return None,
        })
    }

    pub fn rate(&self) -> Option<f64> {
        match self {
            TrackOutcome::Estimated(e) => Some(e.ventilation_rate_cpm),
            _ => None,
        }
    }
}

/// Full cleaning-and-estimation chain for one sequence.
pub fn estimate_sequence<R: Rng + ?Sized>(seq: &MouthSequence, fps: f64, rng: &mut R) -> TrackOutcome {
    let Some(seq) = dropped_jaw_gate(seq) else {
        return TrackOutcome::DroppedJawMajority;
    };
    let mut observed = seq.states.iter().flatten().peekable();
    if observed.peek().is_none() {
        return TrackOutcome::NoCompleteCycle;
    }
    let (mut any_open, mut any_closed) = (false, false);
    for s in observed {
        any_open |= *s == MouthState::Open;
        any_closed |= *s == MouthState::Closed;
    }
    if !any_closed {
        return TrackOutcome::NeverClosed;
    }
    if !any_open {
        return TrackOutcome::NeverOpened;
    }
    let seq = impute_single_gaps(&seq, rng);
    let Some(seq) = singleton_rules(&seq) else {
        return TrackOutcome::DiscardedSingletonClosed;
    };
    let span = trim_flanks(&longest_clean_span(&seq));
    let Some((duration, n)) = cycle_duration(&span) else {
        return TrackOutcome::NoCompleteCycle;
    };
    let rate = ventilation_rate(duration, fps).expect("cycles span at least two frames");
    TrackOutcome::Estimated(VentilationEstimate {
        track_id: seq.track_id,
        cycle_duration_frames: duration,
        ventilation_rate_cpm: rate,
        n_complete_cycles: n,
        used_span: (span.start_frame, span.end_frame().unwrap_or(span.start_frame)),
    })
}

/// Per-track generator seeded from `(global_seed, track_id)`.
pub fn track_rng(global_seed: u64, track_id: u64) -> rand_chacha::ChaCha8Rng {
    seed::rng(seed::derive_indexed(global_seed, "impute", track_id))
}

pub fn estimate_track<R: Rng + ?Sized>(track: &TrackRecord, fps: f64, rng: &mut R) -> TrackOutcome {
    if track.entries.is_empty() {
        return TrackOutcome::NoCompleteCycle;
    }
    estimate_sequence(&build_sequence(track), fps, rng)
}

/// Estimates every track with its own derived generator; output ordered by track id.
pub fn estimate_tracks(tracks: &[TrackRecord], fps: f64, global_seed: u64) -> Vec<(u64, TrackOutcome)> {
    let mut out: Vec<(u64, TrackOutcome)> = tracks
        .iter()
        .map(|t| {
            let mut rng = track_rng(global_seed, t.track_id);
            (t.track_id, estimate_track(t, fps, &mut rng))
        })
        .collect();
    out.sort_by_key(|(id, _)| *id);
    out
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 10.0;
pub const HISTOGRAM_BINS: usize = 20;

/// Pen-level aggregate of track outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenReport {
    pub source_id: String,
    pub video_length_frames: u64,
    #[serde(serialize_with = "ser_f64")]
    pub fps: f64,
    pub n_fish: usize,
    pub n_dropped_jaw: usize,
    pub n_never_closed: usize,
    pub n_with_cycle: usize,
    pub n_after_qc: usize,
    #[serde(serialize_with = "ser_opt_f64")]
    pub median_vr_cpm: Option<f64>,
    pub vr_values: Vec<f64>,
    /// Counts for bins `[10 k, 10 (k + 1))` cpm, `k = 0..20`.
    pub histogram: Vec<usize>,
    /// Rates at or above the last bin edge.
    pub histogram_overflow: usize,
}

/// Median with the mean-of-central-pair convention; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn pen_report(outcomes: &[TrackOutcome], source_id: &str, video_length_frames: u64, fps: f64) -> PenReport {
    let mut vr_values: Vec<f64> = outcomes.iter().filter_map(TrackOutcome::rate).collect();
    let count = |f: fn(&TrackOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count();
    let n_after_qc = vr_values.len();
    let mut histogram = vec![0usize; HISTOGRAM_BINS];
    let mut histogram_overflow = 0;
    for &v in &vr_values {
        let bin = (v / HISTOGRAM_BIN_WIDTH).floor() as usize;
        if bin < HISTOGRAM_BINS {
            histogram[bin] += 1;
        } else {
            histogram_overflow += 1;
        }
    }
    let median_vr_cpm = median(&vr_values);
    vr_values.iter_mut().for_each(|v| *v = crate::numfmt::round6(*v));
    PenReport {
        source_id: source_id.to_string(),
        video_length_frames,
        fps,
        n_fish: outcomes.len(),
        n_dropped_jaw: count(|o| matches!(o, TrackOutcome::DroppedJawMajority)),
        n_never_closed: count(|o| matches!(o, TrackOutcome::NeverClosed)),
        n_with_cycle: n_after_qc + count(|o| matches!(o, TrackOutcome::DiscardedSingletonClosed)),
        n_after_qc,
        median_vr_cpm,
        vr_values,
        histogram,
        histogram_overflow,
    }
}
