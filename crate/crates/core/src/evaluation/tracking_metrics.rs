//! Track association accuracy and detection quality along annotated tracks.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::detection_metrics::{precision_recall, FrameTruth};
use super::GroundTruthSet;
use crate::assignment::solve_gated;
use crate::detection::{iou, Detection, FrameRecord, MouthState};
use crate::numfmt::ser_f64;
use crate::track::{TrackEntry, TrackRecord};

/// Minimum IoU for a frame to count towards association.
pub const ASSOCIATION_IOU: f64 = 0.33;
/// Confidence floor for tracking-detection precision and recall.
pub const TRACKING_CONFIDENCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackAccuracy {
    pub gt_id: u64,
    pub dt_id: Option<u64>,
    pub matched_frames: usize,
    pub gt_length: usize,
    #[serde(serialize_with = "ser_f64")]
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    #[serde(serialize_with = "ser_f64")]
    pub min: f64,
    #[serde(serialize_with = "ser_f64")]
    pub q1: f64,
    #[serde(serialize_with = "ser_f64")]
    pub median: f64,
    #[serde(serialize_with = "ser_f64")]
    pub q3: f64,
    #[serde(serialize_with = "ser_f64")]
    pub max: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mean: f64,
}

impl Summary {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationResult {
    pub per_track: Vec<TrackAccuracy>,
    pub summary: Option<Summary>,
    /// Paired `(gt_id, dt_id, matched_frames)`.
    #[serde(skip)]
    pub pairs: Vec<(u64, u64, usize)>,
}

impl AssociationResult {
    pub fn mean(&self) -> Option<f64> {
        self.summary.map(|s| s.mean)
    }
}

fn entry_at(track: &TrackRecord, frame: u32) -> Option<&TrackEntry> {
    track
        .entries
        .binary_search_by_key(&frame, |e| e.frame_index)
        .ok()
        .map(|i| &track.entries[i])
}

/// Frames where both tracks exist and their boxes overlap with IoU >= 0.33.
pub fn overlap_score(gt: &TrackRecord, dt: &TrackRecord) -> usize {
    let (small, large) = if gt.entries.len() <= dt.entries.len() { (gt, dt) } else { (dt, gt) };
    small
        .entries
        .iter()
        .filter(|e| entry_at(large, e.frame_index).is_some_and(|o| iou(&e.bbox, &o.bbox) >= ASSOCIATION_IOU))
        .count()
}

fn spans_overlap(a: &TrackRecord, b: &TrackRecord) -> bool {
    match (a.first_frame(), a.last_frame(), b.first_frame(), b.last_frame()) {
        (Some(a0), Some(a1), Some(b0), Some(b1)) => a0 <= b1 && b0 <= a1,
        _ => false,
    }
}

/// Score matrix, gt rows by dt columns.
pub fn score_matrix(gt: &[TrackRecord], dt: &[TrackRecord]) -> Vec<usize> {
    let mut scores = vec![0usize; gt.len() * dt.len()];
    for (i, g) in gt.iter().enumerate() {
        for (j, d) in dt.iter().enumerate() {
            if spans_overlap(g, d) {
                scores[i * dt.len() + j] = overlap_score(g, d);
            }
        }
    }
    scores
}

/// One-to-one pairing of gt and dt tracks that maximises the total number
/// of overlapping frames. Returns `(gt index, dt index, score)`.
pub fn best_pairing(gt: &[TrackRecord], dt: &[TrackRecord]) -> Vec<(usize, usize, usize)> {
    let scores = score_matrix(gt, dt);
    let cost: Vec<f64> = scores.iter().map(|&s| -(s as f64)).collect();
    // Any pair with a positive score is admissible; the tiny per-match bonus
    // only separates pairings of equal total score.
    let a = solve_gated(&cost, gt.len(), dt.len(), -1e-6);
    a.matches
        .into_iter()
        .map(|(i, j)| (i, j, scores[i * dt.len() + j]))
        .collect()
}

/// Per-gt-track fraction of frames covered by its paired detected track.
pub fn association_accuracy(gt: &[TrackRecord], dt: &[TrackRecord]) -> AssociationResult {
    let pairing = best_pairing(gt, dt);
    let by_gt: BTreeMap<usize, (usize, usize)> = pairing.iter().map(|&(i, j, s)| (i, (j, s))).collect();
    let per_track: Vec<TrackAccuracy> = gt
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let (dt_id, matched) = match by_gt.get(&i) {
                Some(&(j, s)) => (Some(dt[j].track_id), s),
                None => (None, 0),
            };
            let len = g.entries.len();
            TrackAccuracy {
                gt_id: g.track_id,
                dt_id,
                matched_frames: matched,
                gt_length: len,
                accuracy: if len == 0 { 0.0 } else { matched as f64 / len as f64 },
            }
        })
        .collect();
    let acc: Vec<f64> = per_track.iter().map(|t| t.accuracy).collect();
    AssociationResult {
        summary: Summary::of(&acc),
        per_track,
        pairs: pairing
            .into_iter()
            .map(|(i, j, s)| (gt[i].track_id, dt[j].track_id, s))
            .collect(),
    }
}

/// Pairs each gt fish with a detected track for rate comparison: the
/// one-to-one association pairing, kept only when the shared frames make up
/// more than half of the detected track.
pub fn rate_pairs(gt: &[TrackRecord], dt: &[TrackRecord]) -> Vec<(u64, u64)> {
    best_pairing(gt, dt)
        .into_iter()
        .filter(|&(_, j, s)| 2 * s > dt[j].entries.len())
        .map(|(i, j, _)| (gt[i].track_id, dt[j].track_id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassPr {
    pub class: MouthState,
    #[serde(serialize_with = "ser_f64")]
    pub recall: f64,
    #[serde(serialize_with = "ser_f64")]
    pub precision: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Per-class recall and precision of tracked boxes against annotated tracks
/// at IoU 0.33 and confidence 0.1, over frames that carry annotations.
pub fn tracking_detection_pr(gt: &GroundTruthSet, dt: &[TrackRecord]) -> Vec<ClassPr> {
    let annotated: BTreeSet<u32> = gt.tracks.iter().flat_map(|t| t.entries.iter().map(|e| e.frame_index)).collect();
    let mut by_frame: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for t in dt {
        for e in &t.entries {
            if annotated.contains(&e.frame_index) {
                // entries come from validated detections
                let d = Detection::new(e.bbox, e.state, e.confidence).expect("track entry confidence in [0,1]");
                by_frame.entry(e.frame_index).or_default().push(d);
            }
        }
    }
    let preds: Vec<FrameRecord> = by_frame.into_iter().map(|(f, d)| FrameRecord::new(f, d)).collect();
    let truth: FrameTruth = GroundTruthSet::from_tracks(gt.tracks.clone()).frames;
    MouthState::ALL
        .iter()
        .map(|&c| {
            let (p, r, m) = precision_recall(&preds, &truth, c, ASSOCIATION_IOU, TRACKING_CONFIDENCE);
            ClassPr {
                class: c,
                recall: r,
                precision: p,
                tp: m.tp,
                fp: m.fp,
                fn_: m.fn_,
            }
        })
        .collect()
}
