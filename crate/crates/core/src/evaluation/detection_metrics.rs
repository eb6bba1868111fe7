//! COCO-style precision, recall and 101-point average precision.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::detection::{iou, BBox, FrameRecord, MouthState};
use crate::numfmt::{ser_f64, ser_opt_f64};

/// Ground-truth boxes keyed by frame index.
pub type FrameTruth = BTreeMap<u32, Vec<(BBox, MouthState)>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub frame_index: u32,
    pub prediction: usize,
    pub ground_truth: usize,
    #[serde(serialize_with = "ser_f64")]
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchedPair>,
}

/// Ranked predictions of one class with their match outcome.
struct Ranked {
    /// `(confidence, is_true_positive)` in descending confidence order.
    hits: Vec<(f64, bool)>,
    n_gt: usize,
    pairs: Vec<MatchedPair>,
}

fn rank_and_match(preds: &[FrameRecord], gts: &FrameTruth, class: MouthState, iou_thresh: f64, conf_thresh: f64) -> Ranked {
    let n_gt = gts.values().flatten().filter(|(_, c)| *c == class).count();
    // (confidence, frame, index within frame); stable ordering across equal scores.
    let mut order: Vec<(f64, u32, usize)> = Vec::new();
    for f in preds {
        for (i, d) in f.detections.iter().enumerate() {
            if d.state == class && d.confidence() >= conf_thresh {
                order.push((d.confidence(), f.frame_index, i));
            }
        }
    }
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let by_frame: BTreeMap<u32, &FrameRecord> = preds.iter().map(|f| (f.frame_index, f)).collect();
    let mut taken: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
    let mut hits = Vec::with_capacity(order.len());
    let mut pairs = Vec::new();
    for (conf, frame, i) in order {
        let det = &by_frame[&frame].detections[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(truth) = gts.get(&frame) {
            let used = taken.entry(frame).or_insert_with(|| vec![false; truth.len()]);
            for (g, (b, c)) in truth.iter().enumerate() {
                if *c != class || used[g] {
                    continue;
                }
                let o = iou(&det.bbox, b);
                if o >= iou_thresh && best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((g, o));
                }
            }
            if let Some((g, o)) = best {
                used[g] = true;
                pairs.push(MatchedPair {
                    frame_index: frame,
                    prediction: i,
                    ground_truth: g,
                    iou: o,
                });
            }
        }
        hits.push((conf, best.is_some()));
    }
    Ranked { hits, n_gt, pairs }
}

/// Precision and recall of one class.
///
/// Predictions are visited by descending confidence; each takes the unmatched
/// same-class ground truth in its frame with the highest IoU at or above
/// `iou_thresh`. Precision is 1 when there are neither predictions nor ground
/// truth and 0 when there is ground truth but no prediction; recall is 1 when
/// there is no ground truth.
pub fn precision_recall(
    preds: &[FrameRecord],
    gts: &FrameTruth,
    class: MouthState,
    iou_thresh: f64,
    conf_thresh: f64,
) -> (f64, f64, MatchResult) {
    let r = rank_and_match(preds, gts, class, iou_thresh, conf_thresh);
    let tp = r.pairs.len();
    let fp = r.hits.len() - tp;
    let fn_ = r.n_gt - tp;
    let precision = if tp + fp == 0 {
        if r.n_gt == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if r.n_gt == 0 { 1.0 } else { tp as f64 / r.n_gt as f64 };
    (
        precision,
        recall,
        MatchResult {
            tp,
            fp,
            fn_,
            pairs: r.pairs,
        },
    )
}

pub const RECALL_POINTS: usize = 101;

/// Average of interpolated precision at recall levels 0.00, 0.01, ..., 1.00.
/// `None` when the class has no ground truth.
pub fn average_precision(preds: &[FrameRecord], gts: &FrameTruth, class: MouthState, iou_thresh: f64) -> Option<f64> {
    let r = rank_and_match(preds, gts, class, iou_thresh, 0.0);
    if r.n_gt == 0 {
        return None;
    }
    Some(ap_from_hits(&r.hits, r.n_gt))
}

pub(crate) fn ap_from_hits(hits: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &(_, hit)) in hits.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // precision envelope, non-increasing in rank
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let level = k as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&r| r < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

/// Mean over classes with ground truth, then over IoU thresholds.
pub fn mean_ap(preds: &[FrameRecord], gts: &FrameTruth, classes: &[MouthState], iou_thresholds: &[f64]) -> Option<f64> {
    let per_threshold: Vec<f64> = iou_thresholds
        .iter()
        .filter_map(|&t| {
            let aps: Vec<f64> = classes
                .iter()
                .filter_map(|&c| average_precision(preds, gts, c, t))
                .collect();
            (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
        })
        .collect();
    (!per_threshold.is_empty()).then(|| per_threshold.iter().sum::<f64>() / per_threshold.len() as f64)
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| 0.5 + 0.05 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub class: MouthState,
    #[serde(serialize_with = "ser_f64")]
    pub iou_threshold: f64,
    #[serde(serialize_with = "ser_opt_f64")]
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub per_class: Vec<ClassAp>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub map50: Option<f64>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub map50_95: Option<f64>,
}

pub fn detection_report(preds: &[FrameRecord], gts: &FrameTruth) -> DetectionReport {
    let thresholds = coco_thresholds();
    let mut per_class = Vec::new();
    for &t in &thresholds {
        for c in MouthState::ALL {
            per_class.push(ClassAp {
                class: c,
                iou_threshold: t,
                ap: average_precision(preds, gts, c, t),
            });
        }
    }
    DetectionReport {
        per_class,
        map50: mean_ap(preds, gts, &MouthState::ALL, &[0.5]),
        map50_95: mean_ap(preds, gts, &MouthState::ALL, &thresholds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Detection;
    use rand::Rng;

    fn bb(x: f64) -> BBox {
        BBox::new(x, 0.0, x + 10.0, 10.0).unwrap()
    }

    fn det(x: f64, c: MouthState, conf: f64) -> Detection {
        Detection::new(bb(x), c, conf).unwrap()
    }

    fn truth(frames: &[(u32, Vec<(f64, MouthState)>)]) -> FrameTruth {
        frames
            .iter()
            .map(|(f, v)| (*f, v.iter().map(|&(x, c)| (bb(x), c)).collect()))
            .collect()
    }

    use MouthState::*;

    #[test]
    fn perfect_predictions() {
        let gts = truth(&[(0, vec![(0.0, Open), (50.0, Closed)]), (1, vec![(10.0, Open)])]);
        let preds = vec![
            FrameRecord::new(0, vec![det(0.0, Open, 0.9), det(50.0, Closed, 0.8)]),
            FrameRecord::new(1, vec![det(10.0, Open, 0.7)]),
        ];
        let (p, r, m) = precision_recall(&preds, &gts, Open, 0.5, 0.1);
        assert_eq!((p, r, m.tp, m.fp, m.fn_), (1.0, 1.0, 2, 0, 0));
        assert_eq!(average_precision(&preds, &gts, Open, 0.5), Some(1.0));
        assert_eq!(mean_ap(&preds, &gts, &[Open], &[0.5]), average_precision(&preds, &gts, Open, 0.5));
        assert_eq!(detection_report(&preds, &gts).map50, Some(1.0));
    }

    #[test]
    fn no_predictions() {
        let gts = truth(&[(0, vec![(0.0, Open)])]);
        let (p, r, _) = precision_recall(&[], &gts, Open, 0.5, 0.1);
        assert_eq!((p, r), (0.0, 0.0));
        let (p, r, _) = precision_recall(&[], &FrameTruth::new(), Open, 0.5, 0.1);
        assert_eq!((p, r), (1.0, 1.0));
        assert_eq!(average_precision(&[], &gts, Open, 0.5), Some(0.0));
        assert_eq!(average_precision(&[], &gts, Closed, 0.5), None);
    }

    #[test]
    fn wrong_class_is_a_miss() {
        let gts = truth(&[(0, vec![(0.0, Open)])]);
        let preds = vec![FrameRecord::new(0, vec![det(0.0, Closed, 0.9)])];
        let (p, r, _) = precision_recall(&preds, &gts, Open, 0.5, 0.1);
        assert_eq!((p, r), (0.0, 0.0));
        let (p, _, m) = precision_recall(&preds, &gts, Closed, 0.5, 0.1);
        assert_eq!((p, m.fp), (0.0, 1));
        assert_eq!(average_precision(&preds, &gts, Open, 0.5), Some(0.0));
    }

    // Largest number of disjoint (pred, gt) pairs with IoU >= t, by exhaustive search.
    fn brute_max_matching(preds: &[BBox], gts: &[BBox], t: f64) -> usize {
        fn rec(p: &[BBox], g: &[BBox], t: f64, i: usize, used: &mut Vec<bool>) -> usize {
            if i == p.len() {
                return 0;
            }
            let mut best = rec(p, g, t, i + 1, used);
            for j in 0..g.len() {
                if !used[j] && iou(&p[i], &g[j]) >= t {
                    used[j] = true;
                    best = best.max(1 + rec(p, g, t, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(preds, gts, t, 0, &mut vec![false; gts.len()])
    }

    #[test]
    fn three_preds_two_gt_against_exhaustive_matching() {
        // gt at x=0 and x=20; preds at 1 (0.9), 19 (0.8), 3 (0.7)
        let gts = truth(&[(0, vec![(0.0, Open), (20.0, Open)])]);
        let preds = vec![FrameRecord::new(0, vec![det(1.0, Open, 0.9), det(19.0, Open, 0.8), det(3.0, Open, 0.7)])];
        let (p, r, m) = precision_recall(&preds, &gts, Open, 0.5, 0.1);
        let best = brute_max_matching(&[bb(1.0), bb(19.0), bb(3.0)], &[bb(0.0), bb(20.0)], 0.5);
        assert_eq!(m.tp, best);
        assert_eq!(m.tp, 2);
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r, 1.0);
    }

    // Direct 101-point sum: at each recall level, max precision over ranks reaching it.
    pub(crate) fn ap_oracle(hits: &[bool], n_gt: usize) -> f64 {
        let mut pr = Vec::new();
        let mut tp = 0;
        for (k, &h) in hits.iter().enumerate() {
            tp += usize::from(h);
            pr.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
        }
        let mut sum = 0.0;
        for k in 0..=100 {
            let level = k as f64 / 100.0;
            let best = pr
                .iter()
                .filter(|(r, _)| *r >= level)
                .map(|(_, p)| *p)
                .fold(0.0f64, f64::max);
            sum += best;
        }
        sum / 101.0
    }

    #[test]
    fn five_preds_three_gt_against_oracle() {
        let gts = truth(&[(0, vec![(0.0, Open), (30.0, Open)]), (1, vec![(60.0, Open)])]);
        let preds = vec![
            FrameRecord::new(0, vec![det(0.5, Open, 0.95), det(100.0, Open, 0.9), det(30.5, Open, 0.6)]),
            FrameRecord::new(1, vec![det(200.0, Open, 0.8), det(60.0, Open, 0.3)]),
        ];
        let ap = average_precision(&preds, &gts, Open, 0.5).unwrap();
        let oracle = ap_oracle(&[true, false, false, true, true], 3);
        assert!((ap - oracle).abs() < 1e-12);
    }

    #[test]
    fn mean_of_three_classes() {
        let gts = truth(&[(0, vec![(0.0, Open), (30.0, Closed), (60.0, DroppedJaw)])]);
        let preds = vec![FrameRecord::new(
            0,
            vec![
                det(0.0, Open, 0.9),
                det(130.0, Closed, 0.9),
                det(30.0, Closed, 0.5),
                det(200.0, DroppedJaw, 0.9),
            ],
        )];
        let aps: Vec<f64> = MouthState::ALL
            .iter()
            .map(|&c| average_precision(&preds, &gts, c, 0.5).unwrap())
            .collect();
        assert_eq!(aps[0], 1.0);
        assert!((aps[1] - ap_oracle(&[false, true], 1)).abs() < 1e-12);
        assert_eq!(aps[2], 0.0);
        let m = mean_ap(&preds, &gts, &MouthState::ALL, &[0.5]).unwrap();
        assert!((m - aps.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rank_only_dependence_and_tail_false_positive() {
        let mut rng = crate::seed::rng(21);
        for _ in 0..50 {
            let n_gt = rng.random_range(1..5);
            let gts = truth(&[(0, (0..n_gt).map(|k| (k as f64 * 40.0, Open)).collect())]);
            let dets: Vec<Detection> = (0..rng.random_range(1..8))
                .map(|_| det(rng.random_range(0..6) as f64 * 40.0 + rng.random_range(0.0..4.0), Open, rng.random_range(0.05..0.99)))
                .collect();
            let preds = vec![FrameRecord::new(0, dets.clone())];
            let ap = average_precision(&preds, &gts, Open, 0.5).unwrap();
            assert!((0.0..=1.0).contains(&ap));

            let rescaled: Vec<Detection> = dets
                .iter()
                .map(|d| Detection::new(d.bbox, d.state, d.confidence().powi(3)).unwrap())
                .collect();
            let ap2 = average_precision(&[FrameRecord::new(0, rescaled)], &gts, Open, 0.5).unwrap();
            assert!((ap - ap2).abs() < 1e-12);

            let mut extra = dets.clone();
            extra.push(det(900.0, Open, 0.01));
            let ap3 = average_precision(&[FrameRecord::new(0, extra)], &gts, Open, 0.5).unwrap();
            assert!(ap3 <= ap + 1e-12);
        }
    }
}
