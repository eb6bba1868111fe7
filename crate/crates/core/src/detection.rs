//! Detection data model, box geometry and inference-time filtering.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::numfmt::{round6, ser_f64};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): need 0 <= min < max")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
}

/// Axis-aligned box in pixel corner coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    #[serde(serialize_with = "ser_f64")]
    x_min: f64,
    #[serde(serialize_with = "ser_f64")]
    y_min: f64,
    #[serde(serialize_with = "ser_f64")]
    x_max: f64,
    #[serde(serialize_with = "ser_f64")]
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let ok = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite())
            && x_min >= 0.0
            && y_min >= 0.0
            && x_min < x_max
            && y_min < y_max;
        if ok {
            Ok(Self {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        } else {
            Err(GeometryError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    /// Builds a box from center and size, clipping negative corners to zero.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(
            (cx - w / 2.0).max(0.0),
            (cy - h / 2.0).max(0.0),
            cx + w / 2.0,
            cy + h / 2.0,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Same box with coordinates rounded to the serialized precision.
    pub fn canonical(&self) -> Self {
        Self {
            x_min: round6(self.x_min),
            y_min: round6(self.y_min),
            x_max: round6(self.x_max),
            y_max: round6(self.y_max),
        }
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x_min: f64,
            y_min: f64,
            x_max: f64,
            y_max: f64,
        }
        let r = Raw::deserialize(d)?;
        BBox::new(r.x_min, r.y_min, r.x_max, r.y_max).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MouthState {
    Open,
    Closed,
    DroppedJaw,
}

impl MouthState {
    pub const ALL: [MouthState; 3] = [MouthState::Open, MouthState::Closed, MouthState::DroppedJaw];

    pub fn as_str(&self) -> &'static str {
        match self {
            MouthState::Open => "open",
            MouthState::Closed => "closed",
            MouthState::DroppedJaw => "dropped_jaw",
        }
    }
}

impl fmt::Display for MouthState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One detector output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub state: MouthState,
    confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, state: MouthState, confidence: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidConfidence(confidence));
        }
        Ok(Self {
            bbox,
            state,
            confidence,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

// Flattened on the wire: box corners first, then state and confidence.
#[derive(Serialize, Deserialize)]
struct DetectionWire {
    #[serde(serialize_with = "ser_f64")]
    x_min: f64,
    #[serde(serialize_with = "ser_f64")]
    y_min: f64,
    #[serde(serialize_with = "ser_f64")]
    x_max: f64,
    #[serde(serialize_with = "ser_f64")]
    y_max: f64,
    state: MouthState,
    #[serde(serialize_with = "ser_f64")]
    confidence: f64,
}

impl Serialize for Detection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DetectionWire {
            x_min: self.bbox.x_min,
            y_min: self.bbox.y_min,
            x_max: self.bbox.x_max,
            y_max: self.bbox.y_max,
            state: self.state,
            confidence: self.confidence,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Detection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = DetectionWire::deserialize(d)?;
        let bbox = BBox::new(w.x_min, w.y_min, w.x_max, w.y_max).map_err(serde::de::Error::custom)?;
        Detection::new(bbox, w.state, w.confidence).map_err(serde::de::Error::custom)
    }
}

/// 2x3 affine transform `[a, b, tx, c, d, ty]` mapping previous-frame pixels
/// to current-frame pixels: `x' = a x + b y + tx`, `y' = c x + d y + ty`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine(pub [f64; 6]);

impl Affine {
    pub const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine([1.0, 0.0, tx, 0.0, 1.0, ty])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, tx, c, d, ty] = self.0;
        (a * x + b * y + tx, c * x + d * y + ty)
    }

    /// Applies only the linear 2x2 part (for velocities).
    pub fn apply_linear(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, _, c, d, _] = self.0;
        (a * x + b * y, c * x + d * y)
    }

    pub fn determinant(&self) -> f64 {
        let [a, b, _, c, d, _] = self.0;
        a * d - b * c
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Serialize for Affine {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(6))?;
        for v in self.0 {
            seq.serialize_element(&round6(v))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Affine {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Affine(<[f64; 6]>::deserialize(d)?))
    }
}

/// All detections for one video frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_motion: Option<Affine>,
    pub detections: Vec<Detection>,
}

impl FrameRecord {
    pub fn new(frame_index: u32, detections: Vec<Detection>) -> Self {
        Self {
            frame_index,
            camera_motion: None,
            detections,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    #[serde(serialize_with = "ser_f64")]
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub source_id: String,
}

impl Default for VideoMeta {
    fn default() -> Self {
        Self {
            fps: 30.0,
            width: 1280,
            height: 960,
            source_id: String::new(),
        }
    }
}

/// Inference-time NMS threshold.
pub const DEFAULT_NMS_IOU: f64 = 0.7;
/// Inference-time cap on detections per frame.
pub const DEFAULT_MAX_DETECTIONS: usize = 100;

/// Detection ranking: confidence descending, then lower `x_min`, then lower `y_min`.
fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// Per-class greedy non-maximum suppression.
///
/// A detection survives iff its IoU with every already-kept detection of the
/// same class is below `iou_threshold`. The output holds at most
/// `max_detections` survivors in ranking order.
pub fn nms(dets: &[Detection], iou_threshold: f64, max_detections: usize) -> Vec<Detection> {
    let mut ranked: Vec<Detection> = dets.to_vec();
    ranked.sort_by(rank_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(ranked.len().min(max_detections));
    for d in ranked {
        if kept.len() == max_detections {
            break;
        }
        let suppressed = kept
            .iter()
            .any(|k| k.state == d.state && iou(&k.bbox, &d.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(a: f64, b: f64, c: f64, d: f64) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    fn det(b: BBox, s: MouthState, c: f64) -> Detection {
        Detection::new(b, s, c).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20.0, 20.0, 30.0, 30.0)), 0.0);
        // intersection 50, union 150
        assert!((iou(&a, &bb(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
        // touching edges share no interior
        assert_eq!(iou(&a, &bb(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(5.0, 0.0, 5.0, 1.0).is_err());
        assert!(BBox::new(-1.0, 0.0, 5.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(Detection::new(bb(0.0, 0.0, 1.0, 1.0), MouthState::Open, 1.5).is_err());
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], 0.7, 100).is_empty());

        let a = bb(0.0, 0.0, 10.0, 10.0);
        let out = nms(
            &[det(a, MouthState::Open, 0.8), det(a, MouthState::Open, 0.9)],
            0.7,
            100,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].confidence(), 0.9);

        let out = nms(
            &[det(a, MouthState::Open, 0.9), det(a, MouthState::Closed, 0.8)],
            0.7,
            100,
        );
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn nms_truncates_and_breaks_ties_by_position() {
        let dets: Vec<_> = (0..5)
            .rev()
            .map(|i| det(bb(i as f64 * 20.0, 0.0, i as f64 * 20.0 + 10.0, 10.0), MouthState::Open, 0.5))
            .collect();
        let out = nms(&dets, 0.7, 3);
        let xs: Vec<f64> = out.iter().map(|d| d.bbox.x_min()).collect();
        assert_eq!(xs, vec![0.0, 20.0, 40.0]);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 1.0..50.0f64, 1.0..50.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    fn arb_det() -> impl Strategy<Value = Detection> {
        (arb_box(), 0..3usize, 0.0..=1.0f64)
            .prop_map(|(b, s, c)| Detection::new(b, MouthState::ALL[s], c).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let x = iou(&a, &b);
            prop_assert!((x - iou(&b, &a)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
            if a == b { prop_assert!((x - 1.0).abs() < 1e-12); }
        }

        #[test]
        fn nms_output_properties(dets in prop::collection::vec(arb_det(), 0..40), thr in 0.05..=1.0f64, max in 1usize..20) {
            let out = nms(&dets, thr, max);
            prop_assert!(out.len() <= max);
            for s in MouthState::ALL {
                let same: Vec<_> = out.iter().filter(|d| d.state == s).collect();
                for w in same.windows(2) {
                    prop_assert!(w[0].confidence() >= w[1].confidence());
                }
                for i in 0..same.len() {
                    for j in i + 1..same.len() {
                        prop_assert!(iou(&same[i].bbox, &same[j].bbox) < thr);
                    }
                }
            }
        }
    }
}
