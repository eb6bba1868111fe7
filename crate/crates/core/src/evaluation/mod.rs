//! Detection, tracking and rate-agreement metrics.

pub mod detection_metrics;
pub mod stats;
pub mod tracking_metrics;

use crate::track::TrackRecord;

pub use detection_metrics::{
    average_precision, coco_thresholds, detection_report, mean_ap, precision_recall, DetectionReport, FrameTruth,
    MatchResult,
};
pub use stats::{mae, mann_whitney_u, pearson, MannWhitney, MwuMethod, StatsError};
pub use tracking_metrics::{association_accuracy, rate_pairs, tracking_detection_pr, AssociationResult};

/// Annotated boxes per frame plus the per-fish annotated tracks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    pub frames: FrameTruth,
    pub tracks: Vec<TrackRecord>,
}

impl GroundTruthSet {
    /// Builds the per-frame view from annotated tracks.
    pub fn from_tracks(tracks: Vec<TrackRecord>) -> Self {
        let mut frames = FrameTruth::new();
        for t in &tracks {
            for e in &t.entries {
                frames.entry(e.frame_index).or_default().push((e.bbox, e.state));
            }
        }
        Self { frames, tracks }
    }

    pub fn n_boxes(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }
}
