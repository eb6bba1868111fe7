//! Ventilation-rate estimation from fish-head detection streams.
//!
//! The pipeline runs detection streams through a two-stage IoU tracker,
//! cleans each track's mouth-state sequence and converts the mean
//! open/closed cycle duration into cycles per minute. Supporting modules
//! cover detection and tracking metrics, corruption experiments and a
//! synthetic pen generator that provides ground truth.

pub mod assignment;
pub mod detection;
pub mod evaluation;
pub mod io;
pub mod numfmt;
pub mod robustness;
pub mod seed;
pub mod synthgen;
pub mod track;
pub mod tracker;
pub mod ventilation;

pub use detection::{iou, nms, Affine, BBox, Detection, FrameRecord, MouthState, VideoMeta};
pub use track::{TrackEntry, TrackRecord};
pub use tracker::{Tracker, TrackerConfig};
pub use ventilation::{PenReport, TrackOutcome, VentilationEstimate};
