//! Tracking-by-detection with two confidence bands.
//!
//! Each frame: predict every live track, compensate camera motion, associate
//! high-confidence detections with active and lost tracks, associate the
//! low-confidence remainder with still-unmatched active tracks, spawn tracks
//! from leftover confident detections, and age out tracks that exceed the
//! buffer.

mod camera;
mod kalman;

pub use camera::{apply_camera_motion, estimate_camera_motion};
pub use kalman::{Covariance, Mean, MotionState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{self, Assignment};
use crate::detection::{iou, nms, BBox, Detection, FrameRecord, DEFAULT_MAX_DETECTIONS, DEFAULT_NMS_IOU};
use crate::track::{TrackEntry, TrackRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrackerError {
    #[error("frame {got} arrived after frame {last}; frames must be strictly increasing")]
    OutOfOrder { last: u32, got: u32 },
    #[error("invalid tracker config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub high_conf_threshold: f64,
    pub low_conf_threshold: f64,
    /// Minimum IoU for first-stage association.
    pub match_threshold: f64,
    pub new_track_threshold: f64,
    pub track_buffer_frames: u32,
    /// Minimum IoU for second-stage (low-confidence) association.
    pub second_stage_match_threshold: f64,
    pub use_camera_motion: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            high_conf_threshold: 0.5,
            low_conf_threshold: 0.1,
            match_threshold: 0.7,
            new_track_threshold: 0.5,
            track_buffer_frames: 30,
            second_stage_match_threshold: 0.5,
            use_camera_motion: true,
        }
    }
}

impl TrackerConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrackerError> {
        let v = value.trim();
        let num = |v: &str| v.parse::<f64>().map_err(|_| TrackerError::Config(format!("{key}: cannot parse '{v}'")));
        match key {
            "high_conf_threshold" => self.high_conf_threshold = num(v)?,
            "low_conf_threshold" => self.low_conf_threshold = num(v)?,
            "match_threshold" => self.match_threshold = num(v)?,
            "new_track_threshold" => self.new_track_threshold = num(v)?,
            "second_stage_match_threshold" => self.second_stage_match_threshold = num(v)?,
            "track_buffer_frames" => {
                self.track_buffer_frames = v
                    .parse()
                    .map_err(|_| TrackerError::Config(format!("{key}: cannot parse '{v}'")))?
            }
            "use_camera_motion" => {
                self.use_camera_motion = match v {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(TrackerError::Config(format!("{key}: expected a boolean, got '{v}'"))),
                }
            }
            _ => return Err(TrackerError::Config(format!("unknown tracker key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(0.0 <= self.low_conf_threshold
            && self.low_conf_threshold < self.high_conf_threshold
            && self.high_conf_threshold <= 1.0)
        {
            return Err(TrackerError::Config(format!(
                "need 0 <= low ({}) < high ({}) <= 1",
                self.low_conf_threshold, self.high_conf_threshold
            )));
        }
        for (name, v) in [
            ("match_threshold", self.match_threshold),
            ("new_track_threshold", self.new_track_threshold),
            ("second_stage_match_threshold", self.second_stage_match_threshold),
        ] {
            if !unit(v) {
                return Err(TrackerError::Config(format!("{name} = {v} outside (0, 1]")));
            }
        }
        if self.track_buffer_frames < 1 {
            return Err(TrackerError::Config("track_buffer_frames must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
    Removed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub motion: MotionState,
    pub history: Vec<TrackEntry>,
    pub frames_since_update: u32,
    pub status: TrackStatus,
}

impl Track {
    fn spawn(track_id: u64, frame_index: u32, det: &Detection) -> Self {
        Self {
            track_id,
            motion: MotionState::initiate(&det.bbox),
            history: vec![entry(frame_index, det)],
            frames_since_update: 0,
            status: TrackStatus::Active,
        }
    }

    /// Time update; lost tracks stop extrapolating their size.
    pub fn predict(&self) -> MotionState {
        if self.status == TrackStatus::Active {
            self.motion.predict()
        } else {
            let mut m = self.motion.clone();
            m.mean[6] = 0.0;
            m.mean[7] = 0.0;
            m.predict()
        }
    }

    pub fn predicted_box(&self) -> Option<BBox> {
        self.motion.to_bbox()
    }

    pub fn last_entry(&self) -> &TrackEntry {
        self.history.last().expect("tracks are spawned from a detection")
    }

    pub fn to_record(&self) -> TrackRecord {
        TrackRecord::new(self.track_id, self.history.clone())
    }
}

fn entry(frame_index: u32, det: &Detection) -> TrackEntry {
    TrackEntry {
        frame_index,
        bbox: det.bbox,
        state: det.state,
        confidence: det.confidence(),
    }
}

/// Stateful single-stream tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    live: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
    prev_detections: Vec<Detection>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Self {
            config,
            live: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
            prev_detections: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Tracks that are not yet removed.
    pub fn live_tracks(&self) -> &[Track] {
        &self.live
    }

    /// Processes one frame and returns the tracks updated by it.
    pub fn step(&mut self, frame: &FrameRecord) -> Result<Vec<&Track>, TrackerError> {
        let elapsed = match self.last_frame {
            Some(last) if frame.frame_index <= last => {
                return Err(TrackerError::OutOfOrder {
                    last,
                    got: frame.frame_index,
                })
            }
            Some(last) => frame.frame_index - last,
            None => 1,
        };
        self.last_frame = Some(frame.frame_index);
        let buffer = self.config.track_buffer_frames;

        // Frames absent from the stream count as frames without detections.
        if elapsed > 1 {
            for t in &mut self.live {
                for _ in 1..elapsed {
                    t.motion = t.predict();
                    t.frames_since_update += 1;
                    if t.status == TrackStatus::Active {
                        t.status = TrackStatus::Lost;
                    }
                }
            }
            self.retire(buffer);
        }
        for t in &mut self.live {
            t.motion = t.predict();
        }

        let usable: Vec<Detection> = frame
            .detections
            .iter()
            .filter(|d| d.confidence() >= self.config.low_conf_threshold)
            .copied()
            .collect();
        if self.config.use_camera_motion {
            let affine = frame.camera_motion.unwrap_or_else(|| {
                estimate_camera_motion(&self.prev_detections, &usable, self.config.high_conf_threshold)
            });
            apply_camera_motion(&mut self.live, &affine);
        }

        let (high, low): (Vec<usize>, Vec<usize>) = (0..usable.len())
            .partition(|&i| usable[i].confidence() >= self.config.high_conf_threshold);

        let mut updated = vec![false; self.live.len()];

        // First stage: confident detections against every live track.
        let pool: Vec<usize> = (0..self.live.len()).collect();
        let first = self.associate_indices(&pool, &usable, &high, self.config.match_threshold);
        let unmatched_high: Vec<usize> = first.unmatched_cols.iter().map(|&j| high[j]).collect();
        let first_pairs: Vec<(usize, usize)> = first
            .matches
            .iter()
            .map(|&(ti, dj)| (pool[ti], high[dj]))
            .collect();

        // Second stage: weak detections against tracks that were active last frame.
        let remaining: Vec<usize> = first
            .unmatched_rows
            .iter()
            .map(|&ti| pool[ti])
            .filter(|&i| self.live[i].status == TrackStatus::Active)
            .collect();
        let second = self.associate_indices(&remaining, &usable, &low, self.config.second_stage_match_threshold);
        let second_pairs: Vec<(usize, usize)> = second
            .matches
            .iter()
            .map(|&(ti, dj)| (remaining[ti], low[dj]))
            .collect();
        for &(ti, di) in first_pairs.iter().chain(&second_pairs) {
            updated[ti] = true;
            let det = &usable[di];
            let t = &mut self.live[ti];
            t.motion = t.motion.update(&det.bbox);
            t.history.push(entry(frame.frame_index, det));
            t.frames_since_update = 0;
            t.status = TrackStatus::Active;
        }
        for (i, t) in self.live.iter_mut().enumerate() {
            if !updated[i] {
                t.frames_since_update += 1;
                t.status = TrackStatus::Lost;
            }
        }

        for di in unmatched_high {
            let det = &usable[di];
            if det.confidence() >= self.config.new_track_threshold {
                let id = self.next_id;
                self.next_id += 1;
                self.live.push(Track::spawn(id, frame.frame_index, det));
            }
        }
        updated.resize(self.live.len(), true);

        // Retire before reporting; keep the update flags aligned with `live`.
        let mut keep_flags = Vec::with_capacity(self.live.len());
        let mut survivors = Vec::with_capacity(self.live.len());
        for (mut t, was_updated) in self.live.drain(..).zip(updated) {
            if t.frames_since_update > buffer {
                t.status = TrackStatus::Removed;
                self.finished.push(t);
            } else {
                keep_flags.push(was_updated);
                survivors.push(t);
            }
        }
        self.live = survivors;
        self.prev_detections = usable;

        Ok(self
            .live
            .iter()
            .zip(keep_flags)
            .filter_map(|(t, u)| u.then_some(t))
            .collect())
    }

    fn retire(&mut self, buffer: u32) {
        let (gone, keep): (Vec<Track>, Vec<Track>) = self
            .live
            .drain(..)
            .partition(|t| t.frames_since_update > buffer);
        self.live = keep;
        for mut t in gone {
            t.status = TrackStatus::Removed;
            self.finished.push(t);
        }
    }

    fn associate_indices(&self, tracks: &[usize], dets: &[Detection], det_idx: &[usize], min_iou: f64) -> Assignment {
        let predicted: Vec<Option<BBox>> = tracks.iter().map(|&i| self.live[i].predicted_box()).collect();
        let chosen: Vec<Detection> = det_idx.iter().map(|&j| dets[j]).collect();
        associate_boxes(&predicted, &chosen, min_iou)
    }

    /// Ends the stream: every track, live or removed, ordered by id.
    pub fn finish(self) -> Vec<TrackRecord> {
        let mut all: Vec<Track> = self.finished;
        all.extend(self.live);
        all.sort_by_key(|t| t.track_id);
        all.iter().map(Track::to_record).collect()
    }
}

fn associate_boxes(predicted: &[Option<BBox>], dets: &[Detection], min_iou: f64) -> Assignment {
    let rows = predicted.len();
    let cols = dets.len();
    let mut cost = vec![1.0; rows * cols];
    for (i, p) in predicted.iter().enumerate() {
        if let Some(p) = p {
            for (j, d) in dets.iter().enumerate() {
                cost[i * cols + j] = 1.0 - iou(p, &d.bbox);
            }
        }
    }
    // An IoU of exactly `min_iou` still matches.
    assignment::solve_gated(&cost, rows, cols, 1.0 - min_iou + 1e-12)
}

/// One-to-one association minimizing total `1 - IoU`; pairs below `min_iou`
/// stay unmatched. Returns `(track, detection)` index pairs.
pub fn associate(predicted: &[BBox], detections: &[Detection], min_iou: f64) -> Assignment {
    let p: Vec<Option<BBox>> = predicted.iter().copied().map(Some).collect();
    associate_boxes(&p, detections, min_iou)
}

/// Runs a whole stream through a fresh tracker.
pub fn track_stream<'a, I>(config: TrackerConfig, frames: I) -> Result<Vec<TrackRecord>, TrackerError>
where
    I: IntoIterator<Item = &'a FrameRecord>,
{
    let mut tracker = Tracker::new(config)?;
    for f in frames {
        tracker.step(f)?;
    }
    Ok(tracker.finish())
}

/// Inference-time filtering of one frame with the default NMS settings.
pub fn filter_frame(frame: &FrameRecord) -> FrameRecord {
    FrameRecord {
        frame_index: frame.frame_index,
        camera_motion: frame.camera_motion,
        detections: nms(&frame.detections, DEFAULT_NMS_IOU, DEFAULT_MAX_DETECTIONS),
    }
}

/// NMS on every frame, then tracking.
pub fn track_detections<'a, I>(config: TrackerConfig, frames: I) -> Result<Vec<TrackRecord>, TrackerError>
where
    I: IntoIterator<Item = &'a FrameRecord>,
{
    let mut tracker = Tracker::new(config)?;
    for f in frames {
        tracker.step(&filter_frame(f))?;
    }
    Ok(tracker.finish())
}
