//! Synthetic pens: fish crossing the view with known mouth cycles, plus a
//! detector error model, producing detection streams with ground truth.
//!
//! Fish are scheduled into grid cells (lanes by columns). Each cell holds at
//! most one fish at a time and fish in one cell enter at the same edge, so
//! with the default layout no two heads ever overlap.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{Affine, BBox, Detection, FrameRecord, MouthState, VideoMeta};
use crate::evaluation::GroundTruthSet;
use crate::numfmt::{round6, ser_f64, ser_opt_f64};
use crate::seed;
use crate::track::{TrackEntry, TrackRecord};
use crate::ventilation::{estimate_track, TrackOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("infeasible geometry: {0}")]
    Infeasible(String),
}

/// Detector error model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub miss_prob: f64,
    /// Flip probability for frames next to a state change; a frame whose
    /// partner across the same change was flipped keeps its label.
    pub transition_misclass_prob: f64,
    /// Flip probability elsewhere; `None` derives it from `transition_share`.
    pub interior_misclass_prob: Option<f64>,
    /// Target share of flips that land next to a state change.
    pub transition_share: f64,
    pub bbox_jitter_px: f64,
    /// Confidence distribution; `None` gives every detection 0.9.
    pub confidence_beta: Option<(f64, f64)>,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            miss_prob: 0.0,
            transition_misclass_prob: 0.0,
            interior_misclass_prob: Some(0.0),
            transition_share: 0.92,
            bbox_jitter_px: 0.0,
            confidence_beta: None,
        }
    }

    /// Moderate detector noise.
    pub fn moderate() -> Self {
        Self {
            miss_prob: 0.05,
            transition_misclass_prob: 0.3,
            interior_misclass_prob: None,
            transition_share: 0.92,
            bbox_jitter_px: 2.0,
            confidence_beta: Some((8.0, 2.0)),
        }
    }
}

/// Parameters of one synthetic pen video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenScenario {
    pub source_id: String,
    pub n_fish: usize,
    /// When set, fish keep arriving until every cell is busy past this many
    /// frames and the video is cut there; `n_fish` is then ignored.
    pub n_frames: Option<u32>,
    pub fps: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    pub vr_median: f64,
    /// Log-scale standard deviation of per-fish rates.
    pub vr_dispersion: f64,
    pub open_fraction: f64,
    /// Largest per-cycle shift of the open/closed boundary, in frames.
    pub split_jitter_frames: u32,
    pub track_length_median: f64,
    pub track_length_sigma: f64,
    pub track_length_min: u32,
    pub track_length_max: u32,
    pub dropped_jaw_fraction: f64,
    pub never_close_fraction: f64,
    pub noise: NoiseModel,
    /// Per-frame standard deviation of the shared camera translation.
    pub camera_jitter_px: f64,
    /// Whether the per-frame camera transform is written to the stream.
    pub camera_motion_in_stream: bool,
    pub head_width_px: f64,
    pub head_aspect: f64,
    pub columns: usize,
    pub min_gap_frames: u32,
    pub max_gap_frames: u32,
    /// Random vertical placement instead of lanes; heads may overlap.
    pub crowding: bool,
    pub seed: u64,
}

impl Default for PenScenario {
    fn default() -> Self {
        Self {
            source_id: "synthetic".into(),
            n_fish: 100,
            n_frames: None,
            fps: 30.0,
            frame_width: 1280,
            frame_height: 960,
            vr_median: 103.0,
            // exp(0.6745 * 0.148) - exp(-0.6745 * 0.148) is about 0.2, an
            // interquartile range near 20 cpm at 100 cpm.
            vr_dispersion: 0.148,
            open_fraction: 11.0 / 17.0,
            split_jitter_frames: 1,
            track_length_median: 69.0,
            // mean of the untruncated log-normal equals 84.78
            track_length_sigma: (2.0 * (84.78f64 / 69.0).ln()).sqrt(),
            track_length_min: 18,
            track_length_max: 226,
            dropped_jaw_fraction: 0.01,
            never_close_fraction: 0.04,
            noise: NoiseModel::none(),
            camera_jitter_px: 0.0,
            camera_motion_in_stream: true,
            head_width_px: 80.0,
            head_aspect: 0.8,
            columns: 2,
            min_gap_frames: 10,
            max_gap_frames: 30,
            crowding: false,
            seed: seed::DEFAULT_SEED,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, SynthError> {
    value
        .trim()
        .parse()
        .map_err(|_| SynthError::Invalid(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, SynthError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(SynthError::Invalid(format!("{key}: expected a boolean, got '{value}'"))),
    }
}

impl PenScenario {
    /// Sets one field from its textual form; `none` clears optional fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SynthError> {
        let v = value.trim();
        match key {
            "source_id" => self.source_id = v.to_string(),
            "n_fish" => self.n_fish = parse_num(key, v)?,
            "n_frames" => self.n_frames = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "fps" => self.fps = parse_num(key, v)?,
            "frame_width" => self.frame_width = parse_num(key, v)?,
            "frame_height" => self.frame_height = parse_num(key, v)?,
            "vr_median" => self.vr_median = parse_num(key, v)?,
            "vr_dispersion" => self.vr_dispersion = parse_num(key, v)?,
            "open_fraction" => self.open_fraction = parse_num(key, v)?,
            "split_jitter_frames" => self.split_jitter_frames = parse_num(key, v)?,
            "track_length_median" => self.track_length_median = parse_num(key, v)?,
            "track_length_sigma" => self.track_length_sigma = parse_num(key, v)?,
            "track_length_min" => self.track_length_min = parse_num(key, v)?,
            "track_length_max" => self.track_length_max = parse_num(key, v)?,
            "dropped_jaw_fraction" => self.dropped_jaw_fraction = parse_num(key, v)?,
            "never_close_fraction" => self.never_close_fraction = parse_num(key, v)?,
            "miss_prob" => self.noise.miss_prob = parse_num(key, v)?,
            "transition_misclass_prob" => self.noise.transition_misclass_prob = parse_num(key, v)?,
            "interior_misclass_prob" => {
                self.noise.interior_misclass_prob = if v == "none" { None } else { Some(parse_num(key, v)?) }
            }
            "transition_share" => self.noise.transition_share = parse_num(key, v)?,
            "bbox_jitter_px" => self.noise.bbox_jitter_px = parse_num(key, v)?,
            "confidence_beta" => {
                self.noise.confidence_beta = if v == "none" {
                    None
                } else {
                    let (a, b) = v
                        .split_once(',')
                        .ok_or_else(|| SynthError::Invalid(format!("{key}: expected 'a,b'")))?;
                    Some((parse_num(key, a)?, parse_num(key, b)?))
                }
            }
            "camera_jitter_px" => self.camera_jitter_px = parse_num(key, v)?,
            "camera_motion_in_stream" => self.camera_motion_in_stream = parse_bool(key, v)?,
            "head_width_px" => self.head_width_px = parse_num(key, v)?,
            "head_aspect" => self.head_aspect = parse_num(key, v)?,
            "columns" => self.columns = parse_num(key, v)?,
            "min_gap_frames" => self.min_gap_frames = parse_num(key, v)?,
            "max_gap_frames" => self.max_gap_frames = parse_num(key, v)?,
            "crowding" => self.crowding = parse_bool(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "noise" => {
                self.noise = match v {
                    "none" => NoiseModel::none(),
                    "moderate" => NoiseModel::moderate(),
                    _ => return Err(SynthError::Invalid(format!("noise: unknown preset '{v}'"))),
                }
            }
            _ => return Err(SynthError::Invalid(format!("unknown scenario key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SynthError::Invalid(format!("{name} must be in [0, 1], got {p}")))
            }
        };
        prob("miss_prob", self.noise.miss_prob)?;
        prob("transition_misclass_prob", self.noise.transition_misclass_prob)?;
        if let Some(p) = self.noise.interior_misclass_prob {
            prob("interior_misclass_prob", p)?;
        }
        prob("dropped_jaw_fraction", self.dropped_jaw_fraction)?;
        prob("never_close_fraction", self.never_close_fraction)?;
        prob("dropped_jaw_fraction + never_close_fraction", self.dropped_jaw_fraction + self.never_close_fraction)?;
        if !(self.noise.transition_share > 0.0 && self.noise.transition_share <= 1.0) {
            return Err(SynthError::Invalid("transition_share must be in (0, 1]".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(SynthError::Invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.open_fraction > 0.0 && self.open_fraction < 1.0) {
            return Err(SynthError::Invalid("open_fraction must be in (0, 1)".into()));
        }
        if !(self.vr_median > 0.0 && self.vr_dispersion >= 0.0 && self.track_length_sigma >= 0.0) {
            return Err(SynthError::Invalid("rate and length distributions need positive scale".into()));
        }
        if self.track_length_min < 2 || self.track_length_min > self.track_length_max {
            return Err(SynthError::Invalid("track length bounds must satisfy 2 <= min <= max".into()));
        }
        if self.min_gap_frames > self.max_gap_frames {
            return Err(SynthError::Invalid("min_gap_frames exceeds max_gap_frames".into()));
        }
        if self.columns == 0 || !(self.head_width_px > 0.0 && self.head_aspect > 0.0) {
            return Err(SynthError::Invalid("columns and head size must be positive".into()));
        }
        if self.noise.bbox_jitter_px < 0.0 || self.camera_jitter_px < 0.0 {
            return Err(SynthError::Invalid("jitter must be non-negative".into()));
        }
        if let Some((a, b)) = self.noise.confidence_beta {
            if !(a > 0.0 && b > 0.0) {
                return Err(SynthError::Invalid("confidence_beta parameters must be positive".into()));
            }
        }
        Ok(())
    }

    /// Cycle duration in frames for a rate in cycles per minute.
    pub fn cycle_frames(&self, vr: f64) -> f64 {
        60.0 * self.fps / vr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FishKind {
    Normal,
    DroppedJaw,
    NeverCloses,
}

/// Per-fish motion and physiology.
#[derive(Debug, Clone, PartialEq)]
pub struct FishAgent {
    pub fish_id: u64,
    pub entry_frame: u32,
    pub length: u32,
    /// +1 enters at the left edge of its cell, -1 at the right.
    pub direction: f64,
    pub start_x: f64,
    pub lane_y: f64,
    pub speed: f64,
    pub head_width: f64,
    pub head_height: f64,
    pub wobble_period: f64,
    pub wobble_phase: f64,
    pub true_vr: f64,
    pub phase_offset: f64,
    pub kind: FishKind,
}

/// Ground-truth record of one fish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FishTruth {
    pub fish_id: u64,
    pub kind: FishKind,
    /// Physiological rate the states were generated from.
    #[serde(serialize_with = "ser_f64")]
    pub true_vr: f64,
    /// Rate measured from the true state sequence with the estimation
    /// pipeline; `None` when the sequence yields no estimate.
    #[serde(serialize_with = "ser_opt_f64")]
    pub gt_vr: Option<f64>,
    pub frames: Vec<u32>,
    pub boxes: Vec<BBox>,
    pub states: Vec<MouthState>,
}

impl FishTruth {
    pub fn to_track(&self) -> TrackRecord {
        self.to_track_with_confidence(1.0)
    }

    pub fn to_track_with_confidence(&self, confidence: f64) -> TrackRecord {
        TrackRecord::new(
            self.fish_id,
            self.frames
                .iter()
                .zip(&self.boxes)
                .zip(&self.states)
                .map(|((&f, &b), &s)| TrackEntry {
                    frame_index: f,
                    bbox: b,
                    state: s,
                    confidence,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticTruth {
    pub fish: Vec<FishTruth>,
    /// Shared camera offset per frame.
    pub camera: Vec<(f64, f64)>,
    /// Label flips applied next to a state change and elsewhere.
    pub flips_at_transition: usize,
    pub flips_interior: usize,
}

impl SyntheticTruth {
    pub fn flip_transition_share(&self) -> Option<f64> {
        let total = self.flips_at_transition + self.flips_interior;
        (total > 0).then(|| self.flips_at_transition as f64 / total as f64)
    }
}

pub fn truth_to_gt_sets(truth: &SyntheticTruth) -> GroundTruthSet {
    GroundTruthSet::from_tracks(truth.fish.iter().map(FishTruth::to_track).collect())
}

/// Writes the per-frame camera offsets and steps as CSV.
pub fn write_camera_csv<W: std::io::Write>(w: &mut W, truth: &SyntheticTruth) -> std::io::Result<()> {
    writeln!(w, "frame,offset_x,offset_y,dx,dy")?;
    let mut prev = (0.0, 0.0);
    for (f, &(x, y)) in truth.camera.iter().enumerate() {
        let (dx, dy) = if f == 0 { (0.0, 0.0) } else { (x - prev.0, y - prev.1) };
        writeln!(w, "{},{},{},{},{}", f, round6(x), round6(y), round6(dx), round6(dy))?;
        prev = (x, y);
    }
    Ok(())
}

const MAX_SCALE: f64 = 1.15;
const WOBBLE_PX: f64 = 1.5;
const LANE_GAP_PX: f64 = 8.0;
/// Mean reversion of the camera offset, keeping long videos in frame.
const CAMERA_REVERSION: f64 = 0.95;
const CONFIDENCE_FLOOR: f64 = 0.05;
const NOISE_FREE_CONFIDENCE: f64 = 0.9;
const VR_RANGE: (f64, f64) = (10.0, 300.0);

struct Layout {
    lanes: usize,
    lane_pitch: f64,
    column_width: f64,
    margin_x: f64,
    margin_y: f64,
}

fn layout(sc: &PenScenario) -> Result<Layout, SynthError> {
    let max_w = sc.head_width_px * MAX_SCALE;
    let max_h = max_w * sc.head_aspect;
    let camera_span = 5.0 * sc.camera_jitter_px / (1.0 - CAMERA_REVERSION * CAMERA_REVERSION).sqrt();
    let margin = 8.0 + camera_span + 3.0 * sc.noise.bbox_jitter_px;
    let (w, h) = (sc.frame_width as f64, sc.frame_height as f64);
    let lane_pitch = max_h + 2.0 * WOBBLE_PX + LANE_GAP_PX;
    let usable_h = h - 2.0 * margin;
    let lanes = if usable_h > 0.0 { (usable_h / lane_pitch).floor() as usize } else { 0 };
    let column_width = (w - 2.0 * margin) / sc.columns as f64;
    if lanes == 0 || column_width < 1.5 * max_w {
        return Err(SynthError::Infeasible(format!(
            "{}x{} head does not fit a {}x{} frame with {} columns",
            max_w, max_h, sc.frame_width, sc.frame_height, sc.columns
        )));
    }
    Ok(Layout {
        lanes,
        lane_pitch,
        column_width,
        margin_x: margin,
        margin_y: margin,
    })
}

fn sample_length(sc: &PenScenario, rng: &mut ChaCha8Rng) -> u32 {
    if sc.track_length_sigma == 0.0 {
        return (sc.track_length_median.round() as u32).clamp(sc.track_length_min, sc.track_length_max);
    }
    let dist = LogNormal::new(sc.track_length_median.ln(), sc.track_length_sigma).expect("validated scale");
    loop {
        let l = dist.sample(rng).round();
        if l >= sc.track_length_min as f64 && l <= sc.track_length_max as f64 {
            return l as u32;
        }
    }
}

fn sample_vr(sc: &PenScenario, rng: &mut ChaCha8Rng) -> f64 {
    if sc.vr_dispersion == 0.0 {
        return sc.vr_median;
    }
    let dist = LogNormal::new(sc.vr_median.ln(), sc.vr_dispersion).expect("validated scale");
    loop {
        let v = dist.sample(rng);
        if (VR_RANGE.0..=VR_RANGE.1).contains(&v) {
            return v;
        }
    }
}

fn schedule(sc: &PenScenario, lay: &Layout, rng: &mut ChaCha8Rng) -> Vec<FishAgent> {
    let cells = lay.lanes * sc.columns;
    let mut free_at = vec![0u32; cells];
    let mut agents = Vec::new();
    loop {
        match sc.n_frames {
            Some(n) if free_at.iter().all(|&f| f >= n) => break,
            None if agents.len() >= sc.n_fish => break,
            _ => {}
        }
        let cell = (0..cells).min_by_key(|&c| (free_at[c], c)).expect("at least one cell");
        let (lane, col) = (cell / sc.columns, cell % sc.columns);
        let length = sample_length(sc, rng);
        let gap = rng.random_range(sc.min_gap_frames..=sc.max_gap_frames);
        let entry_frame = free_at[cell];
        free_at[cell] = entry_frame + length + gap;

        let scale = rng.random_range(1.0 / MAX_SCALE..=MAX_SCALE);
        let head_width = sc.head_width_px * scale;
        let head_height = head_width * sc.head_aspect;
        let direction = if (lane + col) % 2 == 0 { 1.0 } else { -1.0 };
        let travel = lay.column_width - head_width - 4.0;
        let speed = (rng.random_range(0.02..0.08) * head_width).min(travel / (length.max(2) - 1) as f64);
        let slack = travel - speed * (length.max(2) - 1) as f64;
        let inset = rng.random_range(0.0..=slack.min(0.1 * head_width).max(0.0));
        let left = lay.margin_x + col as f64 * lay.column_width + 2.0 + head_width / 2.0;
        let right = lay.margin_x + (col + 1) as f64 * lay.column_width - 2.0 - head_width / 2.0;
        let start_x = if direction > 0.0 { left + inset } else { right - inset };
        let lane_y = if sc.crowding {
            rng.random_range(lay.margin_y + head_height / 2.0..sc.frame_height as f64 - lay.margin_y - head_height / 2.0)
        } else {
            lay.margin_y + (lane as f64 + 0.5) * lay.lane_pitch
        };

        let u: f64 = rng.random();
        let kind = if u < sc.dropped_jaw_fraction {
            FishKind::DroppedJaw
        } else if u < sc.dropped_jaw_fraction + sc.never_close_fraction {
            FishKind::NeverCloses
        } else {
            FishKind::Normal
        };
        let true_vr = sample_vr(sc, rng);
        let phase_offset = rng.random_range(0.0..sc.cycle_frames(true_vr));
        agents.push(FishAgent {
            fish_id: agents.len() as u64 + 1,
            entry_frame,
            length,
            direction,
            start_x,
            lane_y,
            speed,
            head_width,
            head_height,
            wobble_period: rng.random_range(30.0..90.0),
            wobble_phase: rng.random_range(0.0..2.0 * PI),
            true_vr,
            phase_offset,
            kind,
        });
    }
    agents
}

/// True mouth states: consecutive cycles whose integer lengths average the
/// cycle duration, each split into an open then a closed run with the open
/// run jittered by up to `split_jitter_frames`.
pub fn mouth_states(sc: &PenScenario, agent: &FishAgent, rng: &mut ChaCha8Rng) -> Vec<MouthState> {
    let n = agent.length as usize;
    match agent.kind {
        FishKind::DroppedJaw => return vec![MouthState::DroppedJaw; n],
        FishKind::NeverCloses => return vec![MouthState::Open; n],
        FishKind::Normal => {}
    }
    let period = sc.cycle_frames(agent.true_vr);
    let mut states = Vec::with_capacity(n);
    // Cycle k covers [floor(k T - phase), floor((k+1) T - phase)); cycle 0 starts at or before frame 0.
    let mut k = 0.0;
    while states.len() < n {
        let start = (k * period - agent.phase_offset).floor();
        let end = ((k + 1.0) * period - agent.phase_offset).floor();
        let len = (end - start) as i64;
        let j = sc.split_jitter_frames as i64;
        let jitter = rng.random_range(-j..=j);
        let open = ((len as f64 * sc.open_fraction).round() as i64 + jitter).clamp(1, (len - 1).max(1));
        for t in start as i64..end as i64 {
            if t >= 0 && (t as usize) < n {
                states.push(if t - (start as i64) < open { MouthState::Open } else { MouthState::Closed });
            }
        }
        k += 1.0;
    }
    states
}

fn camera_offsets(sc: &PenScenario, n_frames: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    if sc.camera_jitter_px == 0.0 {
        return vec![(0.0, 0.0); n_frames];
    }
    let step = Normal::new(0.0, sc.camera_jitter_px).expect("non-negative sd");
    let mut o = (0.0, 0.0);
    (0..n_frames)
        .map(|f| {
            if f > 0 {
                o = (
                    CAMERA_REVERSION * o.0 + step.sample(rng),
                    CAMERA_REVERSION * o.1 + step.sample(rng),
                );
            }
            o
        })
        .collect()
}

fn clamp_box(x0: f64, y0: f64, x1: f64, y1: f64, w: f64, h: f64) -> BBox {
    let x0 = x0.clamp(0.0, w - 1.0);
    let y0 = y0.clamp(0.0, h - 1.0);
    let x1 = x1.clamp(x0 + 1.0, w);
    let y1 = y1.clamp(y0 + 1.0, h);
    BBox::new(round6(x0), round6(y0), round6(x1), round6(y1)).expect("clamped box is valid")
}

fn flip(s: MouthState) -> MouthState {
    match s {
        MouthState::Open => MouthState::Closed,
        MouthState::Closed => MouthState::Open,
        MouthState::DroppedJaw => MouthState::DroppedJaw,
    }
}

/// Full generation: truth, stream metadata and one record per frame.
pub fn generate(sc: &PenScenario) -> Result<(SyntheticTruth, VideoMeta, Vec<FrameRecord>), SynthError> {
    sc.validate()?;
    let lay = layout(sc)?;
    let mut layout_rng = seed::rng(seed::derive(sc.seed, "synth-layout"));
    let mut state_rng = seed::rng(seed::derive(sc.seed, "synth-states"));
    let mut camera_rng = seed::rng(seed::derive(sc.seed, "synth-camera"));
    let mut miss_rng = seed::rng(seed::derive(sc.seed, "synth-miss"));
    let mut flip_rng = seed::rng(seed::derive(sc.seed, "synth-flip"));
    let mut box_rng = seed::rng(seed::derive(sc.seed, "synth-box"));

    let agents = schedule(sc, &lay, &mut layout_rng);
    let n_frames = match sc.n_frames {
        Some(n) => n,
        None => agents.iter().map(|a| a.entry_frame + a.length).max().unwrap_or(0),
    };
    let camera = camera_offsets(sc, n_frames as usize, &mut camera_rng);
    let (fw, fh) = (sc.frame_width as f64, sc.frame_height as f64);

    let mut fish = Vec::with_capacity(agents.len());
    for a in &agents {
        let states = mouth_states(sc, a, &mut state_rng);
        let mut truth = FishTruth {
            fish_id: a.fish_id,
            kind: a.kind,
            true_vr: a.true_vr,
            gt_vr: None,
            frames: Vec::new(),
            boxes: Vec::new(),
            states: Vec::new(),
        };
        for (t, &s) in states.iter().enumerate() {
            let frame = a.entry_frame + t as u32;
            if frame >= n_frames {
                break;
            }
            let (ox, oy) = camera[frame as usize];
            let cx = a.start_x + a.direction * a.speed * t as f64 + ox;
            let cy = a.lane_y + WOBBLE_PX * (2.0 * PI * t as f64 / a.wobble_period + a.wobble_phase).sin() + oy;
            let (hw, hh) = (a.head_width / 2.0, a.head_height / 2.0);
            truth.frames.push(frame);
            truth.boxes.push(clamp_box(cx - hw, cy - hh, cx + hw, cy + hh, fw, fh));
            truth.states.push(s);
        }
        if truth.frames.is_empty() {
            continue;
        }
        let mut scratch = seed::rng(0);
        truth.gt_vr = estimate_track(&truth.to_track(), sc.fps, &mut scratch).rate();
        fish.push(truth);
    }

    // Detection survival, then per-frame transition tags.
    let noise = &sc.noise;
    let kept: Vec<Vec<bool>> = fish
        .iter()
        .map(|f| f.frames.iter().map(|_| !miss_rng.random_bool(noise.miss_prob)).collect())
        .collect();
    let at_transition = |f: &FishTruth, i: usize| {
        let s = f.states[i];
        (i > 0 && f.states[i - 1] != s) || (i + 1 < f.states.len() && f.states[i + 1] != s)
    };
    // Transition errors move a state boundary by one frame: a frame next to
    // a change is flipped unless its partner across that change already was.
    let p_t = noise.transition_misclass_prob;
    let mut flipped: Vec<Vec<bool>> = fish.iter().map(|f| vec![false; f.frames.len()]).collect();
    let (mut flips_t, mut n_i) = (0usize, 0usize);
    for ((f, k), fl) in fish.iter().zip(&kept).zip(&mut flipped) {
        if f.kind == FishKind::DroppedJaw {
            continue;
        }
        for i in 0..f.frames.len() {
            if !k[i] {
                continue;
            }
            if !at_transition(f, i) {
                n_i += 1;
                continue;
            }
            let partner_flipped = i > 0 && f.states[i - 1] != f.states[i] && fl[i - 1];
            if flip_rng.random_bool(p_t) && !partner_flipped {
                fl[i] = true;
                flips_t += 1;
            }
        }
    }
    let p_i = noise.interior_misclass_prob.unwrap_or_else(|| {
        if n_i == 0 {
            0.0
        } else {
            (flips_t as f64 * (1.0 - noise.transition_share) / (noise.transition_share * n_i as f64)).min(1.0)
        }
    });
    let mut flips_i = 0usize;
    for ((f, k), fl) in fish.iter().zip(&kept).zip(&mut flipped) {
        if f.kind == FishKind::DroppedJaw {
            continue;
        }
        for i in 0..f.frames.len() {
            if k[i] && !at_transition(f, i) && flip_rng.random_bool(p_i) {
                fl[i] = true;
                flips_i += 1;
            }
        }
    }
    let conf_dist = noise.confidence_beta.map(|(a, b)| Beta::new(a, b).expect("validated beta"));
    let jitter = (noise.bbox_jitter_px > 0.0).then(|| Normal::new(0.0, noise.bbox_jitter_px).expect("sd >= 0"));

    let mut per_frame: Vec<Vec<Detection>> = vec![Vec::new(); n_frames as usize];
    for ((f, k), fl) in fish.iter().zip(&kept).zip(&flipped) {
        for i in 0..f.frames.len() {
            if !k[i] {
                continue;
            }
            let state = if fl[i] { flip(f.states[i]) } else { f.states[i] };
            let b = f.boxes[i];
            let bbox = match &jitter {
                Some(j) => clamp_box(
                    b.x_min() + j.sample(&mut box_rng),
                    b.y_min() + j.sample(&mut box_rng),
                    b.x_max() + j.sample(&mut box_rng),
                    b.y_max() + j.sample(&mut box_rng),
                    fw,
                    fh,
                ),
                None => b,
            };
            let confidence = match &conf_dist {
                Some(d) => round6(d.sample(&mut box_rng).max(CONFIDENCE_FLOOR)),
                None => NOISE_FREE_CONFIDENCE,
            };
            per_frame[f.frames[i] as usize].push(Detection::new(bbox, state, confidence).expect("confidence in [0, 1]"));
        }
    }

    let frames = per_frame
        .into_iter()
        .enumerate()
        .map(|(t, dets)| {
            let mut rec = FrameRecord::new(t as u32, dets);
            if t > 0 && sc.camera_jitter_px > 0.0 && sc.camera_motion_in_stream {
                let (dx, dy) = (camera[t].0 - camera[t - 1].0, camera[t].1 - camera[t - 1].1);
                rec.camera_motion = Some(Affine::translation(round6(dx), round6(dy)));
            }
            rec
        })
        .collect();
    let meta = VideoMeta {
        fps: sc.fps,
        width: sc.frame_width,
        height: sc.frame_height,
        source_id: sc.source_id.clone(),
    };
    Ok((
        SyntheticTruth {
            fish,
            camera,
            flips_at_transition: flips_t,
            flips_interior: flips_i,
        },
        meta,
        frames,
    ))
}

/// Per-fish outcomes of the pipeline on the true states.
pub fn ground_truth_outcomes(truth: &SyntheticTruth, fps: f64) -> Vec<(u64, TrackOutcome)> {
    truth
        .fish
        .iter()
        .map(|f| {
            let mut scratch = seed::rng(0);
            (f.fish_id, estimate_track(&f.to_track(), fps, &mut scratch))
        })
        .collect()
}

/// Inter-quartile range of a log-normal with the given log-scale spread, as
/// a fraction of its median.
pub fn relative_iqr(dispersion: f64) -> f64 {
    // upper quartile of the standard normal
    let q = 0.674_489_750_196_081_7;
    (q * dispersion).exp() - (-q * dispersion).exp()
}
