//! Shared inputs for the benchmarks.

use ventrate_core::synthgen::{generate, NoiseModel, PenScenario};
use ventrate_core::FrameRecord;

/// Dense noisy stream: four columns of small heads, about 60 detections per
/// frame.
pub fn dense_stream(n_frames: u32, seed: u64) -> (f64, Vec<FrameRecord>) {
    let scenario = PenScenario {
        n_frames: Some(n_frames),
        head_width_px: 40.0,
        columns: 4,
        min_gap_frames: 2,
        max_gap_frames: 5,
        noise: NoiseModel::moderate(),
        camera_jitter_px: 1.0,
        seed,
        ..PenScenario::default()
    };
    let (_, _, frames) = generate(&scenario).expect("bench scenario is valid");
    (scenario.fps, frames)
}
