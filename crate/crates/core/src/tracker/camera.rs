//! Global camera-motion handling for tracks.

use crate::detection::{Affine, Detection};

use super::Track;

/// Below this |det| the 2x2 part is treated as singular.
const MIN_DETERMINANT: f64 = 1e-9;
const MIN_MUTUAL_PAIRS: usize = 3;

/// Warps every track's motion state by `affine`. Singular transforms are
/// rejected with a warning and leave tracks untouched.
pub fn apply_camera_motion(tracks: &mut [Track], affine: &Affine) {
    if affine.is_identity() {
        return;
    }
    if affine.determinant().abs() < MIN_DETERMINANT || !affine.0.iter().all(|v| v.is_finite()) {
        log::warn!("singular camera transform {:?} ignored", affine.0);
        return;
    }
    for t in tracks {
        t.motion = t.motion.warp(affine);
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn nearest(from: (f64, f64), to: &[(f64, f64)]) -> Option<usize> {
    to.iter()
        .enumerate()
        .map(|(i, p)| (i, (p.0 - from.0).powi(2) + (p.1 - from.1).powi(2)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Translation-only camera motion from box centers: component-wise median
/// displacement over mutually-nearest pairs of detections with confidence at
/// least `min_confidence`. Identity when fewer than three pairs exist.
pub fn estimate_camera_motion(prev: &[Detection], cur: &[Detection], min_confidence: f64) -> Affine {
    let centers = |d: &[Detection]| -> Vec<(f64, f64)> {
        d.iter()
            .filter(|d| d.confidence() >= min_confidence)
            .map(|d| d.bbox.center())
            .collect()
    };
    let a = centers(prev);
    let b = centers(cur);
    if a.len() < MIN_MUTUAL_PAIRS || b.len() < MIN_MUTUAL_PAIRS {
        return Affine::IDENTITY;
    }
    let b_to_a: Vec<Option<usize>> = b.iter().map(|&p| nearest(p, &a)).collect();
    let mut dx = Vec::new();
    let mut dy = Vec::new();
    for (i, &p) in a.iter().enumerate() {
        if let Some(j) = nearest(p, &b) {
            if b_to_a[j] == Some(i) {
                dx.push(b[j].0 - p.0);
                dy.push(b[j].1 - p.1);
            }
        }
    }
    if dx.len() < MIN_MUTUAL_PAIRS {
        return Affine::IDENTITY;
    }
    Affine::translation(median(&mut dx), median(&mut dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{BBox, MouthState};
    use rand::{Rng, SeedableRng};

    fn grid(shift: (f64, f64)) -> Vec<Detection> {
        let mut v = Vec::new();
        for i in 0..5 {
            for j in 0..4 {
                let b = BBox::from_center(100.0 + 200.0 * i as f64 + shift.0, 100.0 + 200.0 * j as f64 + shift.1, 60.0, 50.0).unwrap();
                v.push(Detection::new(b, MouthState::Open, 0.9).unwrap());
            }
        }
        v
    }

    #[test]
    fn identical_frames_give_identity() {
        let g = grid((0.0, 0.0));
        let a = estimate_camera_motion(&g, &g, 0.5);
        assert_eq!(a.0[2], 0.0);
        assert_eq!(a.0[5], 0.0);
    }

    #[test]
    fn exact_shift_is_recovered() {
        let a = estimate_camera_motion(&grid((0.0, 0.0)), &grid((7.0, -3.0)), 0.5);
        assert_eq!(a, Affine::translation(7.0, -3.0));
    }

    #[test]
    fn too_few_pairs_is_identity() {
        let g = grid((0.0, 0.0));
        assert!(estimate_camera_motion(&g[..2], &g[..2], 0.5).is_identity());
        // low-confidence boxes do not count
        assert!(estimate_camera_motion(&g, &g, 0.95).is_identity());
    }

    #[test]
    fn median_is_robust_to_outliers() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let prev = grid((0.0, 0.0));
            let mut cur = grid((7.0, -3.0));
            // replace 20% of the current boxes with random outliers
            for k in 0..4 {
                let idx = (k * 5 + rng.random_range(0..5)) % cur.len();
                let b = BBox::from_center(rng.random_range(50.0..1100.0), rng.random_range(50.0..800.0), 60.0, 50.0).unwrap();
                cur[idx] = Detection::new(b, MouthState::Closed, 0.9).unwrap();
            }
            let a = estimate_camera_motion(&prev, &cur, 0.5);
            assert!((a.0[2] - 7.0).abs() <= 1.0, "{:?}", a);
            assert!((a.0[5] + 3.0).abs() <= 1.0, "{:?}", a);
        }
    }
}
