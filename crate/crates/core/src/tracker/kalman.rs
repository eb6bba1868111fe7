//! Constant-velocity Kalman filter in (cx, cy, w, h) measurement space.
//!
//! Process and measurement noise are proportional to the box height.

use nalgebra::{SMatrix, SVector};

use crate::detection::{Affine, BBox};

pub type Mean = SVector<f64, 8>;
pub type Covariance = SMatrix<f64, 8, 8>;
type Measurement = SVector<f64, 4>;

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

/// State mean `(cx, cy, w, h, vcx, vcy, vw, vh)` and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    pub mean: Mean,
    pub covariance: Covariance,
}

fn measure(b: &BBox) -> Measurement {
    let (cx, cy) = b.center();
    Measurement::new(cx, cy, b.width(), b.height())
}

impl MotionState {
    pub fn initiate(b: &BBox) -> Self {
        let z = measure(b);
        let mut mean = Mean::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let h = z[3];
        let p = 2.0 * STD_WEIGHT_POSITION * h;
        let v = 10.0 * STD_WEIGHT_VELOCITY * h;
        let std = Mean::from([p, p, p, p, v, v, v, v]);
        Self {
            mean,
            covariance: Covariance::from_diagonal(&std.component_mul(&std)),
        }
    }

    /// One-frame time update.
    pub fn predict(&self) -> Self {
        let h = self.mean[3].max(1e-3);
        let p = STD_WEIGHT_POSITION * h;
        let v = STD_WEIGHT_VELOCITY * h;
        let q = Mean::from([p * p, p * p, p * p, p * p, v * v, v * v, v * v, v * v]);
        let mut mean = self.mean;
        for i in 0..4 {
            mean[i] += mean[i + 4];
        }
        // P' = F P F^T with F = [[I, I], [0, I]], expanded block-wise.
        let c = &self.covariance;
        let pp = c.fixed_view::<4, 4>(0, 0);
        let pv = c.fixed_view::<4, 4>(0, 4);
        let vp = c.fixed_view::<4, 4>(4, 0);
        let vv = c.fixed_view::<4, 4>(4, 4);
        let mut cov = Covariance::zeros();
        cov.fixed_view_mut::<4, 4>(0, 0)
            .copy_from(&(pp + pv + vp + vv));
        cov.fixed_view_mut::<4, 4>(0, 4).copy_from(&(pv + vv));
        cov.fixed_view_mut::<4, 4>(4, 0).copy_from(&(vp + vv));
        cov.fixed_view_mut::<4, 4>(4, 4).copy_from(&vv);
        for i in 0..8 {
            cov[(i, i)] += q[i];
        }
        Self {
            mean,
            covariance: cov,
        }
    }

    /// Measurement update with a detected box.
    pub fn update(&self, b: &BBox) -> Self {
        let z = measure(b);
        let h = self.mean[3].max(1e-3);
        let r = (STD_WEIGHT_POSITION * h).powi(2);
        let c = &self.covariance;
        // H = [I 0]: S = P_pp + R, K = P[:, :4] S^-1
        let mut s: SMatrix<f64, 4, 4> = c.fixed_view::<4, 4>(0, 0).into_owned();
        for i in 0..4 {
            s[(i, i)] += r;
        }
        let Some(s_inv) = s.try_inverse() else {
            return self.clone();
        };
        let pht: SMatrix<f64, 8, 4> = c.fixed_view::<8, 4>(0, 0).into_owned();
        let gain = pht * s_inv;
        let innovation = z - self.mean.fixed_rows::<4>(0);
        let mean = self.mean + gain * innovation;
        let mut covariance = c - gain * s * gain.transpose();
        covariance = (covariance + covariance.transpose()) * 0.5;
        Self { mean, covariance }
    }

    /// Current box estimate; width and height are floored at one pixel.
    pub fn to_bbox(&self) -> Option<BBox> {
        let (cx, cy) = (self.mean[0], self.mean[1]);
        let (w, h) = (self.mean[2].max(1.0), self.mean[3].max(1.0));
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return None;
        }
        BBox::from_center(cx.max(0.0), cy.max(0.0), w, h).ok()
    }

    /// Maps the state through a frame-to-frame camera transform.
    pub fn warp(&self, t: &Affine) -> Self {
        if t.is_identity() {
            return self.clone();
        }
        let m = &self.mean;
        let (hw, hh) = (m[2] / 2.0, m[3] / 2.0);
        let (x1, y1) = t.apply(m[0] - hw, m[1] - hh);
        let (x2, y2) = t.apply(m[0] + hw, m[1] + hh);
        let (vx, vy) = t.apply_linear(m[4], m[5]);
        let (vw, vh) = t.apply_linear(m[6], m[7]);
        let mean = Mean::from([
            (x1 + x2) / 2.0,
            (y1 + y2) / 2.0,
            (x2 - x1).abs(),
            (y2 - y1).abs(),
            vx,
            vy,
            vw,
            vh,
        ]);
        let [a, b, _, c, d, _] = t.0;
        let mut rot = Covariance::zeros();
        for k in 0..4 {
            let o = 2 * k;
            rot[(o, o)] = a;
            rot[(o, o + 1)] = b;
            rot[(o + 1, o)] = c;
            rot[(o + 1, o + 1)] = d;
        }
        Self {
            mean,
            covariance: rot * self.covariance * rot.transpose(),
        }
    }
}
