use serde::{Deserialize, Serialize};

use super::FeatureError;

pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Head orientation sample; quaternion stored as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadSample {
    pub t: f64,
    pub q: [f64; 4],
}

fn dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rotation angle between two orientations; `q` and `-q` are the same rotation.
pub fn geodesic(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    2.0 * dot(a, b).abs().min(1.0).acos()
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Unit quaternion for a rotation of `angle` radians about `axis`.
pub fn axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (s, c) = (angle / 2.0).sin_cos();
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

/// Total geodesic travel (rad) and mean angular speed (rad/s).
pub fn head_motion(samples: &[HeadSample]) -> Result<(f64, f64), FeatureError> {
    if samples.len() < 2 {
        return Err(FeatureError::TooFewSamples {
            signal: "head",
            need: 2,
            got: samples.len(),
        });
    }
    for (index, s) in samples.iter().enumerate() {
        let norm = dot(&s.q, &s.q).sqrt();
        let off = (norm - 1.0).abs();
        if off.is_nan() || off > UNIT_TOLERANCE {
            return Err(FeatureError::NonUnitQuaternion { index, norm });
        }
    }
    let travel: f64 = samples.windows(2).map(|w| geodesic(&w[0].q, &w[1].q)).sum();
    let span = samples[samples.len() - 1].t - samples[0].t;
    let speed = if span > 0.0 { travel / span } else { 0.0 };
    Ok((travel, speed))
}
