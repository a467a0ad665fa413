//! Poses, quaternion helpers and the localization error metrics.
//!
//! Quaternions are stored `(w, x, y, z)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Norms below this are treated as degenerate.
pub const MIN_QUAT_NORM: f64 = 1e-12;

/// Tolerance on `| ||q|| - 1 |` accepted as unit length by the metrics.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Camera pose: position in meters and unit quaternion orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Pose {
    /// Builds a pose, normalizing the quaternion.
    pub fn new(position: [f64; 3], orientation: [f64; 4]) -> Result<Self> {
        Ok(Self {
            position,
            orientation: quat_normalize(orientation)?,
        })
    }

    pub fn identity() -> Self {
        Self {
            position: [0.0; 3],
            orientation: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

pub fn quat_norm(q: [f64; 4]) -> f64 {
    q.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `q / ||q||`.
pub fn quat_normalize(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = quat_norm(q);
    if !(n > MIN_QUAT_NORM) || !n.is_finite() {
        return Err(Error::DegenerateQuaternion { norm: n });
    }
    Ok(q.map(|x| x / n))
}

/// Normalizes only when `q` is not already unit length to within 1e-12.
///
/// Re-dividing an already-normalized quaternion can flip the last bit, so
/// loaders use this to keep save/load round trips exact.
pub fn quat_normalize_if_needed(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = quat_norm(q);
    if (n - 1.0).abs() <= 1e-12 {
        Ok(q)
    } else {
        quat_normalize(q)
    }
}

/// Hamilton product `a * b`.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Rotation of `angle` radians about a unit `axis`.
pub fn quat_from_axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let (s, c) = (angle / 2.0).sin_cos();
    [c, axis[0] * s, axis[1] * s, axis[2] * s]
}

/// Rotates `v` by the unit quaternion `q`.
pub fn quat_rotate(q: [f64; 4], v: [f64; 3]) -> [f64; 3] {
    let p = [0.0, v[0], v[1], v[2]];
    let conj = [q[0], -q[1], -q[2], -q[3]];
    let r = quat_mul(quat_mul(q, p), conj);
    [r[1], r[2], r[3]]
}

/// Euclidean distance between positions, in meters.
pub fn position_error(est: &Pose, truth: &Pose) -> f64 {
    est.position
        .iter()
        .zip(&truth.position)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Geodesic rotation angle between two unit quaternions, in degrees.
///
/// Equal to `2 acos(min(1, |<q_est, q_truth>|))`, so `q` and `-q` compare
/// equal and the result lies in `[0, 180]`. It is evaluated as
/// `4 atan2(|a - b|, |a + b|)` with `b` sign-aligned to `a`, which is exact at
/// zero where the `acos` form loses half the digits.
pub fn orientation_error(est: &Pose, truth: &Pose) -> Result<f64> {
    for (name, q) in [("estimate", est.orientation), ("truth", truth.orientation)] {
        let n = quat_norm(q);
        if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::Contract(format!(
                "{name} quaternion is not unit length (norm {n})"
            )));
        }
    }
    let a = est.orientation;
    let dot: f64 = a.iter().zip(&truth.orientation).map(|(x, y)| x * y).sum();
    let b = if dot < 0.0 {
        truth.orientation.map(|x| -x)
    } else {
        truth.orientation
    };
    let diff = quat_norm(std::array::from_fn(|i| a[i] - b[i]));
    let sum = quat_norm(std::array::from_fn(|i| a[i] + b[i]));
    Ok((4.0 * diff.atan2(sum)).to_degrees())
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of an empty list"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}
