//! Quaternion algebra, rigid transforms, positional encoding, and
//! point-to-segment distance shared by kinematics, deformation, and
//! rendering.
//!
//! Plain `f64` versions live here; vectorized tape versions of the
//! differentiable paths are in [`crate::deform::tape_geometry`].

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("cannot normalize a zero quaternion")]
    ZeroQuaternion,
}

/// Scalar-first quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let a = axis.normalize() * (angle * 0.5).sin();
        Quat {
            w: (angle * 0.5).cos(),
            x: a.x,
            y: a.y,
            z: a.z,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalize(&self) -> Result<Quat, GeometryError> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(GeometryError::ZeroQuaternion);
        }
        Ok(Quat {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        })
    }

    /// Sign convention for serialization: `w >= 0`. Never applied inside
    /// gradient paths (both signs map to the same rotation).
    pub fn canonicalized(&self) -> Quat {
        if self.w < 0.0 {
            Quat {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            *self
        }
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Rotation angle between the two encoded rotations, in radians.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        let a = self.normalize().unwrap_or(Quat::IDENTITY);
        let b = other.normalize().unwrap_or(Quat::IDENTITY);
        2.0 * a.dot(&b).abs().min(1.0).acos()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

/// Proper rotation matrix from any nonzero quaternion (normalized internally).
pub fn quat_to_matrix(q: &Quat) -> Result<Matrix3<f64>, GeometryError> {
    let q = q.normalize()?;
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Ok(Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    ))
}

/// Rigid map `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Rotation about a pivot point: `x -> R (x - pivot) + pivot`.
    pub fn about_pivot(rotation: Matrix3<f64>, pivot: &Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation: pivot - rotation * pivot,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// NeRF-style frequency encoding config.
///
/// Output layout per input component `x`:
/// `[x (if include_input), sin(2^0 π x), cos(2^0 π x), ..., sin(2^{L-1} π x), cos(2^{L-1} π x)]`,
/// components concatenated in input order.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PositionalEncodingConfig {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl PositionalEncodingConfig {
    pub fn new(num_frequencies: usize, include_input: bool) -> Self {
        PositionalEncodingConfig {
            num_frequencies,
            include_input,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (usize::from(self.include_input) + 2 * self.num_frequencies)
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim(x.len()));
        for &xi in x {
            if self.include_input {
                out.push(xi);
            }
            for l in 0..self.num_frequencies {
                let arg = (1u64 << l) as f64 * std::f64::consts::PI * xi;
                out.push(arg.sin());
                out.push(arg.cos());
            }
        }
        out
    }
}

/// Euclidean distance from `p` to the closed segment `[a, b]`, with the
/// clamped projection parameter `u ∈ [0, 1]`. A degenerate segment
/// (`a == b`) falls back to point distance.
pub fn point_to_segment_distance(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return ((p - a).norm(), 0.0);
    }
    let u = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    let foot = a + ab * u;
    ((p - foot).norm(), u)
}

/// Vectorized tape versions of the differentiable geometry paths.
pub mod tape {
    use crate::autodiff::{concat, Tensor};

    use super::{GeometryError, PositionalEncodingConfig};

    /// Normalize rows of an `[n, k]` tensor to unit Euclidean norm.
    /// Differentiable through the normalization; a zero row is an error.
    pub fn normalize_rows(x: &Tensor) -> Result<Tensor, GeometryError> {
        let sq = x.square().sum_axis(1, true);
        if sq.value_ref().iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(GeometryError::ZeroQuaternion);
        }
        let norm = sq.sqrt();
        Ok(x / &norm)
    }

    /// Rotation matrices `[n, 3, 3]` from unit quaternions `[n, 4]`
    /// (scalar-first). Call [`normalize_rows`] first for raw quaternions.
    pub fn quats_to_matrices(q: &Tensor) -> Tensor {
        let w = q.slice_axis(1, 0, 1);
        let x = q.slice_axis(1, 1, 2);
        let y = q.slice_axis(1, 2, 3);
        let z = q.slice_axis(1, 3, 4);
        let ww = &w * &w;
        let xx = &x * &x;
        let yy = &y * &y;
        let zz = &z * &z;
        let wx = &w * &x;
        let wy = &w * &y;
        let wz = &w * &z;
        let xy = &x * &y;
        let xz = &x * &z;
        let yz = &y * &z;
        let r00 = &(&ww + &xx) - &(&yy + &zz);
        let r01 = (&xy - &wz).scale(2.0);
        let r02 = (&xz + &wy).scale(2.0);
        let r10 = (&xy + &wz).scale(2.0);
        let r11 = &(&ww + &yy) - &(&xx + &zz);
        let r12 = (&yz - &wx).scale(2.0);
        let r20 = (&xz - &wy).scale(2.0);
        let r21 = (&yz + &wx).scale(2.0);
        let r22 = &(&ww + &zz) - &(&xx + &yy);
        let n = q.shape()[0];
        concat(&[r00, r01, r02, r10, r11, r12, r20, r21, r22], 1).reshape(&[n, 3, 3])
    }

    /// Frequency-encode each column of an `[n, k]` tensor. Layout matches
    /// [`PositionalEncodingConfig::encode`]: per component, optional raw
    /// value then `sin/cos` pairs per frequency.
    pub fn positional_encode(x: &Tensor, cfg: &PositionalEncodingConfig) -> Tensor {
        let k = x.shape()[1];
        let mut pieces = Vec::with_capacity(cfg.output_dim(k));
        for j in 0..k {
            let col = x.slice_axis(1, j, j + 1);
            if cfg.include_input {
                pieces.push(col.clone());
            }
            for l in 0..cfg.num_frequencies {
                let scaled = col.scale((1u64 << l) as f64 * std::f64::consts::PI);
                pieces.push(scaled.sin());
                pieces.push(scaled.cos());
            }
        }
        concat(&pieces, 1)
    }
}
