//! Rigid transforms and the split twist parameterization used by the optimizer.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Below this rotation angle the Rodrigues series expansions are used.
const SMALL_ANGLE: f64 = 1e-8;

/// A rigid transform in SE(3): `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Six-vector pose parameterization: axis-angle rotation plus a translation
/// that is copied through unchanged (no SE(3) V-matrix coupling).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, t: Vector3<f64>) -> Self {
        Self::new(so3_exp(&Vector3::new(0.0, 0.0, yaw)), t)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self::new(*q.to_rotation_matrix().matrix(), t)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    /// Projects the rotation back onto SO(3) via SVD.
    pub fn renormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        Pose::new(r, self.translation)
    }

    /// Rotation angle of this pose in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Linear translation, spherical-linear rotation between `self` (s = 0)
    /// and `other` (s = 1).
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let rel = self.rotation.transpose() * other.rotation;
        let w = so3_log(&rel);
        Pose {
            rotation: self.rotation * so3_exp(&(w * s)),
            translation: self.translation + (other.translation - self.translation) * s,
        }
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        err <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Max absolute entry difference over rotation and translation.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.v.x,
            self.v.y,
            self.v.z,
        ]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            omega: Vector3::new(s[0], s[1], s[2]),
            v: Vector3::new(s[3], s[4], s[5]),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.omega.norm_squared() + self.v.norm_squared()).sqrt()
    }
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues formula.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Matrix logarithm of a rotation.
///
/// At an angle of exactly pi the axis is taken from the column of `R + I`
/// with the largest norm, with its sign flipped so the first nonzero
/// component is positive.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < SMALL_ANGLE {
        return vee * (0.5 + theta * theta / 12.0);
    }
    let sin = theta.sin();
    if std::f64::consts::PI - theta > 1e-6 {
        return vee * (theta / (2.0 * sin));
    }
    // R + I = 2 n nᵀ at the antipode, so any nonzero column is the axis.
    let b = r + Matrix3::identity();
    let mut best = 0;
    for c in 1..3 {
        if b.column(c).norm_squared() > b.column(best).norm_squared() {
            best = c;
        }
    }
    let mut axis: Vector3<f64> = b.column(best).normalize();
    if vee.norm() > 1e-12 {
        // Off the exact antipode the skew part still carries the sign.
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
    } else {
        let first = axis.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(1.0);
        if first < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Partial derivatives of `so3_exp(w)` with respect to each component of `w`.
pub fn so3_exp_jacobians(w: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = w.norm_squared();
    let mut out = [Matrix3::zeros(); 3];
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        for (k, m) in out.iter_mut().enumerate() {
            *m = skew(&Vector3::ith(k, 1.0));
        }
        return out;
    }
    // dR/dw_k = (w_k [w]x + [w x (I - R) e_k]x) R / |w|²
    let r = so3_exp(w);
    let i_minus_r = Matrix3::identity() - r;
    let wx = skew(w);
    for (k, m) in out.iter_mut().enumerate() {
        let ek = Vector3::ith(k, 1.0);
        let c = w.cross(&(i_minus_r * ek));
        *m = (wx * w[k] + skew(&c)) * r / theta2;
    }
    out
}

pub fn se3_exp(t: &Twist) -> Pose {
    Pose::new(so3_exp(&t.omega), t.v)
}

pub fn se3_log(p: &Pose) -> Twist {
    Twist::new(so3_log(&p.rotation), p.translation)
}
