//! Quaternion algebra and the intrinsic X-Y-Z Euler convention.
//!
//! Quaternions are scalar-first `(w, x, y, z)`. Euler triples decompose a
//! rotation as `R = Rx(x) · Ry(y) · Rz(z)`; the same convention is used by the
//! angle loss and by BVH export (`Xrotation Yrotation Zrotation`).

use std::f64::consts::PI;

use crate::diff::Real;
use crate::error::{Error, Result};

/// Inputs with a smaller norm are treated as degenerate by
/// [`normalize_quaternion`].
pub const DEGENERATE_NORM: f64 = 1e-8;

/// Cosine of the pitch below which the Euler decomposition is considered
/// gimbal-locked.
pub const GIMBAL_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (normalized here).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle * 0.5).sin_cos();
        Self::new(c, axis[0] / n * s, axis[1] / n * s, axis[2] / n * s)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, o: Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn mul(self, o: Self) -> Self {
        Self::from_array(quat_mul(self.to_array(), o.to_array()))
    }

    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        rotate(self.to_array(), v)
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Row-major rotation matrix of a unit quaternion.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        rotation_matrix(self.to_array())
    }

    /// Angle of the relative rotation between two unit quaternions, in
    /// `[0, π]`; sign-agnostic.
    pub fn geodesic_distance(self, o: Self) -> f64 {
        // atan2 of the relative rotation stays accurate near zero, where
        // acos of the dot product loses half the digits.
        let r = self.conjugate().mul(o);
        let v = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
        2.0 * v.atan2(r.w.abs())
    }
}

/// Result of [`normalize_quaternion`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalized {
    pub q: Quaternion,
    /// The input norm was below [`DEGENERATE_NORM`] and identity was returned.
    pub degenerate: bool,
}

pub fn normalize_quaternion(raw: [f64; 4]) -> Result<Normalized> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quaternion"));
    }
    let (q, degenerate) = normalize(raw);
    Ok(Normalized {
        q: Quaternion::from_array(q),
        degenerate,
    })
}

/// Flip `pred` onto the hemisphere of `reference`. The represented rotation
/// is unchanged.
pub fn hemisphere_align(pred: Quaternion, reference: Quaternion) -> Quaternion {
    if pred.dot(reference) >= 0.0 {
        pred
    } else {
        pred.neg()
    }
}

/// Intrinsic X-Y-Z Euler angles in radians, each in `(−π, π]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerTriple {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EulerTriple {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

pub fn quat_to_euler(q: Quaternion) -> EulerTriple {
    let [x, y, z] = euler(q.to_array());
    EulerTriple::new(x, y, z)
}

pub fn euler_to_quat(e: EulerTriple) -> Result<Quaternion> {
    if !e.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("euler angles"));
    }
    let qx = Quaternion::from_axis_angle([1.0, 0.0, 0.0], e.x);
    let qy = Quaternion::from_axis_angle([0.0, 1.0, 0.0], e.y);
    let qz = Quaternion::from_axis_angle([0.0, 0.0, 1.0], e.z);
    Ok(qx.mul(qy).mul(qz))
}

/// Map an angle onto `(−π, π]`.
pub fn canonical_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

// Generic kernels, shared by the f64 API and the differentiable loss path.

#[inline]
pub(crate) fn quat_mul<T: Real>(a: [T; 4], b: [T; 4]) -> [T; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Rotate the constant vector `v` by the unit quaternion `q`.
#[inline]
pub(crate) fn rotate<T: Real>(q: [T; 4], v: [f64; 3]) -> [T; 3] {
    let [w, x, y, z] = q;
    // t = 2 u × v
    let tx = (y * v[2] - z * v[1]) * 2.0;
    let ty = (z * v[0] - x * v[2]) * 2.0;
    let tz = (x * v[1] - y * v[0]) * 2.0;
    // v + w t + u × t
    [
        w * tx + (y * tz - z * ty) + v[0],
        w * ty + (z * tx - x * tz) + v[1],
        w * tz + (x * ty - y * tx) + v[2],
    ]
}

pub(crate) fn rotation_matrix<T: Real>(q: [T; 4]) -> [[T; 3]; 3] {
    let [w, x, y, z] = q;
    let two = |v: T| v * 2.0;
    [
        [
            -two(y * y + z * z) + 1.0,
            two(x * y - w * z),
            two(x * z + w * y),
        ],
        [
            two(x * y + w * z),
            -two(x * x + z * z) + 1.0,
            two(y * z - w * x),
        ],
        [
            two(x * z - w * y),
            two(y * z + w * x),
            -two(x * x + y * y) + 1.0,
        ],
    ]
}

/// Normalize, falling back to identity below [`DEGENERATE_NORM`].
pub(crate) fn normalize<T: Real>(q: [T; 4]) -> ([T; 4], bool) {
    let n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    let n = n2.sqrt();
    if n.value() < DEGENERATE_NORM {
        let one = q[0].lift(1.0);
        let zero = q[0].lift(0.0);
        return ([one, zero, zero, zero], true);
    }
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], false)
}

pub(crate) fn euler<T: Real>(q: [T; 4]) -> [T; 3] {
    let m = rotation_matrix(q);
    let cos_pitch = (m[1][2] * m[1][2] + m[2][2] * m[2][2]).sqrt();
    let pitch = m[0][2].atan2(cos_pitch);
    let (roll, yaw) = if cos_pitch.value() < GIMBAL_EPS {
        // Gimbal lock: fold the whole residual rotation into the first axis.
        (m[2][1].atan2(m[1][1]), q[0].lift(0.0))
    } else {
        ((-m[1][2]).atan2(m[2][2]), (-m[0][1]).atan2(m[0][0]))
    };
    [wrap_upper(roll), pitch, wrap_upper(yaw)]
}

#[inline]
fn wrap_upper<T: Real>(a: T) -> T {
    // atan2 can return exactly −π; the canonical range is (−π, π].
    if a.value() <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}
