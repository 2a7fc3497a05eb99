use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::linalg::{Mat3, Vec3};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Quaternion stored `(w, x, y, z)`, Hamilton convention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quaternion<T> {
    #[inline]
    pub const fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    #[inline]
    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    #[inline]
    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    #[inline]
    pub fn vec(self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    #[inline]
    pub fn from_scalar_vec(w: T, v: Vec3<T>) -> Self {
        Self::new(w, v.x, v.y, v.z)
    }

    /// Unit quaternion rotating by `angle` radians about `axis` (need not be unit).
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let Some(a) = axis.normalized() else {
            return Self::identity();
        };
        let (s, c) = (angle * T::half()).sin_cos();
        Self::from_scalar_vec(c, a * s)
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn conj(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        Ok(self.scale(T::one() / n))
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotates `v` by the sandwich product `q v q*` (q assumed unit).
    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        let u = self.vec();
        let t = u.cross(v) * T::two();
        v + t * self.w + u.cross(t)
    }

    /// Rotation matrix of a unit quaternion (no normalisation).
    pub fn to_rotation_unit(self) -> Mat3<T> {
        let Self { w, x, y, z } = self;
        let one = T::one();
        let two = T::two();
        Mat3::from_rows([
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ])
    }

    /// Unit quaternion of a rotation matrix (Shepperd's method), `w ≥ 0`.
    pub fn from_rotation(r: &Mat3<T>) -> Self {
        let m = &r.m;
        let tr = m[0][0] + m[1][1] + m[2][2];
        let one = T::one();
        let quarter = T::c(0.25);
        let q = if tr > T::zero() {
            let s = (tr + one).sqrt() * T::two();
            Self::new(
                quarter * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::two();
            Self::new(
                (m[2][1] - m[1][2]) / s,
                quarter * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::two();
            Self::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                quarter * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::two();
            Self::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                quarter * s,
            )
        };
        let q = q.normalized().unwrap_or_else(|_| Self::identity());
        if q.w < T::zero() {
            -q
        } else {
            q
        }
    }

    /// Flips `self` into the hemisphere of `reference` (dot ≥ 0).
    #[inline]
    pub fn aligned_to(self, reference: Self) -> Self {
        if self.dot(reference) < T::zero() {
            -self
        } else {
            self
        }
    }

    /// Left-multiplication matrix: `(a ⊗ b).to_array() == a.left_matrix() · b`.
    pub fn left_matrix(self) -> [[T; 4]; 4] {
        let Self { w, x, y, z } = self;
        [[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]]
    }

    /// Right-multiplication matrix: `(a ⊗ b).to_array() == b.right_matrix() · a`.
    pub fn right_matrix(self) -> [[T; 4]; 4] {
        let Self { w, x, y, z } = self;
        [[w, -x, -y, -z], [x, w, z, -y], [y, -z, w, x], [z, y, -x, w]]
    }

    pub fn cast<U: Real>(self) -> Quaternion<U> {
        Quaternion::new(
            U::c(self.w.to_f64_lossy()),
            U::c(self.x.to_f64_lossy()),
            U::c(self.y.to_f64_lossy()),
            U::c(self.z.to_f64_lossy()),
        )
    }
}

/// Rotation matrix of `q`, normalising first. Rejects a zero quaternion.
pub fn quat_to_rot<T: Real>(q: Quaternion<T>) -> Result<Mat3<T>> {
    Ok(q.normalized()?.to_rotation_unit())
}

/// Derivatives of the unit-quaternion rotation matrix with respect to
/// `(w, x, y, z)`; entry `k` is `∂R/∂q_k`.
pub fn rotation_jacobian<T: Real>(q: Quaternion<T>) -> [Mat3<T>; 4] {
    let Quaternion { w, x, y, z } = q;
    let t = T::two();
    let f = T::c(4.0);
    let zr = T::zero();
    [
        Mat3::from_rows([
            [zr, -t * z, t * y],
            [t * z, zr, -t * x],
            [-t * y, t * x, zr],
        ]),
        Mat3::from_rows([
            [zr, t * y, t * z],
            [t * y, -f * x, -t * w],
            [t * z, t * w, -f * x],
        ]),
        Mat3::from_rows([
            [-f * y, t * x, t * w],
            [t * x, zr, t * z],
            [-t * w, t * z, -f * y],
        ]),
        Mat3::from_rows([
            [-f * z, -t * w, t * x],
            [t * w, -f * z, t * y],
            [t * x, t * y, zr],
        ]),
    ]
}

/// Back-propagates a gradient on the normalised quaternion to the raw one.
pub fn normalize_backward<T: Real>(raw: Quaternion<T>, grad_unit: [T; 4]) -> [T; 4] {
    let n = raw.norm();
    let u = raw.scale(T::one() / n).to_array();
    let d: T = (0..4).map(|k| u[k] * grad_unit[k]).sum();
    let mut out = [T::zero(); 4];
    for k in 0..4 {
        out[k] = (grad_unit[k] - u[k] * d) / n;
    }
    out
}

impl<T: Real> Mul for Quaternion<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

impl<T: Real> Add for Quaternion<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Quaternion<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Quaternion<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_identity_matrix() {
        let r = quat_to_rot(Quaternion::<f64>::identity()).unwrap();
        assert_eq!(r, Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = quat_to_rot(Quaternion::new(h, 0.0, 0.0, h)).unwrap();
        let v = r * Vec3::new(1.0, 0.0, 0.0);
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).max_abs() < 1e-15);
    }

    #[test]
    fn double_cover_gives_identical_matrix() {
        let q = Quaternion::new(0.3, -0.5, 0.1, 0.8);
        assert_eq!(quat_to_rot(q).unwrap(), quat_to_rot(-q).unwrap());
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(matches!(
            quat_to_rot(Quaternion::<f64>::zero()),
            Err(Error::ZeroQuaternion)
        ));
    }

    #[test]
    fn sandwich_matches_matrix() {
        let q = Quaternion::new(0.3, -0.5, 0.1, 0.8).normalized().unwrap();
        let v = Vec3::new(0.2, -1.0, 3.0);
        let a = q.rotate(v);
        let b = q.to_rotation_unit() * v;
        assert!((a - b).max_abs() < 1e-14);
    }

    #[test]
    fn matrix_roundtrip() {
        let q = Quaternion::new(-0.3, -0.5, 0.1, 0.8).normalized().unwrap();
        let back = Quaternion::from_rotation(&q.to_rotation_unit());
        let back = back.aligned_to(q);
        assert!((back - q).norm() < 1e-14);
    }

    #[test]
    fn product_matrices() {
        let a = Quaternion::new(0.3, -0.5, 0.1, 0.8);
        let b = Quaternion::new(-0.2, 0.4, 0.9, -0.1);
        let ab = (a * b).to_array();
        let l = a.left_matrix();
        let r = b.right_matrix();
        let (ba, bb) = (b.to_array(), a.to_array());
        for i in 0..4 {
            let lv: f64 = (0..4).map(|k| l[i][k] * ba[k]).sum();
            let rv: f64 = (0..4).map(|k| r[i][k] * bb[k]).sum();
            assert!((lv - ab[i]).abs() < 1e-15);
            assert!((rv - ab[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_jacobian_matches_finite_differences() {
        let q = Quaternion::new(0.3, -0.5, 0.1, 0.8);
        let jac = rotation_jacobian(q);
        let h = 1e-6;
        for k in 0..4 {
            let mut p = q.to_array();
            let mut m = q.to_array();
            p[k] += h;
            m[k] -= h;
            let rp = Quaternion::from_array(p).to_rotation_unit();
            let rm = Quaternion::from_array(m).to_rotation_unit();
            let fd = rp.add(&rm.scale(-1.0)).scale(0.5 / h);
            assert!(fd.max_abs_diff(&jac[k]) < 1e-8, "component {k}");
        }
    }
}
