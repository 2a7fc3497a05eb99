use serde::{Deserialize, Serialize};

use super::linalg::{Mat3, Vec3};
use super::quat::Quaternion;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance used when validating rotation matrices.
pub const RIGID_TOL: f64 = 1e-6;

/// Rigid transform `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    /// Validates `RᵀR = I` and `det R = +1` within [`RIGID_TOL`].
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_quat(q: Quaternion<T>, translation: Vec3<T>) -> Result<Self> {
        Ok(Self {
            rotation: q.normalized()?.to_rotation_unit(),
            translation,
        })
    }

    pub fn translation(t: Vec3<T>) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    pub fn orthonormality_error(&self) -> T {
        let r = &self.rotation;
        let rtr = r.transpose() * *r;
        let ortho = rtr.max_abs_diff(&Mat3::identity());
        ortho.max((r.det() - T::one()).abs())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.is_finite() || !self.translation.is_finite() {
            return Err(Error::NonFinite {
                what: "rigid transform",
                index: 0,
            });
        }
        let dev = self.orthonormality_error();
        if dev > T::c(RIGID_TOL) {
            return Err(Error::NotOrthonormal {
                deviation: dev.to_f64_lossy(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Dual quaternion `real + ε·dual`. A unit dual quaternion encodes a rigid
/// transform with `dual = ½·t·real`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualQuaternion<T> {
    pub real: Quaternion<T>,
    pub dual: Quaternion<T>,
}

impl<T: Real> Default for DualQuaternion<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> DualQuaternion<T> {
    pub fn identity() -> Self {
        Self {
            real: Quaternion::identity(),
            dual: Quaternion::zero(),
        }
    }

    pub fn zero() -> Self {
        Self {
            real: Quaternion::zero(),
            dual: Quaternion::zero(),
        }
    }

    /// Unit dual quaternion from rotation `r` then translation `t`.
    pub fn from_rotation_translation(r: Quaternion<T>, t: Vec3<T>) -> Self {
        let tq = Quaternion::from_scalar_vec(T::zero(), t);
        Self {
            real: r,
            dual: (tq * r).scale(T::half()),
        }
    }

    pub fn translation(&self) -> Vec3<T> {
        (self.dual * self.real.conj()).scale(T::two()).vec()
    }

    pub fn is_finite(&self) -> bool {
        self.real.is_finite() && self.dual.is_finite()
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            real: self.real.scale(s),
            dual: self.dual.scale(s),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            real: self.real + o.real,
            dual: self.dual + o.dual,
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(-T::one())
    }

    /// Dual-quaternion product; as transforms, `self` is applied after `o`.
    pub fn mul(&self, o: &Self) -> Self {
        Self {
            real: self.real * o.real,
            dual: self.real * o.dual + self.dual * o.real,
        }
    }

    /// Normalises to a unit dual quaternion: `‖real‖ = 1`, `⟨real, dual⟩ = 0`.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.real.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        let inv = T::one() / n;
        let real = self.real.scale(inv);
        let dual = self.dual.scale(inv);
        let dual = dual - real.scale(real.dot(dual));
        Ok(Self { real, dual })
    }

    /// Applies the encoded rigid motion to a point (assumes unit form).
    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.real.rotate(p) + self.translation()
    }

    pub fn cast<U: Real>(&self) -> DualQuaternion<U> {
        DualQuaternion {
            real: self.real.cast(),
            dual: self.dual.cast(),
        }
    }

    pub fn to_array(&self) -> [T; 8] {
        let r = self.real.to_array();
        let d = self.dual.to_array();
        [r[0], r[1], r[2], r[3], d[0], d[1], d[2], d[3]]
    }

    pub fn from_array(a: [T; 8]) -> Self {
        Self {
            real: Quaternion::new(a[0], a[1], a[2], a[3]),
            dual: Quaternion::new(a[4], a[5], a[6], a[7]),
        }
    }
}

/// Unit dual quaternion of a validated rigid transform.
pub fn dq_from_rigid<T: Real>(t: &RigidTransform<T>) -> Result<DualQuaternion<T>> {
    t.validate()?;
    let r = Quaternion::from_rotation(&t.rotation);
    Ok(DualQuaternion::from_rotation_translation(r, t.translation))
}

/// Rigid transform of a dual quaternion; normalises first, rejects a zero real part.
pub fn dq_to_rigid<T: Real>(dq: &DualQuaternion<T>) -> Result<RigidTransform<T>> {
    let u = dq.normalized()?;
    Ok(RigidTransform {
        rotation: u.real.to_rotation_unit(),
        translation: u.translation(),
    })
}

/// Rotation part of a dual quaternion as a unit quaternion.
pub fn rot_of<T: Real>(dq: &DualQuaternion<T>) -> Result<Quaternion<T>> {
    dq.real.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_transform() {
        let dq = dq_from_rigid(&RigidTransform::<f64>::identity()).unwrap();
        assert_eq!(dq.real, Quaternion::identity());
        assert_eq!(dq.dual, Quaternion::zero());
        let back = dq_to_rigid(&dq).unwrap();
        assert_eq!(back.rotation, Mat3::identity());
        assert_eq!(back.translation, Vec3::zero());
    }

    #[test]
    fn pure_translation() {
        let t = RigidTransform::translation(Vec3::new(0.0, 0.0, 1.0));
        let dq = dq_from_rigid(&t).unwrap();
        assert_eq!(dq.real, Quaternion::identity());
        assert_eq!(dq.dual, Quaternion::new(0.0, 0.0, 0.0, 0.5));
        let back = dq_to_rigid(&dq).unwrap();
        assert_eq!(back.rotation, Mat3::identity());
        assert!((back.translation - Vec3::new(0.0, 0.0, 1.0)).max_abs() < 1e-15);
        assert_eq!(rot_of(&dq).unwrap(), Quaternion::identity());
    }

    #[test]
    fn quarter_turn_with_translation_roundtrips() {
        let q = Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2);
        let t = RigidTransform::from_quat(q, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let dq = dq_from_rigid(&t).unwrap();
        let back = dq_to_rigid(&dq).unwrap();
        assert!(back.rotation.max_abs_diff(&t.rotation) < 1e-12);
        assert!((back.translation - t.translation).max_abs() < 1e-12);
        let r = rot_of(&dq).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r - Quaternion::new(h, 0.0, 0.0, h)).norm() < 1e-12);
    }

    #[test]
    fn non_orthonormal_rejected() {
        let mut m = Mat3::<f64>::identity();
        m.m[0][0] = 1.1;
        let t = RigidTransform {
            rotation: m,
            translation: Vec3::zero(),
        };
        assert!(matches!(dq_from_rigid(&t), Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn zero_real_part_rejected() {
        assert!(dq_to_rigid(&DualQuaternion::<f64>::zero()).is_err());
    }

    #[test]
    fn normalization_enforces_constraints() {
        let dq = DualQuaternion {
            real: Quaternion::new(2.0f64, 0.3, -0.1, 0.5),
            dual: Quaternion::new(0.7, 0.2, 0.9, -1.0),
        }
        .normalized()
        .unwrap();
        assert!((dq.real.norm() - 1.0).abs() < 1e-12);
        assert!(dq.real.dot(dq.dual).abs() < 1e-12);
    }
}
