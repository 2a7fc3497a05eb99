//! Closed-form deformation fields used as ground truth.
//!
//! Every field is the identity at frame 0. Positions map through the field;
//! rotations compose with the polar factor of its spatial Jacobian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{DualQuaternion, Mat3, Quaternion, RigidTransform, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DeformationField {
    /// Rotation about `axis` through `center` at `angular_rate` rad/frame plus
    /// a constant `velocity` per frame.
    Rigid {
        axis: [f64; 3],
        center: [f64; 3],
        angular_rate: f64,
        velocity: [f64; 3],
    },
    /// Bends the y axis into an arc in the x–y plane with curvature
    /// `rate·t` (centre of curvature on +x). `inverse` applies the exact
    /// inverse map. With a `pivot`, only `y > pivot` bends (an articulated
    /// limb over a static base).
    Bend {
        rate: f64,
        #[serde(default)]
        inverse: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pivot: Option<f64>,
    },
    /// Rotation about z by `rate·t·z`.
    Twist { rate: f64 },
    /// Travelling wave along z: `z + A·(sin(kx − ωt) − sin(kx))`.
    Ripple {
        amplitude: f64,
        wavenumber: f64,
        speed: f64,
    },
    /// Applied first to last.
    Composite { fields: Vec<DeformationField> },
}

const FLAT: f64 = 1e-12;

impl DeformationField {
    /// Bend reaching `max_angle_deg` at |y| = `half_length` on the last frame.
    pub fn bend_for(max_angle_deg: f64, half_length: f64, frames: usize) -> Self {
        let last = frames.saturating_sub(1).max(1) as f64;
        DeformationField::Bend {
            rate: max_angle_deg.to_radians() / (half_length * last),
            inverse: false,
            pivot: None,
        }
    }

    /// Bend of the part above `pivot` reaching `max_angle_deg` at the tip,
    /// `length` above the pivot, on the last frame.
    pub fn articulated_bend(max_angle_deg: f64, pivot: f64, length: f64, frames: usize) -> Self {
        let last = frames.saturating_sub(1).max(1) as f64;
        DeformationField::Bend {
            rate: max_angle_deg.to_radians() / (length * last),
            inverse: false,
            pivot: Some(pivot),
        }
    }

    pub fn identity() -> Self {
        DeformationField::Composite { fields: vec![] }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            DeformationField::Rigid {
                axis,
                center,
                angular_rate,
                velocity,
            } => {
                finite(axis)
                    && finite(center)
                    && finite(velocity)
                    && angular_rate.is_finite()
                    && (axis.iter().map(|a| a * a).sum::<f64>() > 0.0 || *angular_rate == 0.0)
            }
            DeformationField::Bend { rate, pivot, .. } => rate.is_finite() && pivot.is_none_or(f64::is_finite),
            DeformationField::Twist { rate } => rate.is_finite(),
            DeformationField::Ripple {
                amplitude,
                wavenumber,
                speed,
            } => finite(&[*amplitude, *wavenumber, *speed]),
            DeformationField::Composite { fields } => return fields.iter().try_for_each(Self::validate),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid deformation field {self:?}")))
        }
    }

    fn rigid_at(axis: &[f64; 3], center: &[f64; 3], rate: f64, velocity: &[f64; 3], t: f64) -> RigidTransform<f64> {
        let q = match Vec3::from_array(*axis).normalized() {
            Some(a) => Quaternion::from_axis_angle(a, rate * t),
            None => Quaternion::identity(),
        };
        let c = Vec3::from_array(*center);
        let r = q.to_rotation_unit();
        let tr = c - r * c + Vec3::from_array(*velocity) * t;
        RigidTransform {
            rotation: r,
            translation: tr,
        }
    }

    pub fn map(&self, p: Vec3<f64>, t: f64) -> Vec3<f64> {
        match self {
            DeformationField::Rigid {
                axis,
                center,
                angular_rate,
                velocity,
            } => Self::rigid_at(axis, center, *angular_rate, velocity, t).apply(p),
            DeformationField::Bend { rate, inverse, pivot } => {
                let k = rate * t;
                if k.abs() < FLAT {
                    return p;
                }
                let y0 = Vec3::new(0.0, pivot.unwrap_or(0.0), 0.0);
                let q = p - y0;
                if *inverse {
                    let x = bend_inverse(q, k);
                    if pivot.is_some() && x.y <= 0.0 {
                        p
                    } else {
                        x + y0
                    }
                } else if pivot.is_some() && q.y <= 0.0 {
                    p
                } else {
                    let th = k * q.y;
                    let rho = 1.0 / k - q.x;
                    Vec3::new(1.0 / k - rho * th.cos(), rho * th.sin(), q.z) + y0
                }
            }
            DeformationField::Twist { rate } => {
                let th = rate * t * p.z;
                let (s, c) = th.sin_cos();
                Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
            }
            DeformationField::Ripple {
                amplitude,
                wavenumber,
                speed,
            } => {
                let kx = wavenumber * p.x;
                Vec3::new(p.x, p.y, p.z + amplitude * ((kx - speed * t).sin() - kx.sin()))
            }
            DeformationField::Composite { fields } => fields.iter().fold(p, |q, f| f.map(q, t)),
        }
    }

    /// Spatial Jacobian ∂map/∂p.
    pub fn jacobian(&self, p: Vec3<f64>, t: f64) -> Mat3<f64> {
        match self {
            DeformationField::Rigid {
                axis,
                center,
                angular_rate,
                velocity,
            } => Self::rigid_at(axis, center, *angular_rate, velocity, t).rotation,
            DeformationField::Bend { rate, inverse, pivot } => {
                let k = rate * t;
                if k.abs() < FLAT {
                    return Mat3::identity();
                }
                let q = p - Vec3::new(0.0, pivot.unwrap_or(0.0), 0.0);
                if *inverse {
                    let x = bend_inverse(q, k);
                    if pivot.is_some() && x.y <= 0.0 {
                        Mat3::identity()
                    } else {
                        bend_jacobian(x, k).inverse().unwrap_or_else(Mat3::identity)
                    }
                } else if pivot.is_some() && q.y <= 0.0 {
                    Mat3::identity()
                } else {
                    bend_jacobian(q, k)
                }
            }
            DeformationField::Twist { rate } => {
                let tau = rate * t;
                let (s, c) = (tau * p.z).sin_cos();
                Mat3::from_rows([
                    [c, -s, -tau * (s * p.x + c * p.y)],
                    [s, c, tau * (c * p.x - s * p.y)],
                    [0.0, 0.0, 1.0],
                ])
            }
            DeformationField::Ripple {
                amplitude,
                wavenumber,
                speed,
            } => {
                let kx = wavenumber * p.x;
                let mut j = Mat3::identity();
                j.m[2][0] = amplitude * wavenumber * ((kx - speed * t).cos() - kx.cos());
                j
            }
            DeformationField::Composite { fields } => {
                let mut q = p;
                let mut j = Mat3::identity();
                for f in fields {
                    j = f.jacobian(q, t) * j;
                    q = f.map(q, t);
                }
                j
            }
        }
    }

    /// Local rotation: polar factor of the Jacobian (exact for rigid fields).
    pub fn rotation(&self, p: Vec3<f64>, t: f64) -> Result<Quaternion<f64>> {
        if let DeformationField::Rigid { .. } = self {
            return Ok(Quaternion::from_rotation(&self.jacobian(p, t)));
        }
        let r = self
            .jacobian(p, t)
            .polar_rotation()
            .ok_or_else(|| Error::InvalidParameter(format!("field folds space at {p:?}, frame {t}")))?;
        Ok(Quaternion::from_rotation(&r))
    }

    /// Rigid motion matching the field to first order at `x`: rotation is the
    /// local polar factor and `x` maps exactly.
    pub fn local_motion(&self, x: Vec3<f64>, t: f64) -> Result<DualQuaternion<f64>> {
        let q = self.rotation(x, t)?;
        let tr = self.map(x, t) - q.rotate(x);
        Ok(DualQuaternion::from_rotation_translation(q, tr))
    }
}

fn bend_jacobian(p: Vec3<f64>, k: f64) -> Mat3<f64> {
    let (s, c) = (k * p.y).sin_cos();
    let a = 1.0 - k * p.x;
    Mat3::from_rows([[c, a * s, 0.0], [-s, a * c, 0.0], [0.0, 0.0, 1.0]])
}

fn bend_inverse(p: Vec3<f64>, k: f64) -> Vec3<f64> {
    let sgn = k.signum();
    let u = 1.0 / k - p.x;
    let rho = sgn * u.hypot(p.y);
    let th = (sgn * p.y).atan2(sgn * u);
    Vec3::new(1.0 / k - rho, th / k, p.z)
}
