use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::geom::{Mat3, RigidTransform, Vec3};
use crate::scalar::Real;

/// Pinhole camera. Camera axes: x right, y down, z forward; pixel `(i, j)`
/// has its centre at `(i + ½, j + ½)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    pub world_to_cam: RigidTransform<T>,
}

impl<T: Real> Camera<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize, world_to_cam: RigidTransform<T>) -> Result<Self> {
        if !(fx > T::zero() && fy > T::zero()) || width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "camera needs positive focal lengths and size, got fx {fx}, fy {fy}, {width}×{height}"
            )));
        }
        world_to_cam.validate()?;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_cam,
        })
    }

    /// Camera at `eye` looking at `target`, `up` roughly the image-up direction,
    /// vertical field of view `fov_y` in radians, principal point centred.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, fov_y: T, width: usize, height: usize) -> Result<Self> {
        let bad = || Error::InvalidParameter("degenerate look-at frame".into());
        let fwd = (target - eye).normalized().ok_or_else(bad)?;
        let right = fwd.cross(up).normalized().ok_or_else(bad)?;
        let down = fwd.cross(right);
        let r = Mat3::from_rows([right.to_array(), down.to_array(), fwd.to_array()]);
        let t = -(r * eye);
        let f = T::from_usize_lossy(height) * T::half() / (fov_y * T::half()).tan();
        Self::new(
            f,
            f,
            T::from_usize_lossy(width) * T::half(),
            T::from_usize_lossy(height) * T::half(),
            width,
            height,
            RigidTransform::new(r, t)?,
        )
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        -(self.world_to_cam.rotation.transpose() * self.world_to_cam.translation)
    }

    /// Same view at `factor`× the resolution.
    pub fn scaled(&self, factor: usize) -> Self {
        let f = T::from_usize_lossy(factor);
        Self {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
            world_to_cam: self.world_to_cam,
        }
    }

    pub fn check_image(&self, img: &Image<T>) -> Result<()> {
        if img.width != self.width || img.height != self.height {
            return Err(Error::SizeMismatch {
                expected: (self.width, self.height),
                got: (img.width, img.height),
            });
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::c(v.to_f64_lossy());
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            width: self.width,
            height: self.height,
            world_to_cam: RigidTransform {
                rotation: self.world_to_cam.rotation.cast(),
                translation: self.world_to_cam.translation.cast(),
            },
        }
    }
}
