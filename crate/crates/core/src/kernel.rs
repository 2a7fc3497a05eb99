//! Gaussian kernels and per-frame kernel sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Quaternion, SHCoefficients, Vec3};
use crate::scalar::Real;

/// One splat. Rotation is consumed normalised; scale is stored as a log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel<T> {
    pub position: Vec3<T>,
    pub rotation: Quaternion<T>,
    pub log_scale: Vec3<T>,
    pub opacity_logit: T,
    pub sh: SHCoefficients<T>,
}

impl<T: Real> GaussianKernel<T> {
    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.rotation.is_finite()
            && self.log_scale.is_finite()
            && self.opacity_logit.is_finite()
            && self.sh.is_finite()
    }

    #[inline]
    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    #[inline]
    pub fn scale(&self) -> Vec3<T> {
        self.log_scale.map(|v| v.exp())
    }

    pub fn cast<U: Real>(&self) -> GaussianKernel<U> {
        GaussianKernel {
            position: self.position.cast(),
            rotation: self.rotation.cast(),
            log_scale: self.log_scale.cast(),
            opacity_logit: U::c(self.opacity_logit.to_f64_lossy()),
            sh: self.sh.cast(),
        }
    }

    /// Copy with every attribute rounded through `f32`.
    pub fn rounded_f32(&self) -> Self {
        let mut k = self.clone();
        k.position = k.position.map(Real::round_f32);
        k.rotation = Quaternion::from_array(k.rotation.to_array().map(Real::round_f32));
        k.log_scale = k.log_scale.map(Real::round_f32);
        k.opacity_logit = k.opacity_logit.round_f32();
        for c in k.sh.coeffs_mut() {
            *c = c.map(Real::round_f32);
        }
        k
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// The kernel set of one frame. Kernel `i` is the same physical kernel in
/// every frame of a segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameState<T> {
    pub frame: usize,
    pub kernels: Vec<GaussianKernel<T>>,
}

impl<T: Real> FrameState<T> {
    pub fn new(frame: usize, kernels: Vec<GaussianKernel<T>>) -> Self {
        Self { frame, kernels }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3<T>> {
        self.kernels.iter().map(|k| k.position).collect()
    }

    pub fn sh_degree(&self) -> u8 {
        self.kernels.first().map_or(0, |k| k.sh.degree())
    }

    /// Index of the first kernel with a non-finite attribute.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.kernels.iter().position(|k| !k.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite {
                what: "kernel",
                index,
            }),
            None => Ok(()),
        }
    }

    pub fn check_same_len(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: other.len(),
                got: self.len(),
            });
        }
        Ok(())
    }

    /// Axis-aligned bounds of kernel centres.
    pub fn bounds(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        bounds(self.kernels.iter().map(|k| k.position))
    }

    /// Bounding-box diagonal of kernel centres.
    pub fn extent(&self) -> T {
        self.bounds().map_or(T::zero(), |(lo, hi)| (hi - lo).norm())
    }

    pub fn cast<U: Real>(&self) -> FrameState<U> {
        FrameState {
            frame: self.frame,
            kernels: self.kernels.iter().map(|k| k.cast()).collect(),
        }
    }

    pub fn rounded_f32(&self) -> Self {
        Self {
            frame: self.frame,
            kernels: self.kernels.iter().map(|k| k.rounded_f32()).collect(),
        }
    }
}

pub fn bounds<T: Real>(mut it: impl Iterator<Item = Vec3<T>>) -> Option<(Vec3<T>, Vec3<T>)> {
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), p| (lo.min_elem(p), hi.max_elem(p))))
}

/// Floats per kernel for SH degree `degree`: 3 + 4 + 3 + 1 + 3·(L+1)².
pub const fn floats_per_kernel(degree: u8) -> usize {
    11 + 3 * crate::geom::basis_count(degree)
}

/// Uncompressed 32-bit storage of one frame in bytes.
pub const fn raw_frame_bytes(kernel_count: usize, degree: u8) -> usize {
    kernel_count * floats_per_kernel(degree) * 4
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_three_is_59_floats() {
        assert_eq!(floats_per_kernel(3), 59);
        assert_eq!(raw_frame_bytes(200_000, 3), 47_200_000);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        assert_eq!(sigmoid(0.0f64), 0.5);
    }
}
