//! Real spherical harmonics in the splatting convention (degree ≤ 3).
//!
//! Coefficients are stored basis-major: entry `k` holds the RGB triple that
//! multiplies basis function `Y_k`, with `k = ℓ² + ℓ + m`.

use serde::{Deserialize, Serialize};

use super::linalg::Vec3;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: u8 = 3;

/// Number of basis functions for degree `l`: `(l+1)²`.
#[inline]
pub const fn basis_count(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SHCoefficients<T> {
    degree: u8,
    coeffs: Vec<[T; 3]>,
}

impl<T: Real> SHCoefficients<T> {
    pub fn zeros(degree: u8) -> Result<Self> {
        check_degree(degree)?;
        Ok(Self {
            degree,
            coeffs: vec![[T::zero(); 3]; basis_count(degree)],
        })
    }

    pub fn from_coeffs(degree: u8, coeffs: Vec<[T; 3]>) -> Result<Self> {
        check_degree(degree)?;
        if coeffs.len() != basis_count(degree) {
            return Err(Error::LengthMismatch {
                what: "sh coefficients",
                expected: basis_count(degree),
                got: coeffs.len(),
            });
        }
        Ok(Self { degree, coeffs })
    }

    /// From a flat basis-major slice of `3·(L+1)²` reals.
    pub fn from_flat(degree: u8, flat: &[T]) -> Result<Self> {
        check_degree(degree)?;
        let n = basis_count(degree);
        if flat.len() != 3 * n {
            return Err(Error::LengthMismatch {
                what: "sh coefficients",
                expected: 3 * n,
                got: flat.len(),
            });
        }
        let coeffs = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Self { degree, coeffs })
    }

    #[inline]
    pub fn degree(&self) -> u8 {
        self.degree
    }

    #[inline]
    pub fn coeffs(&self) -> &[[T; 3]] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [[T; 3]] {
        &mut self.coeffs
    }

    /// Number of reals, `3·(L+1)²`.
    #[inline]
    pub fn len(&self) -> usize {
        3 * self.coeffs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn flat(&self) -> impl Iterator<Item = T> + '_ {
        self.coeffs.iter().flat_map(|c| c.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> SHCoefficients<U> {
        SHCoefficients {
            degree: self.degree,
            coeffs: self
                .coeffs
                .iter()
                .map(|c| c.map(|v| U::c(v.to_f64_lossy())))
                .collect(),
        }
    }
}

fn check_degree(degree: u8) -> Result<()> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::InvalidParameter(format!(
            "sh degree {degree} exceeds {MAX_SH_DEGREE}"
        )));
    }
    Ok(())
}

/// Evaluates the basis functions at `dir` into `out[..(L+1)²]`.
pub fn sh_basis<T: Real>(degree: u8, dir: Vec3<T>, out: &mut [T]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = T::c(SH_C0);
    if degree == 0 {
        return;
    }
    let c1 = T::c(SH_C1);
    out[1] = -c1 * y;
    out[2] = c1 * z;
    out[3] = -c1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    let c2 = SH_C2.map(T::c);
    out[4] = c2[0] * xy;
    out[5] = c2[1] * yz;
    out[6] = c2[2] * (T::two() * zz - xx - yy);
    out[7] = c2[3] * xz;
    out[8] = c2[4] * (xx - yy);
    if degree == 2 {
        return;
    }
    let c3 = SH_C3.map(T::c);
    let three = T::c(3.0);
    let four = T::c(4.0);
    out[9] = c3[0] * y * (three * xx - yy);
    out[10] = c3[1] * xy * z;
    out[11] = c3[2] * y * (four * zz - xx - yy);
    out[12] = c3[3] * z * (T::two() * zz - three * xx - three * yy);
    out[13] = c3[4] * x * (four * zz - xx - yy);
    out[14] = c3[5] * z * (xx - yy);
    out[15] = c3[6] * x * (xx - three * yy);
}

/// Partial derivatives of each basis polynomial with respect to the
/// (unconstrained) components of `dir`.
pub fn sh_basis_grad<T: Real>(degree: u8, dir: Vec3<T>, out: &mut [Vec3<T>]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let zr = T::zero();
    out[0] = Vec3::zero();
    if degree == 0 {
        return;
    }
    let c1 = T::c(SH_C1);
    out[1] = Vec3::new(zr, -c1, zr);
    out[2] = Vec3::new(zr, zr, c1);
    out[3] = Vec3::new(-c1, zr, zr);
    if degree == 1 {
        return;
    }
    let c2 = SH_C2.map(T::c);
    let two = T::two();
    out[4] = Vec3::new(c2[0] * y, c2[0] * x, zr);
    out[5] = Vec3::new(zr, c2[1] * z, c2[1] * y);
    out[6] = Vec3::new(-two * c2[2] * x, -two * c2[2] * y, T::c(4.0) * c2[2] * z);
    out[7] = Vec3::new(c2[3] * z, zr, c2[3] * x);
    out[8] = Vec3::new(two * c2[4] * x, -two * c2[4] * y, zr);
    if degree == 2 {
        return;
    }
    let c3 = SH_C3.map(T::c);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let three = T::c(3.0);
    let four = T::c(4.0);
    let six = T::c(6.0);
    let eight = T::c(8.0);
    out[9] = Vec3::new(six * c3[0] * x * y, c3[0] * (three * xx - three * yy), zr);
    out[10] = Vec3::new(c3[1] * y * z, c3[1] * x * z, c3[1] * x * y);
    out[11] = Vec3::new(
        -two * c3[2] * x * y,
        c3[2] * (four * zz - xx - three * yy),
        eight * c3[2] * y * z,
    );
    out[12] = Vec3::new(
        -six * c3[3] * x * z,
        -six * c3[3] * y * z,
        c3[3] * (six * zz - three * xx - three * yy),
    );
    out[13] = Vec3::new(
        c3[4] * (four * zz - three * xx - yy),
        -two * c3[4] * x * y,
        eight * c3[4] * x * z,
    );
    out[14] = Vec3::new(two * c3[5] * x * z, -two * c3[5] * y * z, c3[5] * (xx - yy));
    out[15] = Vec3::new(c3[6] * (three * xx - three * yy), -six * c3[6] * x * y, zr);
}

/// Raw SH sum per channel, before the +0.5 shift and clamp.
pub fn sh_raw<T: Real>(c: &SHCoefficients<T>, dir: Vec3<T>) -> [T; 3] {
    let mut basis = [T::zero(); 16];
    sh_basis(c.degree, dir, &mut basis);
    let mut rgb = [T::zero(); 3];
    for (k, coef) in c.coeffs.iter().enumerate() {
        for ch in 0..3 {
            rgb[ch] += coef[ch] * basis[k];
        }
    }
    rgb
}

/// View-dependent colour: `max(0, Σ c_k·Y_k(dir) + 0.5)` per channel.
pub fn sh_eval<T: Real>(c: &SHCoefficients<T>, dir: Vec3<T>) -> [T; 3] {
    sh_raw(c, dir).map(|v| (v + T::half()).max(T::zero()))
}

/// DC coefficient producing a constant colour `rgb`.
pub fn rgb_to_dc<T: Real>(rgb: [T; 3]) -> [T; 3] {
    rgb.map(|v| (v - T::half()) / T::c(SH_C0))
}
