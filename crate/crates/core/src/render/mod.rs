//! CPU reference splat rasterizer.
//!
//! Kernels are projected to screen-space Gaussians (EWA splatting with a
//! perspective Jacobian), sorted front to back by view depth with the kernel
//! index as tie-break, and alpha-composited per pixel. Compositing walks 8×8
//! tiles whose fragment lists preserve the global depth order, so the result
//! is identical to a per-image sorted loop. The photometric loss is the mean
//! absolute per-channel difference; its gradient is in [`backward`].

mod backward;
mod camera;
mod image;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{sh_raw, Mat3, Vec3};
use crate::kernel::GaussianKernel;
use crate::scalar::Real;

pub use backward::{e_color_grad, KernelGrads};
pub use camera::Camera;
pub use image::Image;

pub const TILE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterConfig {
    /// Upper clamp on per-fragment alpha.
    pub alpha_max: f64,
    /// Screen-space variance added to both diagonal entries, px².
    pub dilation: f64,
    /// Kernels whose centre is at or in front of this view depth are culled.
    pub near: f64,
    /// Fragments contribute within this Mahalanobis radius.
    pub cutoff_sigma: f64,
    /// Compositing stops once transmittance drops below this value.
    pub min_transmittance: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            alpha_max: 0.99,
            dilation: 0.3,
            near: 0.01,
            cutoff_sigma: 3.0,
            min_transmittance: 1e-4,
        }
    }
}

/// A projected kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatFragment<T> {
    pub index: usize,
    /// Centre in pixels.
    pub mean: [T; 2],
    /// Screen covariance `(xx, xy, yy)` in px², dilation included.
    pub cov: [T; 3],
    /// Inverse covariance `(xx, xy, yy)`.
    pub conic: [T; 3],
    pub depth: T,
    pub rgb: [T; 3],
    pub opacity: T,
}

/// Intermediates of one projection, reused by the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct Projection<T> {
    pub t_cam: Vec3<T>,
    pub rotation: Mat3<T>,
    pub scale: Vec3<T>,
    pub cov_cam: Mat3<T>,
    pub jac: [[T; 3]; 2],
    pub dir: Vec3<T>,
    pub dist: T,
    pub raw_rgb: [T; 3],
}

pub(crate) fn project_full<T: Real>(
    kernel: &GaussianKernel<T>,
    cam: &Camera<T>,
    cfg: &RasterConfig,
) -> Option<(SplatFragment<T>, Projection<T>)> {
    let w = &cam.world_to_cam;
    let t = w.apply(kernel.position);
    if !(t.z > T::c(cfg.near)) {
        return None;
    }
    let q = kernel.rotation.normalized().ok()?;
    let r = q.to_rotation_unit();
    let s = kernel.scale();
    let s2 = s.component_mul(s);
    let rs = Mat3::from_cols(r.col(0) * s2.x, r.col(1) * s2.y, r.col(2) * s2.z);
    let cov_world = rs * r.transpose();
    let cov_cam = w.rotation * cov_world * w.rotation.transpose();
    let iz = T::one() / t.z;
    let jac = [
        [cam.fx * iz, T::zero(), -cam.fx * t.x * iz * iz],
        [T::zero(), cam.fy * iz, -cam.fy * t.y * iz * iz],
    ];
    let cov2 = jmjt(&jac, &cov_cam);
    let dil = T::c(cfg.dilation);
    let cov = [cov2[0] + dil, cov2[1], cov2[2] + dil];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > T::zero()) {
        return None;
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mean = [cam.fx * t.x * iz + cam.cx, cam.fy * t.y * iz + cam.cy];
    let k = T::c(cfg.cutoff_sigma);
    let rx = k * cov[0].sqrt();
    let ry = k * cov[2].sqrt();
    let (wf, hf) = (T::from_usize_lossy(cam.width), T::from_usize_lossy(cam.height));
    if mean[0] + rx < T::zero() || mean[0] - rx > wf || mean[1] + ry < T::zero() || mean[1] - ry > hf {
        return None;
    }
    let offset = kernel.position - cam.center();
    let dist = offset.norm();
    let dir = if dist > T::zero() {
        offset * (T::one() / dist)
    } else {
        Vec3::new(T::zero(), T::zero(), T::one())
    };
    let raw_rgb = sh_raw(&kernel.sh, dir);
    let rgb = raw_rgb.map(|v| (v + T::half()).max(T::zero()));
    let frag = SplatFragment {
        index: 0,
        mean,
        cov,
        conic,
        depth: t.z,
        rgb,
        opacity: kernel.opacity(),
    };
    Some((
        frag,
        Projection {
            t_cam: t,
            rotation: r,
            scale: s,
            cov_cam,
            jac,
            dir,
            dist,
            raw_rgb,
        },
    ))
}

/// `J M Jᵀ` as `(xx, xy, yy)`.
fn jmjt<T: Real>(j: &[[T; 3]; 2], m: &Mat3<T>) -> [T; 3] {
    let mut jm = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jm[r][c] = j[r][0] * m.m[0][c] + j[r][1] * m.m[1][c] + j[r][2] * m.m[2][c];
        }
    }
    let dotr = |a: &[T; 3], b: &[T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    [dotr(&jm[0], &j[0]), dotr(&jm[0], &j[1]), dotr(&jm[1], &j[1])]
}

/// Projects one kernel; `None` when culled.
pub fn project<T: Real>(
    kernel: &GaussianKernel<T>,
    cam: &Camera<T>,
    cfg: &RasterConfig,
) -> Option<SplatFragment<T>> {
    project_full(kernel, cam, cfg).map(|(f, _)| f)
}

/// Sorted fragments, tile lists and per-pixel compositing state.
pub(crate) struct Composite<T> {
    pub fragments: Vec<SplatFragment<T>>,
    pub projections: Vec<Projection<T>>,
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub image: Image<T>,
    /// Final transmittance per pixel.
    pub final_t: Vec<T>,
    /// Tile-list entries visited per pixel (compositing stopped after these).
    pub visited: Vec<u32>,
}

pub(crate) fn composite<T: Real>(
    kernels: &[GaussianKernel<T>],
    cam: &Camera<T>,
    cfg: &RasterConfig,
) -> Result<Composite<T>> {
    if let Some(i) = kernels.iter().position(|k| !k.is_finite()) {
        return Err(Error::NonFinite {
            what: "kernel",
            index: i,
        });
    }
    let mut projected: Vec<(SplatFragment<T>, Projection<T>)> = kernels
        .par_iter()
        .enumerate()
        .filter_map(|(i, k)| {
            project_full(k, cam, cfg).map(|(mut f, p)| {
                f.index = i;
                (f, p)
            })
        })
        .collect();
    projected.sort_by(|a, b| crate::scalar::cmp_by_key((a.0.depth, a.0.index), (b.0.depth, b.0.index)));
    let (fragments, projections): (Vec<_>, Vec<_>) = projected.into_iter().unzip();

    let tiles_x = cam.width.div_ceil(TILE);
    let tiles_y = cam.height.div_ceil(TILE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    let k = T::c(cfg.cutoff_sigma);
    let tile_f = T::from_usize_lossy(TILE);
    for (fi, f) in fragments.iter().enumerate() {
        let rx = k * f.cov[0].sqrt();
        let ry = k * f.cov[2].sqrt();
        let clampi = |v: T, hi: usize| -> usize {
            let v = (v / tile_f).floor().to_f64_lossy();
            v.clamp(0.0, (hi - 1) as f64) as usize
        };
        let x0 = clampi(f.mean[0] - rx, tiles_x);
        let x1 = clampi(f.mean[0] + rx, tiles_x);
        let y0 = clampi(f.mean[1] - ry, tiles_y);
        let y1 = clampi(f.mean[1] + ry, tiles_y);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tiles[ty * tiles_x + tx].push(fi as u32);
            }
        }
    }

    let (w, h) = (cam.width, cam.height);
    let per_tile: Vec<Vec<(usize, [T; 3], T, u32)>> = tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            let mut out = Vec::with_capacity(TILE * TILE);
            for py in ty * TILE..((ty + 1) * TILE).min(h) {
                for px in tx * TILE..((tx + 1) * TILE).min(w) {
                    let (c, t, n) = shade_pixel(&fragments, list, px, py, cfg);
                    out.push((py * w + px, c, t, n));
                }
            }
            out
        })
        .collect();
    let mut image = Image::new(w, h);
    let mut final_t = vec![T::one(); w * h];
    let mut visited = vec![0u32; w * h];
    for tile in per_tile {
        for (p, c, t, n) in tile {
            image.data[3 * p..3 * p + 3].copy_from_slice(&c);
            final_t[p] = t;
            visited[p] = n;
        }
    }
    Ok(Composite {
        fragments,
        projections,
        tiles,
        tiles_x,
        image,
        final_t,
        visited,
    })
}

/// Mahalanobis-squared offset and alpha of a fragment at a pixel centre, or
/// `None` outside the cutoff.
#[inline]
pub(crate) fn fragment_alpha<T: Real>(
    f: &SplatFragment<T>,
    px: usize,
    py: usize,
    cfg: &RasterConfig,
) -> Option<(T, T, T, T)> {
    let dx = T::from_usize_lossy(px) + T::half() - f.mean[0];
    let dy = T::from_usize_lossy(py) + T::half() - f.mean[1];
    let [a, b, c] = f.conic;
    let m = a * dx * dx + T::two() * b * dx * dy + c * dy * dy;
    let k = T::c(cfg.cutoff_sigma);
    if m > k * k {
        return None;
    }
    let g = (-T::half() * m).exp();
    let alpha = (f.opacity * g).min(T::c(cfg.alpha_max));
    Some((dx, dy, g, alpha))
}

#[inline]
fn shade_pixel<T: Real>(
    fragments: &[SplatFragment<T>],
    list: &[u32],
    px: usize,
    py: usize,
    cfg: &RasterConfig,
) -> ([T; 3], T, u32) {
    let mut c = [T::zero(); 3];
    let mut t = T::one();
    let t_min = T::c(cfg.min_transmittance);
    let mut n = 0u32;
    for &fi in list {
        n += 1;
        let f = &fragments[fi as usize];
        let Some((_, _, _, alpha)) = fragment_alpha(f, px, py, cfg) else {
            continue;
        };
        let wgt = alpha * t;
        for ch in 0..3 {
            c[ch] += f.rgb[ch] * wgt;
        }
        t *= T::one() - alpha;
        if t < t_min {
            break;
        }
    }
    (c, t, n)
}

/// Renders `kernels` from `cam` on a black background.
pub fn rasterize<T: Real>(kernels: &[GaussianKernel<T>], cam: &Camera<T>, cfg: &RasterConfig) -> Result<Image<T>> {
    Ok(composite(kernels, cam, cfg)?.image)
}

/// Render plus the final transmittance of every pixel.
pub fn rasterize_with_transmittance<T: Real>(
    kernels: &[GaussianKernel<T>],
    cam: &Camera<T>,
    cfg: &RasterConfig,
) -> Result<(Image<T>, Vec<T>)> {
    let c = composite(kernels, cam, cfg)?;
    Ok((c.image, c.final_t))
}

/// Sorted fragments as composited, for inspection.
pub fn fragments<T: Real>(
    kernels: &[GaussianKernel<T>],
    cam: &Camera<T>,
    cfg: &RasterConfig,
) -> Result<Vec<SplatFragment<T>>> {
    Ok(composite(kernels, cam, cfg)?.fragments)
}

/// Mean absolute per-channel difference between the render and `target`.
pub fn e_color<T: Real>(
    kernels: &[GaussianKernel<T>],
    cam: &Camera<T>,
    target: &Image<T>,
    cfg: &RasterConfig,
) -> Result<T> {
    cam.check_image(target)?;
    let img = rasterize(kernels, cam, cfg)?;
    Ok(img.mean_abs_diff(target))
}
