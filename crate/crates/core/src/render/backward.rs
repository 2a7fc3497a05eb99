//! Analytic gradient of the photometric loss.
//!
//! Compositing is differentiated with two front-to-back passes per pixel:
//! with `C = Σ cᵢαᵢTᵢ`, `∂C/∂αᵢ = Tᵢcᵢ − (C − C≤ᵢ)/(1 − αᵢ)`. Per-fragment
//! partials are gathered per tile and reduced in tile order, then pushed
//! through conic → screen covariance → view covariance → (R, S) → quaternion,
//! the perspective Jacobian's dependence on the centre, the sigmoid, and the
//! SH evaluation including its view-direction dependence.

use rayon::prelude::*;

use super::{composite, fragment_alpha, Camera, Image, Projection, RasterConfig, SplatFragment};
use crate::error::Result;
use crate::geom::{basis_count, normalize_backward, rotation_jacobian, sh_basis, sh_basis_grad, Mat3, Vec3};
use crate::kernel::GaussianKernel;
use crate::scalar::Real;

/// Per-kernel gradients, one array per attribute class.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrads<T> {
    pub position: Vec<Vec3<T>>,
    /// With respect to the stored (possibly unnormalised) quaternion.
    pub rotation: Vec<[T; 4]>,
    pub log_scale: Vec<Vec3<T>>,
    pub opacity: Vec<T>,
    /// `basis` entries per kernel.
    pub sh: Vec<[T; 3]>,
    pub basis: usize,
}

impl<T: Real> KernelGrads<T> {
    pub fn zeros(n: usize, degree: u8) -> Self {
        let basis = basis_count(degree);
        Self {
            position: vec![Vec3::zero(); n],
            rotation: vec![[T::zero(); 4]; n],
            log_scale: vec![Vec3::zero(); n],
            opacity: vec![T::zero(); n],
            sh: vec![[T::zero(); 3]; n * basis],
            basis,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.position.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    #[inline]
    pub fn sh_of(&self, i: usize) -> &[[T; 3]] {
        &self.sh[i * self.basis..(i + 1) * self.basis]
    }

    #[inline]
    pub fn sh_of_mut(&mut self, i: usize) -> &mut [[T; 3]] {
        &mut self.sh[i * self.basis..(i + 1) * self.basis]
    }

    /// `self += s·o`.
    pub fn add_scaled(&mut self, o: &Self, s: T) {
        for (a, b) in self.position.iter_mut().zip(&o.position) {
            *a += *b * s;
        }
        for (a, b) in self.rotation.iter_mut().zip(&o.rotation) {
            for k in 0..4 {
                a[k] += b[k] * s;
            }
        }
        for (a, b) in self.log_scale.iter_mut().zip(&o.log_scale) {
            *a += *b * s;
        }
        for (a, b) in self.opacity.iter_mut().zip(&o.opacity) {
            *a += *b * s;
        }
        for (a, b) in self.sh.iter_mut().zip(&o.sh) {
            for c in 0..3 {
                a[c] += b[c] * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    /// First kernel with a non-finite gradient entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        (0..self.len()).find(|&i| {
            !self.position[i].is_finite()
                || self.rotation[i].iter().any(|v| !v.is_finite())
                || !self.log_scale[i].is_finite()
                || !self.opacity[i].is_finite()
                || self.sh_of(i).iter().flatten().any(|v| !v.is_finite())
        })
    }
}

#[derive(Clone, Copy, Default)]
struct FragGrad<T> {
    mean: [T; 2],
    conic: [T; 3],
    rgb: [T; 3],
    opacity: T,
}

impl<T: Real> FragGrad<T> {
    fn zero() -> Self {
        Self {
            mean: [T::zero(); 2],
            conic: [T::zero(); 3],
            rgb: [T::zero(); 3],
            opacity: T::zero(),
        }
    }

    fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.rgb[k] += o.rgb[k];
        }
        self.opacity += o.opacity;
    }
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Loss and gradient for one camera. The L1 subgradient at zero is 0.
pub fn e_color_grad<T: Real>(
    kernels: &[GaussianKernel<T>],
    cam: &Camera<T>,
    target: &Image<T>,
    cfg: &RasterConfig,
) -> Result<(T, KernelGrads<T>)> {
    cam.check_image(target)?;
    let comp = composite(kernels, cam, cfg)?;
    let loss = comp.image.mean_abs_diff(target);
    let norm = T::one() / T::from_usize_lossy(3 * cam.width * cam.height);
    let (w, h) = (cam.width, cam.height);
    let tiles_x = comp.tiles_x;

    let tile_grads: Vec<Vec<FragGrad<T>>> = comp
        .tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let mut g = vec![FragGrad::zero(); list.len()];
            if list.is_empty() {
                return g;
            }
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            for py in ty * super::TILE..((ty + 1) * super::TILE).min(h) {
                for px in tx * super::TILE..((tx + 1) * super::TILE).min(w) {
                    let p = py * w + px;
                    let c = &comp.image.data[3 * p..3 * p + 3];
                    let tg = &target.data[3 * p..3 * p + 3];
                    let dl = [0, 1, 2].map(|k| sign(c[k] - tg[k]) * norm);
                    if dl.iter().all(|v| *v == T::zero()) {
                        continue;
                    }
                    pixel_backward(&comp.fragments, list, comp.visited[p] as usize, px, py, c, dl, cfg, &mut g);
                }
            }
            g
        })
        .collect();

    let mut frag_grads = vec![FragGrad::zero(); comp.fragments.len()];
    for (list, g) in comp.tiles.iter().zip(&tile_grads) {
        for (&fi, gi) in list.iter().zip(g) {
            frag_grads[fi as usize].add(gi);
        }
    }

    let degree = kernels.first().map_or(0, |k| k.sh.degree());
    let mut out = KernelGrads::zeros(kernels.len(), degree);
    let per_kernel: Vec<_> = comp
        .fragments
        .par_iter()
        .zip(comp.projections.par_iter())
        .zip(frag_grads.par_iter())
        .map(|((f, pr), g)| chain(&kernels[f.index], f, pr, g, cam))
        .collect();
    for (f, kg) in comp.fragments.iter().zip(per_kernel) {
        let i = f.index;
        out.position[i] = kg.position;
        out.rotation[i] = kg.rotation;
        out.log_scale[i] = kg.log_scale;
        out.opacity[i] = kg.opacity;
        out.sh_of_mut(i).copy_from_slice(&kg.sh);
    }
    Ok((loss, out))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn pixel_backward<T: Real>(
    fragments: &[SplatFragment<T>],
    list: &[u32],
    visited: usize,
    px: usize,
    py: usize,
    c_final: &[T],
    dl: [T; 3],
    cfg: &RasterConfig,
    grads: &mut [FragGrad<T>],
) {
    let mut t = T::one();
    let mut c_le = [T::zero(); 3];
    let amax = T::c(cfg.alpha_max);
    for (slot, &fi) in list[..visited].iter().enumerate() {
        let f = &fragments[fi as usize];
        let Some((dx, dy, gauss, alpha)) = fragment_alpha(f, px, py, cfg) else {
            continue;
        };
        let wgt = alpha * t;
        let one_m = T::one() - alpha;
        let mut g_alpha = T::zero();
        for ch in 0..3 {
            c_le[ch] += f.rgb[ch] * wgt;
            g_alpha += dl[ch] * (t * f.rgb[ch] - (c_final[ch] - c_le[ch]) / one_m);
        }
        let g = &mut grads[slot];
        for ch in 0..3 {
            g.rgb[ch] += dl[ch] * wgt;
        }
        if f.opacity * gauss < amax {
            g.opacity += g_alpha * gauss;
            // α = o·exp(−m/2)  ⇒  ∂α/∂m = −α/2.
            let g_m = -T::half() * alpha * g_alpha;
            let [a, b, c] = f.conic;
            g.mean[0] += g_m * (-T::two()) * (a * dx + b * dy);
            g.mean[1] += g_m * (-T::two()) * (b * dx + c * dy);
            g.conic[0] += g_m * dx * dx;
            g.conic[1] += g_m * T::two() * dx * dy;
            g.conic[2] += g_m * dy * dy;
        }
        t *= one_m;
        if t < T::c(cfg.min_transmittance) {
            break;
        }
    }
}

struct OneKernel<T> {
    position: Vec3<T>,
    rotation: [T; 4],
    log_scale: Vec3<T>,
    opacity: T,
    sh: Vec<[T; 3]>,
}

fn chain<T: Real>(
    k: &GaussianKernel<T>,
    f: &SplatFragment<T>,
    pr: &Projection<T>,
    g: &FragGrad<T>,
    cam: &Camera<T>,
) -> OneKernel<T> {
    let two = T::two();
    // Conic → screen covariance: G_Σ = −K G_K K.
    let [a, b, c] = f.conic;
    let gk = [[g.conic[0], g.conic[1] * T::half()], [g.conic[1] * T::half(), g.conic[2]]];
    let kmat = [[a, b], [b, c]];
    let kg = mul2(&kmat, &gk);
    let ks = mul2(&kg, &kmat);
    let gs = [[-ks[0][0], -ks[0][1]], [-ks[1][0], -ks[1][1]]];

    // Σ₂ = J M Jᵀ: G_M = Jᵀ G_Σ J, G_J = 2 G_Σ J M.
    let j = &pr.jac;
    let mut gm = Mat3::zero();
    for r in 0..3 {
        for cc in 0..3 {
            let mut v = T::zero();
            for p in 0..2 {
                for q in 0..2 {
                    v += j[p][r] * gs[p][q] * j[q][cc];
                }
            }
            gm.m[r][cc] = v;
        }
    }
    let mut gsj = [[T::zero(); 3]; 2];
    for p in 0..2 {
        for cc in 0..3 {
            gsj[p][cc] = gs[p][0] * j[0][cc] + gs[p][1] * j[1][cc];
        }
    }
    let mut gj = [[T::zero(); 3]; 2];
    for p in 0..2 {
        for cc in 0..3 {
            let mut v = T::zero();
            for r in 0..3 {
                v += gsj[p][r] * pr.cov_cam.m[r][cc];
            }
            gj[p][cc] = two * v;
        }
    }

    // M = W Σ₃ Wᵀ.
    let wr = &cam.world_to_cam.rotation;
    let g3 = wr.transpose() * gm * *wr;

    // Σ₃ = R D Rᵀ with D = diag(s²).
    let r = &pr.rotation;
    let s2 = pr.scale.component_mul(pr.scale);
    let rd = Mat3::from_cols(r.col(0) * s2.x, r.col(1) * s2.y, r.col(2) * s2.z);
    let gr = (g3 * rd).scale(two);
    let rtgr = r.transpose() * g3 * *r;
    let log_scale = Vec3::new(
        two * s2.x * rtgr.m[0][0],
        two * s2.y * rtgr.m[1][1],
        two * s2.z * rtgr.m[2][2],
    );
    let q_unit = k.rotation.normalized().unwrap_or(k.rotation);
    let dr = rotation_jacobian(q_unit);
    let mut gq = [T::zero(); 4];
    for (cq, d) in dr.iter().enumerate() {
        let mut v = T::zero();
        for rr in 0..3 {
            for cc in 0..3 {
                v += gr.m[rr][cc] * d.m[rr][cc];
            }
        }
        gq[cq] = v;
    }
    let rotation = normalize_backward(k.rotation, gq);

    // Mean and Jacobian depend on the view-space centre.
    let t = pr.t_cam;
    let iz = T::one() / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut gt = Vec3::new(
        g.mean[0] * fx * iz,
        g.mean[1] * fy * iz,
        -g.mean[0] * fx * t.x * iz2 - g.mean[1] * fy * t.y * iz2,
    );
    gt.x += gj[0][2] * (-fx * iz2);
    gt.y += gj[1][2] * (-fy * iz2);
    gt.z += gj[0][0] * (-fx * iz2)
        + gj[0][2] * (two * fx * t.x * iz3)
        + gj[1][1] * (-fy * iz2)
        + gj[1][2] * (two * fy * t.y * iz3);
    let mut position = wr.transpose() * gt;

    // Colour: rgb = max(0, Σ c_k Y_k(d) + ½), d = (p − o)/‖p − o‖.
    let degree = k.sh.degree();
    let nb = basis_count(degree);
    let mut basis = [T::zero(); 16];
    sh_basis(degree, pr.dir, &mut basis);
    let g_raw = [0, 1, 2].map(|ch| {
        if pr.raw_rgb[ch] + T::half() > T::zero() {
            g.rgb[ch]
        } else {
            T::zero()
        }
    });
    let sh: Vec<[T; 3]> = (0..nb).map(|kk| g_raw.map(|v| v * basis[kk])).collect();
    if degree > 0 && pr.dist > T::zero() {
        let mut bgrad = [Vec3::zero(); 16];
        sh_basis_grad(degree, pr.dir, &mut bgrad);
        let mut g_dir = Vec3::zero();
        for (kk, coef) in k.sh.coeffs().iter().enumerate() {
            let w = coef[0] * g_raw[0] + coef[1] * g_raw[1] + coef[2] * g_raw[2];
            g_dir += bgrad[kk] * w;
        }
        let d = pr.dir;
        position += (g_dir - d * d.dot(g_dir)) * (T::one() / pr.dist);
    }
    let op = f.opacity;
    OneKernel {
        position,
        rotation,
        log_scale,
        opacity: g.opacity * op * (T::one() - op),
        sh,
    }
}

fn mul2<T: Real>(a: &[[T; 2]; 2], b: &[[T; 2]; 2]) -> [[T; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Quaternion, SHCoefficients};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random kernels whose view depths from [`camera`] are at least 5e-3
    /// apart, so finite-difference steps never reorder the depth sort.
    fn scene(n: usize, seed: u64, degree: u8) -> Vec<GaussianKernel<f64>> {
        let cam = camera();
        let depth = |k: &GaussianKernel<f64>| cam.world_to_cam.apply(k.position).z;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<GaussianKernel<f64>> = Vec::new();
        while out.len() < n {
            let k = {
                let nb = basis_count(degree);
                let mut coeffs = vec![[0.0; 3]; nb];
                for (k, c) in coeffs.iter_mut().enumerate() {
                    let amp = if k == 0 { 0.8 } else { 0.15 };
                    *c = [0; 3].map(|_| amp * (rng.random::<f64>() - 0.5));
                }
                GaussianKernel {
                    position: Vec3::new(
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                    ) * 0.8,
                    rotation: Quaternion::new(
                        rng.random::<f64>() + 0.2,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                    ),
                    log_scale: Vec3::new(
                        -2.2 + 0.6 * rng.random::<f64>(),
                        -2.2 + 0.6 * rng.random::<f64>(),
                        -2.2 + 0.6 * rng.random::<f64>(),
                    ),
                    opacity_logit: 2.0 * rng.random::<f64>() - 1.0,
                    sh: SHCoefficients::from_coeffs(degree, coeffs).unwrap(),
                }
            };
            if out.iter().all(|o| (depth(o) - depth(&k)).abs() > 5e-3) {
                out.push(k);
            }
        }
        out
    }

    fn camera() -> Camera<f64> {
        Camera::look_at(
            Vec3::new(0.4, -2.5, 0.6),
            Vec3::zero(),
            Vec3::new(0.0, 0.0, 1.0),
            0.9,
            40,
            32,
        )
        .unwrap()
    }

    // Wide cutoff and no early termination keep the loss smooth for
    // finite differences; both truncations are otherwise piecewise.
    fn smooth_cfg() -> RasterConfig {
        RasterConfig {
            cutoff_sigma: 12.0,
            min_transmittance: 0.0,
            ..RasterConfig::default()
        }
    }

    /// Target = render ± 0.05 per channel so no residual changes sign under
    /// the finite-difference step.
    fn offset_target(img: &Image<f64>, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = img.clone();
        for v in &mut t.data {
            *v += if rng.random::<bool>() { 0.05 } else { -0.05 };
        }
        t
    }

    fn check(label: &str, analytic: f64, fd: f64) {
        let err = (analytic - fd).abs();
        let rel = err / analytic.abs().max(fd.abs()).max(1e-300);
        assert!(rel < 1e-3 || err < 1e-6, "{label}: analytic {analytic:e} vs fd {fd:e}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cam = camera();
        let cfg = smooth_cfg();
        let ks = scene(20, 5, 3);
        let target = offset_target(&super::super::rasterize(&ks, &cam, &cfg).unwrap(), 9);
        // Sum-of-absolute-differences scale keeps the absolute floor meaningful.
        let scale = (3 * cam.width * cam.height) as f64;
        let loss = |ks: &[GaussianKernel<f64>]| super::super::e_color(ks, &cam, &target, &cfg).unwrap() * scale;
        let (_, g) = e_color_grad(&ks, &cam, &target, &cfg).unwrap();
        let h = 1e-3;
        let fd = |edit: &dyn Fn(&mut GaussianKernel<f64>, f64), i: usize| {
            let mut a = ks.clone();
            edit(&mut a[i], h);
            let mut b = ks.clone();
            edit(&mut b[i], -h);
            (loss(&a) - loss(&b)) / (2.0 * h)
        };
        for i in 0..ks.len() {
            for c in 0..3 {
                let e = |k: &mut GaussianKernel<f64>, d: f64| k.position[c] += d;
                check(&format!("p[{i}][{c}]"), g.position[i][c] * scale, fd(&e, i));
                let e = |k: &mut GaussianKernel<f64>, d: f64| k.log_scale[c] += d;
                check(&format!("s[{i}][{c}]"), g.log_scale[i][c] * scale, fd(&e, i));
            }
            for c in 0..4 {
                let e = |k: &mut GaussianKernel<f64>, d: f64| {
                    let mut a = k.rotation.to_array();
                    a[c] += d;
                    k.rotation = Quaternion::from_array(a);
                };
                check(&format!("q[{i}][{c}]"), g.rotation[i][c] * scale, fd(&e, i));
            }
            let e = |k: &mut GaussianKernel<f64>, d: f64| k.opacity_logit += d;
            check(&format!("o[{i}]"), g.opacity[i] * scale, fd(&e, i));
            for b in 0..16 {
                for ch in 0..3 {
                    let e = |k: &mut GaussianKernel<f64>, d: f64| k.sh.coeffs_mut()[b][ch] += d;
                    check(&format!("sh[{i}][{b}][{ch}]"), g.sh_of(i)[b][ch] * scale, fd(&e, i));
                }
            }
        }
    }

    #[test]
    fn exact_target_has_zero_gradient() {
        let cam = camera();
        let cfg = RasterConfig::default();
        let ks = scene(10, 2, 1);
        let target = super::super::rasterize(&ks, &cam, &cfg).unwrap();
        let (loss, g) = e_color_grad(&ks, &cam, &target, &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.position.iter().all(|p| *p == Vec3::zero()));
        assert!(g.sh.iter().flatten().all(|v| *v == 0.0));
        assert!(g.opacity.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn descent_moves_towards_shifted_target() {
        let cam = camera();
        let cfg = RasterConfig::default();
        let mut k = scene(1, 3, 0);
        k[0].position = Vec3::zero();
        k[0].log_scale = Vec3::splat(-2.0);
        k[0].opacity_logit = 2.0;
        k[0].sh.coeffs_mut()[0] = [1.5; 3];
        let right = cam.world_to_cam.rotation.row(0);
        let px = cam.fx.recip() * cam.world_to_cam.apply(Vec3::zero()).z;
        let mut shifted = k.clone();
        shifted[0].position = right * px;
        let target = super::super::rasterize(&shifted, &cam, &cfg).unwrap();
        let (_, g) = e_color_grad(&k, &cam, &target, &cfg).unwrap();
        // The loss falls when the kernel moves right, so the gradient points left.
        assert!(g.position[0].dot(right) < 0.0);
    }
}
