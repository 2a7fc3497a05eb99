//! Temporal and smoothness regularizers, adaptive weights, the total
//! per-frame objective and its sequential optimizer.
//!
//! With `w_i = exp(−α‖p′ᵢ,ₜ − p′ᵢ,ₜ₋₁‖²)` from warped positions:
//!
//! * `E_temp   = Σᵢ wᵢ (λ_C‖Cᵢ,ₜ − Cᵢ,ₜ₋₁‖² + λ_σ(σᵢ,ₜ − σᵢ,ₜ₋₁)² + λ_s‖sᵢ,ₜ − sᵢ,ₜ₋₁‖²)`
//! * `E_smooth = Σᵢ Σ_{j∈𝒩(i)} wᵢ ‖R(qᵢ,ₜ q̄ᵢ,ₜ₋₁)(pⱼ,ₜ₋₁ − pᵢ,ₜ₋₁) − (pⱼ,ₜ − pᵢ,ₜ)‖²`
//! * `E = λ_temp E_temp + λ_smooth E_smooth + λ_color Σ_cams E_color`

mod optimize;
mod sampling;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_backward, rotation_jacobian, Mat3, Vec3};
use crate::graph::GaussianGraph;
use crate::kernel::FrameState;
use crate::render::{e_color_grad, Camera, Image, KernelGrads, RasterConfig};
use crate::scalar::Real;

pub use optimize::{optimize_frame, LearningRates, OptimizeConfig, OptimizeReport, OptimizeResult};
pub use sampling::{importance_sample_kernels, region_quotas, Region, REGION_RATIO};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyWeights {
    pub lambda_sh: f64,
    pub lambda_opacity: f64,
    pub lambda_scale: f64,
    pub lambda_smooth: f64,
    pub lambda_temp: f64,
    pub lambda_color: f64,
    /// Sharpness of the adaptive displacement weight.
    pub alpha: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            lambda_sh: 1.0,
            lambda_opacity: 0.05,
            lambda_scale: 0.05,
            lambda_smooth: 0.002,
            lambda_temp: 0.0005,
            lambda_color: 1.0,
            alpha: 50.0,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_sh,
            self.lambda_opacity,
            self.lambda_scale,
            self.lambda_smooth,
            self.lambda_temp,
            self.lambda_color,
            self.alpha,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "energy weights must be finite and non-negative: {all:?}"
            )));
        }
        Ok(())
    }
}

/// Per-kernel weights in `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveWeights<T> {
    pub w: Vec<T>,
}

impl<T: Real> AdaptiveWeights<T> {
    pub fn ones(n: usize) -> Self {
        Self { w: vec![T::one(); n] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// `wᵢ = exp(−α‖p′ᵢ,ₜ − p′ᵢ,ₜ₋₁‖²)`.
pub fn adaptive_weights<T: Real>(
    warped_prev: &[Vec3<T>],
    warped_cur: &[Vec3<T>],
    alpha: T,
) -> Result<AdaptiveWeights<T>> {
    if warped_prev.len() != warped_cur.len() {
        return Err(Error::LengthMismatch {
            what: "adaptive weight positions",
            expected: warped_prev.len(),
            got: warped_cur.len(),
        });
    }
    Ok(AdaptiveWeights {
        w: warped_prev
            .iter()
            .zip(warped_cur)
            .map(|(a, b)| (-alpha * (*b - *a).norm_sq()).exp())
            .collect(),
    })
}

fn check_pair<T: Real>(cur: &FrameState<T>, prev: &FrameState<T>, w: &AdaptiveWeights<T>) -> Result<()> {
    cur.check_same_len(prev, "current frame kernels")?;
    if w.len() != cur.len() {
        return Err(Error::LengthMismatch {
            what: "adaptive weights",
            expected: cur.len(),
            got: w.len(),
        });
    }
    Ok(())
}

/// Temporal appearance term; `grad`, when given, receives `∂E_temp/∂cur`.
pub fn e_temp_grad<T: Real>(
    cur: &FrameState<T>,
    prev: &FrameState<T>,
    w: &AdaptiveWeights<T>,
    weights: &EnergyWeights,
    mut grad: Option<&mut KernelGrads<T>>,
) -> Result<T> {
    check_pair(cur, prev, w)?;
    let (lc, lo, ls) = (T::c(weights.lambda_sh), T::c(weights.lambda_opacity), T::c(weights.lambda_scale));
    let two = T::two();
    let mut e = T::zero();
    for (i, (a, b)) in cur.kernels.iter().zip(&prev.kernels).enumerate() {
        if a.sh.len() != b.sh.len() {
            return Err(Error::LengthMismatch {
                what: "sh coefficients",
                expected: b.sh.len(),
                got: a.sh.len(),
            });
        }
        let wi = w.w[i];
        let mut sh = T::zero();
        for (ca, cb) in a.sh.coeffs().iter().zip(b.sh.coeffs()) {
            for ch in 0..3 {
                let d = ca[ch] - cb[ch];
                sh += d * d;
            }
        }
        let dop = a.opacity_logit - b.opacity_logit;
        let ds = a.log_scale - b.log_scale;
        e += wi * (lc * sh + lo * dop * dop + ls * ds.norm_sq());
        if let Some(g) = grad.as_deref_mut() {
            g.opacity[i] += two * wi * lo * dop;
            g.log_scale[i] += ds * (two * wi * ls);
            for ((gc, ca), cb) in g.sh_of_mut(i).iter_mut().zip(a.sh.coeffs()).zip(b.sh.coeffs()) {
                for ch in 0..3 {
                    gc[ch] += two * wi * lc * (ca[ch] - cb[ch]);
                }
            }
        }
    }
    Ok(e)
}

pub fn e_temp<T: Real>(
    cur: &FrameState<T>,
    prev: &FrameState<T>,
    w: &AdaptiveWeights<T>,
    weights: &EnergyWeights,
) -> Result<T> {
    e_temp_grad(cur, prev, w, weights, None)
}

/// Local-rigidity term over the Gaussian graph; `grad`, when given, receives
/// `∂E_smooth/∂cur` for positions and rotations.
pub fn e_smooth_grad<T: Real>(
    cur: &FrameState<T>,
    prev: &FrameState<T>,
    graph: &GaussianGraph<T>,
    w: &AdaptiveWeights<T>,
    grad: Option<&mut KernelGrads<T>>,
) -> Result<T> {
    check_pair(cur, prev, w)?;
    if graph.kernel_neighbors.len() != cur.len() {
        return Err(Error::LengthMismatch {
            what: "gaussian graph kernels",
            expected: cur.len(),
            got: graph.kernel_neighbors.len(),
        });
    }
    let two = T::two();
    let want_grad = grad.is_some();
    // Per kernel: energy, ∂/∂pᵢ from its own edges, ∂/∂q (raw), and the
    // (j, ∂/∂pⱼ) contributions pushed to neighbours.
    type Pushes<T> = Vec<(u32, Vec3<T>)>;
    let per: Result<Vec<(T, Vec3<T>, [T; 4], Pushes<T>)>> = (0..cur.len())
        .into_par_iter()
        .map(|i| {
            let (ka, kb) = (&cur.kernels[i], &prev.kernels[i]);
            let qa = ka.rotation.normalized()?;
            let qb = kb.rotation.normalized()?;
            let pb = qb.conj();
            let u = qa * pb;
            let r = u.to_rotation_unit();
            let wi = w.w[i];
            let mut e = T::zero();
            let mut gpi = Vec3::zero();
            let mut gr = Mat3::zero();
            let mut pushes = Vec::new();
            for &j in &graph.kernel_neighbors[i] {
                let j = j as usize;
                let e_prev = prev.kernels[j].position - kb.position;
                let e_cur = cur.kernels[j].position - ka.position;
                let res = r * e_prev - e_cur;
                e += wi * res.norm_sq();
                if want_grad {
                    let g = res * (two * wi);
                    gpi += g;
                    pushes.push((j as u32, -g));
                    gr = gr.add(&Mat3::outer(g, e_prev));
                }
            }
            let mut gq = [T::zero(); 4];
            if want_grad {
                let dr = rotation_jacobian(u);
                let mut gu = [T::zero(); 4];
                for (c, d) in dr.iter().enumerate() {
                    let mut v = T::zero();
                    for a in 0..3 {
                        for b in 0..3 {
                            v += gr.m[a][b] * d.m[a][b];
                        }
                    }
                    gu[c] = v;
                }
                // u = qₐ ⊗ p̄  ⇒  u = M(p̄)·qₐ.
                let m = pb.right_matrix();
                let mut gqa = [T::zero(); 4];
                for c in 0..4 {
                    for k in 0..4 {
                        gqa[c] += m[k][c] * gu[k];
                    }
                }
                gq = normalize_backward(ka.rotation, gqa);
            }
            Ok((e, gpi, gq, pushes))
        })
        .collect();
    let per = per?;
    let mut e = T::zero();
    for p in &per {
        e += p.0;
    }
    if let Some(g) = grad {
        for (i, (_, gpi, gq, pushes)) in per.into_iter().enumerate() {
            g.position[i] += gpi;
            for k in 0..4 {
                g.rotation[i][k] += gq[k];
            }
            for (j, v) in pushes {
                g.position[j as usize] += v;
            }
        }
    }
    Ok(e)
}

pub fn e_smooth<T: Real>(
    cur: &FrameState<T>,
    prev: &FrameState<T>,
    graph: &GaussianGraph<T>,
    w: &AdaptiveWeights<T>,
) -> Result<T> {
    e_smooth_grad(cur, prev, graph, w, None)
}

/// Multi-view supervision for one frame.
#[derive(Clone, Copy, Debug)]
pub struct Views<'a, T> {
    pub cameras: &'a [Camera<T>],
    pub targets: &'a [Image<T>],
}

impl<'a, T: Real> Views<'a, T> {
    pub fn new(cameras: &'a [Camera<T>], targets: &'a [Image<T>]) -> Result<Self> {
        if cameras.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "target images",
                expected: cameras.len(),
                got: targets.len(),
            });
        }
        for (c, t) in cameras.iter().zip(targets) {
            c.check_image(t)?;
        }
        Ok(Self { cameras, targets })
    }
}

/// Energy parts and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown<T> {
    pub temp: T,
    pub smooth: T,
    pub color: T,
    pub total: T,
}

/// Total objective and its gradient with respect to `cur`.
#[allow(clippy::too_many_arguments)]
pub fn total_energy<T: Real>(
    cur: &FrameState<T>,
    prev: &FrameState<T>,
    graph: &GaussianGraph<T>,
    w: &AdaptiveWeights<T>,
    views: Views<'_, T>,
    weights: &EnergyWeights,
    raster: &RasterConfig,
) -> Result<(EnergyBreakdown<T>, KernelGrads<T>)> {
    let mut grad = KernelGrads::zeros(cur.len(), cur.sh_degree());
    let mut b = EnergyBreakdown::default();
    let (lt, ls, lc) = (T::c(weights.lambda_temp), T::c(weights.lambda_smooth), T::c(weights.lambda_color));
    if lt > T::zero() {
        let mut g = KernelGrads::zeros(cur.len(), cur.sh_degree());
        b.temp = e_temp_grad(cur, prev, w, weights, Some(&mut g))?;
        grad.add_scaled(&g, lt);
    }
    if ls > T::zero() {
        let mut g = KernelGrads::zeros(cur.len(), cur.sh_degree());
        b.smooth = e_smooth_grad(cur, prev, graph, w, Some(&mut g))?;
        grad.add_scaled(&g, ls);
    }
    if lc > T::zero() {
        for (cam, target) in views.cameras.iter().zip(views.targets) {
            let (l, g) = e_color_grad(&cur.kernels, cam, target, raster)?;
            b.color += l;
            grad.add_scaled(&g, lc);
        }
    }
    b.total = lt * b.temp + ls * b.smooth + lc * b.color;
    Ok((b, grad))
}
