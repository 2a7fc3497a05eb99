//! Per-frame Adam optimisation of the total objective.

use serde::{Deserialize, Serialize};

use super::{total_energy, AdaptiveWeights, EnergyWeights, Views};
use crate::error::{Error, Result};
use crate::geom::{basis_count, Quaternion};
use crate::graph::GaussianGraph;
use crate::kernel::FrameState;
use crate::render::{KernelGrads, RasterConfig};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    /// Multiplied by the bounding-box diagonal of the initial positions.
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            sh_dc: 2.5e-3,
            sh_rest: 1.25e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub iterations: usize,
    pub learning_rates: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop once the best energy has not improved by `min_rel_improvement`
    /// for this many iterations; 0 disables early stopping.
    pub patience: usize,
    pub min_rel_improvement: f64,
    /// Zero the appearance step sizes (motion-only fine-tune).
    pub freeze_appearance: bool,
    /// Zero the motion step sizes.
    pub freeze_motion: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rates: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
            patience: 0,
            min_rel_improvement: 1e-4,
            freeze_appearance: false,
            freeze_motion: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    /// Total energy of every evaluated iterate, starting with the init.
    pub energies: Vec<f64>,
    /// Running minimum of `energies`.
    pub best_energies: Vec<f64>,
    pub best_iteration: usize,
    /// Adam steps taken.
    pub steps: usize,
    pub stopped_early: bool,
    pub best_color: f64,
    pub best_temp: f64,
    pub best_smooth: f64,
}

impl OptimizeReport {
    pub fn initial_energy(&self) -> f64 {
        self.energies.first().copied().unwrap_or(f64::NAN)
    }

    pub fn best_energy(&self) -> f64 {
        self.best_energies.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeResult<T> {
    pub state: FrameState<T>,
    pub report: OptimizeReport,
}

/// Flat parameter layout per kernel: p(3) q(4) s(3) σ(1) C(3·nb).
struct Layout {
    stride: usize,
    nb: usize,
}

impl Layout {
    fn new(degree: u8) -> Self {
        let nb = basis_count(degree);
        Self {
            stride: 11 + 3 * nb,
            nb,
        }
    }

    fn pack<T: Real>(&self, f: &FrameState<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(self.stride * f.len());
        for k in &f.kernels {
            out.extend_from_slice(&k.position.to_array());
            out.extend_from_slice(&k.rotation.to_array());
            out.extend_from_slice(&k.log_scale.to_array());
            out.push(k.opacity_logit);
            out.extend(k.sh.flat());
        }
        out
    }

    fn unpack<T: Real>(&self, x: &[T], f: &mut FrameState<T>) {
        for (k, c) in f.kernels.iter_mut().zip(x.chunks_exact(self.stride)) {
            k.position = crate::geom::Vec3::new(c[0], c[1], c[2]);
            k.rotation = Quaternion::new(c[3], c[4], c[5], c[6]);
            k.log_scale = crate::geom::Vec3::new(c[7], c[8], c[9]);
            k.opacity_logit = c[10];
            for (b, coef) in k.sh.coeffs_mut().iter_mut().enumerate() {
                *coef = [c[11 + 3 * b], c[12 + 3 * b], c[13 + 3 * b]];
            }
        }
    }

    fn pack_grad<T: Real>(&self, g: &KernelGrads<T>, out: &mut [T]) {
        for (i, c) in out.chunks_exact_mut(self.stride).enumerate() {
            c[..3].copy_from_slice(&g.position[i].to_array());
            c[3..7].copy_from_slice(&g.rotation[i]);
            c[7..10].copy_from_slice(&g.log_scale[i].to_array());
            c[10] = g.opacity[i];
            for (b, v) in g.sh_of(i).iter().enumerate() {
                c[11 + 3 * b..14 + 3 * b].copy_from_slice(v);
            }
        }
    }

    fn rates<T: Real>(&self, n: usize, lr: &LearningRates, extent: f64, cfg: &OptimizeConfig) -> Vec<T> {
        let motion = if cfg.freeze_motion { 0.0 } else { 1.0 };
        let app = if cfg.freeze_appearance { 0.0 } else { 1.0 };
        let mut one = Vec::with_capacity(self.stride);
        one.extend([lr.position * extent * motion; 3]);
        one.extend([lr.rotation * motion; 4]);
        one.extend([lr.log_scale * app; 3]);
        one.push(lr.opacity * app);
        one.extend([lr.sh_dc * app; 3]);
        one.extend(std::iter::repeat_n(lr.sh_rest * app, 3 * (self.nb - 1)));
        let one: Vec<T> = one.into_iter().map(T::c).collect();
        (0..n).flat_map(|_| one.iter().copied()).collect()
    }
}

/// Sequential per-frame optimisation from `init` (the warped keyframe) with
/// `prev` the previous optimised frame and `w` frozen adaptive weights.
/// Returns the lowest-energy iterate.
#[allow(clippy::too_many_arguments)]
pub fn optimize_frame<T: Real>(
    init: &FrameState<T>,
    prev: &FrameState<T>,
    graph: &GaussianGraph<T>,
    w: &AdaptiveWeights<T>,
    views: Views<'_, T>,
    weights: &EnergyWeights,
    raster: &RasterConfig,
    cfg: &OptimizeConfig,
) -> Result<OptimizeResult<T>> {
    weights.validate()?;
    init.check_finite()?;
    let layout = Layout::new(init.sh_degree());
    let n = init.len();
    let extent = init.extent().to_f64_lossy().max(f64::MIN_POSITIVE);
    let lr: Vec<T> = layout.rates(n, &cfg.learning_rates, extent, cfg);
    let mut x = layout.pack(init);
    let mut m = vec![T::zero(); x.len()];
    let mut v = vec![T::zero(); x.len()];
    let mut g = vec![T::zero(); x.len()];
    let (b1, b2, eps) = (T::c(cfg.beta1), T::c(cfg.beta2), T::c(cfg.epsilon));
    let mut state = init.clone();
    let mut best = init.clone();
    let mut report = OptimizeReport::default();
    let mut best_e = f64::INFINITY;
    let mut last_improvement = 0usize;
    let mut reference = f64::INFINITY;

    for it in 0..=cfg.iterations {
        let (parts, grad) = total_energy(&state, prev, graph, w, views, weights, raster)?;
        let e = parts.total.to_f64_lossy();
        if !e.is_finite() {
            let kernel = state
                .first_non_finite()
                .or_else(|| grad.first_non_finite())
                .unwrap_or(0);
            return Err(Error::NonFiniteEnergy { iteration: it, kernel });
        }
        report.energies.push(e);
        if e < best_e {
            best_e = e;
            best.clone_from(&state);
            report.best_iteration = it;
            report.best_color = parts.color.to_f64_lossy();
            report.best_temp = parts.temp.to_f64_lossy();
            report.best_smooth = parts.smooth.to_f64_lossy();
        }
        report.best_energies.push(best_e);
        if best_e < reference * (1.0 - cfg.min_rel_improvement) {
            reference = best_e;
            last_improvement = it;
        }
        if it == cfg.iterations {
            break;
        }
        if cfg.patience > 0 && it - last_improvement >= cfg.patience {
            report.stopped_early = true;
            break;
        }
        if let Some(k) = grad.first_non_finite() {
            return Err(Error::NonFiniteEnergy { iteration: it, kernel: k });
        }
        layout.pack_grad(&grad, &mut g);
        let step = it + 1;
        let bc1 = T::one() - b1.powi(step as i32);
        let bc2 = T::one() - b2.powi(step as i32);
        for k in 0..x.len() {
            if lr[k] == T::zero() {
                continue;
            }
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            x[k] -= lr[k] * mh / (vh.sqrt() + eps);
        }
        for c in x.chunks_exact_mut(layout.stride) {
            let q = Quaternion::new(c[3], c[4], c[5], c[6]);
            if let Ok(u) = q.normalized() {
                c[3..7].copy_from_slice(&u.to_array());
            }
        }
        layout.unpack(&x, &mut state);
        report.steps = step;
    }
    Ok(OptimizeResult { state: best, report })
}
