//! Non-rigid tracking of ED-node motion and key-volume segmentation.
//!
//! The tracking energy is `λ_data·E_data + λ_reg·E_reg`. `E_data` measures
//! how far warped key-space points land from their targets (point-to-point,
//! or point-to-plane when target normals are given); `E_reg` is the
//! as-rigid-as-possible term over ED edges. The solver is Levenberg-damped
//! Gauss-Newton over a per-node twist: a rotation about the node position and
//! a translation.

mod sparse;

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dq_to_rigid, DualQuaternion, KnnIndex, Mat3, Quaternion, RigidTransform, Vec3};
use crate::graph::{bind_points, dqb, Binding, EDGraph};
use crate::scalar::Real;
use sparse::{Block, BlockSparse};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet<T> {
    /// Key-space points.
    pub src: Vec<Vec3<T>>,
    /// Target-frame points. In ICP mode this is an unordered target cloud.
    pub tgt: Vec<Vec3<T>>,
    /// Optional target normals (point-to-plane data term).
    pub normals: Option<Vec<Vec3<T>>>,
}

impl<T: Real> CorrespondenceSet<T> {
    pub fn new(src: Vec<Vec3<T>>, tgt: Vec<Vec3<T>>) -> Result<Self> {
        let c = Self {
            src,
            tgt,
            normals: None,
        };
        c.validate(true)?;
        Ok(c)
    }

    pub fn with_normals(mut self, normals: Vec<Vec3<T>>) -> Result<Self> {
        self.normals = Some(normals);
        self.validate(true)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn validate(&self, paired: bool) -> Result<()> {
        if paired && self.src.len() != self.tgt.len() {
            return Err(Error::LengthMismatch {
                what: "correspondence targets",
                expected: self.src.len(),
                got: self.tgt.len(),
            });
        }
        if let Some(n) = &self.normals {
            if n.len() != self.tgt.len() {
                return Err(Error::LengthMismatch {
                    what: "correspondence normals",
                    expected: self.tgt.len(),
                    got: n.len(),
                });
            }
        }
        for (what, pts) in [("correspondence source", &self.src), ("correspondence target", &self.tgt)] {
            if let Some(i) = pts.iter().position(|p| !p.is_finite()) {
                return Err(Error::NonFinite { what, index: i });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorrespondenceMode {
    /// Correspondences are supplied and fixed.
    #[default]
    Given,
    /// Targets are re-paired to the nearest target point each outer iteration.
    NearestNeighborIcp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    pub lambda_data: f64,
    pub lambda_reg: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub correspondence_mode: CorrespondenceMode,
    /// Outer re-pairing rounds in ICP mode.
    pub icp_iterations: usize,
    /// ICP pairing cutoff as a multiple of the ED node spacing.
    pub icp_cutoff_spacings: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            lambda_data: 1.0,
            lambda_reg: 1.0,
            max_iterations: 20,
            convergence_tol: 1e-6,
            correspondence_mode: CorrespondenceMode::Given,
            icp_iterations: 5,
            icp_cutoff_spacings: 2.0,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_data >= 0.0
            && self.lambda_reg >= 0.0
            && self.lambda_data + self.lambda_reg > 0.0
            && self.lambda_data.is_finite()
            && self.lambda_reg.is_finite();
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "tracking weights must be non-negative with positive sum (data {}, reg {})",
                self.lambda_data, self.lambda_reg
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    /// Accepted Gauss-Newton steps.
    pub iterations: usize,
    /// Total energy before the first step and after each accepted step.
    pub energies: Vec<f64>,
    pub converged: bool,
    /// RMS of final point-to-point residuals.
    pub residual_rms: f64,
    pub warnings: Vec<String>,
}

impl TrackReport {
    pub fn initial_energy(&self) -> f64 {
        self.energies.first().copied().unwrap_or(0.0)
    }

    pub fn final_energy(&self) -> f64 {
        self.energies.last().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct TrackResult<T> {
    pub graph: EDGraph<T>,
    pub report: TrackReport,
}

/// Data term with bindings computed from the graph's key-space node positions.
pub fn e_data<T: Real>(graph: &EDGraph<T>, corr: &CorrespondenceSet<T>) -> Result<T> {
    if corr.is_empty() {
        return Err(Error::Empty("correspondences"));
    }
    corr.validate(true)?;
    let bindings = bind_points(&corr.src, graph)?;
    data_energy(graph, corr, &bindings)
}

fn data_energy<T: Real>(
    graph: &EDGraph<T>,
    corr: &CorrespondenceSet<T>,
    bindings: &[Binding<T>],
) -> Result<T> {
    let mut e = T::zero();
    for (i, b) in bindings.iter().enumerate() {
        let w = dq_to_rigid(&dqb(b, graph)?)?.apply(corr.src[i]);
        let d = w - corr.tgt[i];
        e += match &corr.normals {
            Some(n) => {
                let r = n[i].dot(d);
                r * r
            }
            None => d.norm_sq(),
        };
    }
    Ok(e)
}

/// ARAP regulariser over directed ED edges: `Σ ‖T_i(x_j) − T_j(x_j)‖²`.
pub fn e_reg<T: Real>(graph: &EDGraph<T>) -> Result<T> {
    let transforms: Result<Vec<_>> = graph.nodes.iter().map(|n| dq_to_rigid(&n.dq)).collect();
    let transforms = transforms?;
    let mut e = T::zero();
    for (i, nbrs) in graph.edges.iter().enumerate() {
        for &j in nbrs {
            let xj = graph.nodes[j].x;
            e += (transforms[i].apply(xj) - transforms[j].apply(xj)).norm_sq();
        }
    }
    Ok(e)
}

/// Per-node solver state: `T(v) = R·(v − x) + c`.
#[derive(Clone, Copy)]
struct NodeState<T> {
    x: Vec3<T>,
    q: Quaternion<T>,
    c: Vec3<T>,
}

impl<T: Real> NodeState<T> {
    fn from_node(x: Vec3<T>, dq: &DualQuaternion<T>) -> Result<Self> {
        let u = dq.normalized()?;
        let q = u.real;
        let c = u.transform_point(x);
        Ok(Self { x, q, c })
    }

    fn to_dq(self) -> DualQuaternion<T> {
        let t = self.c - self.q.rotate(self.x);
        DualQuaternion::from_rotation_translation(self.q, t)
    }

    fn rotation(&self) -> Mat3<T> {
        self.q.to_rotation_unit()
    }

    fn stepped(&self, delta: &[T]) -> Self {
        let omega = Vec3::new(delta[0], delta[1], delta[2]);
        let tau = Vec3::new(delta[3], delta[4], delta[5]);
        let angle = omega.norm();
        let dq = if angle > T::zero() {
            Quaternion::from_axis_angle(omega, angle)
        } else {
            Quaternion::identity()
        };
        let q = (dq * self.q).normalized().unwrap_or(self.q);
        Self {
            x: self.x,
            q,
            c: self.c + tau,
        }
    }
}

struct Problem<'a, T> {
    graph: &'a EDGraph<T>,
    corr: &'a CorrespondenceSet<T>,
    bindings: Vec<Binding<T>>,
    lambda_data: T,
    lambda_reg: T,
}

impl<'a, T: Real> Problem<'a, T> {
    fn energy(&self, g: &EDGraph<T>) -> Result<T> {
        let d = if self.lambda_data > T::zero() {
            data_energy(g, self.corr, &self.bindings)?
        } else {
            T::zero()
        };
        let r = if self.lambda_reg > T::zero() {
            e_reg(g)?
        } else {
            T::zero()
        };
        Ok(self.lambda_data * d + self.lambda_reg * r)
    }

    fn pattern(&self) -> BTreeSet<(usize, usize)> {
        let mut pairs = BTreeSet::new();
        for b in &self.bindings {
            let nodes = b.nodes();
            for (a, &i) in nodes.iter().enumerate() {
                for &j in &nodes[a + 1..] {
                    pairs.insert((i.min(j), i.max(j)));
                }
            }
        }
        for (i, e) in self.graph.edges.iter().enumerate() {
            for &j in e {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
        pairs
    }

    /// Assembles `H = Σ λ JᵀJ` and `g = Σ λ Jᵀr` at `states`.
    fn assemble(
        &self,
        g: &EDGraph<T>,
        states: &[NodeState<T>],
        h: &mut BlockSparse<T>,
        grad: &mut [T],
    ) -> Result<()> {
        h.clear();
        grad.iter_mut().for_each(|v| *v = T::zero());
        let rots: Vec<Mat3<T>> = states.iter().map(NodeState::rotation).collect();
        if self.lambda_data > T::zero() {
            for (m, b) in self.bindings.iter().enumerate() {
                let s = self.corr.src[m];
                let warped = dq_to_rigid(&dqb(b, g)?)?.apply(s);
                let d = warped - self.corr.tgt[m];
                // Per-node 3×6 Jacobian rows, linear-blend approximation of DQB.
                let mut jac: arrayvec::ArrayVec<[[T; 6]; 3], 8> = arrayvec::ArrayVec::new();
                for (k, w) in b.iter() {
                    let a = rots[k] * (s - states[k].x);
                    jac.push(twist_jacobian(a, w));
                }
                match &self.corr.normals {
                    None => {
                        let r = [d.x, d.y, d.z];
                        self.accumulate(h, grad, b.nodes(), &jac, &r, self.lambda_data);
                    }
                    Some(normals) => {
                        let n = normals[m];
                        let proj: arrayvec::ArrayVec<[[T; 6]; 1], 8> = jac
                            .iter()
                            .map(|j| {
                                let mut row = [T::zero(); 6];
                                for c in 0..6 {
                                    row[c] = n.x * j[0][c] + n.y * j[1][c] + n.z * j[2][c];
                                }
                                [row]
                            })
                            .collect();
                        self.accumulate(h, grad, b.nodes(), &proj, &[n.dot(d)], self.lambda_data);
                    }
                }
            }
        }
        if self.lambda_reg > T::zero() {
            for (i, nbrs) in g.edges.iter().enumerate() {
                for &j in nbrs {
                    let xj = g.nodes[j].x;
                    let a = rots[i] * (xj - states[i].x);
                    let ti = a + states[i].c;
                    let tj = states[j].c;
                    let d = ti - tj;
                    let ji = twist_jacobian(a, T::one());
                    let mut jj = [[T::zero(); 6]; 3];
                    for r in 0..3 {
                        jj[r][3 + r] = -T::one();
                    }
                    self.accumulate(h, grad, &[i, j], &[ji, jj], &[d.x, d.y, d.z], self.lambda_reg);
                }
            }
        }
        Ok(())
    }

    fn accumulate<const R: usize>(
        &self,
        h: &mut BlockSparse<T>,
        grad: &mut [T],
        nodes: &[usize],
        jac: &[[[T; 6]; R]],
        r: &[T; R],
        weight: T,
    ) {
        for (a, &k) in nodes.iter().enumerate() {
            let jk = &jac[a];
            for c in 0..6 {
                let mut v = T::zero();
                for row in 0..R {
                    v += jk[row][c] * r[row];
                }
                grad[6 * k + c] += weight * v;
            }
            for (b, &l) in nodes.iter().enumerate() {
                let jl = &jac[b];
                let slot = h.slot(k, l);
                let blk: &mut Block<T> = h.block_mut(slot);
                for c1 in 0..6 {
                    for c2 in 0..6 {
                        let mut v = T::zero();
                        for row in 0..R {
                            v += jk[row][c1] * jl[row][c2];
                        }
                        blk[c1][c2] += weight * v;
                    }
                }
            }
        }
    }
}

/// `w·[−[a]×, I]`: derivative of `R(v−x)+c` under a left rotation increment
/// and a translation increment.
fn twist_jacobian<T: Real>(a: Vec3<T>, w: T) -> [[T; 6]; 3] {
    let s = Mat3::skew(a);
    let mut j = [[T::zero(); 6]; 3];
    for r in 0..3 {
        for c in 0..3 {
            j[r][c] = -s.m[r][c] * w;
        }
        j[r][3 + r] = w;
    }
    j
}

const MAX_DAMPING_RETRIES: usize = 8;

/// Levenberg-damped Gauss-Newton on the tracking energy.
pub fn solve_tracking<T: Real>(
    graph: &EDGraph<T>,
    corr: &CorrespondenceSet<T>,
    cfg: &TrackConfig,
) -> Result<TrackResult<T>> {
    cfg.validate()?;
    if corr.is_empty() {
        return Err(Error::Empty("correspondences"));
    }
    match cfg.correspondence_mode {
        CorrespondenceMode::Given => {
            corr.validate(true)?;
            solve_given(graph, corr, cfg)
        }
        CorrespondenceMode::NearestNeighborIcp => {
            corr.validate(false)?;
            solve_icp(graph, corr, cfg)
        }
    }
}

fn solve_given<T: Real>(
    graph: &EDGraph<T>,
    corr: &CorrespondenceSet<T>,
    cfg: &TrackConfig,
) -> Result<TrackResult<T>> {
    let bindings = bind_points(&corr.src, graph)?;
    let problem = Problem {
        graph,
        corr,
        bindings,
        lambda_data: T::c(cfg.lambda_data),
        lambda_reg: T::c(cfg.lambda_reg),
    };
    let mut report = TrackReport::default();
    if corr.len() < 3 * graph.len() {
        report.warnings.push(format!(
            "{} correspondences for {} nodes; at least {} recommended",
            corr.len(),
            graph.len(),
            3 * graph.len()
        ));
    }
    let n = graph.len();
    let mut states: Vec<NodeState<T>> = graph
        .nodes
        .iter()
        .map(|nd| NodeState::from_node(nd.x, &nd.dq))
        .collect::<Result<_>>()?;
    let mut current = graph.with_motions(&states.iter().map(|s| s.to_dq()).collect::<Vec<_>>())?;
    let mut energy = problem.energy(&current)?;
    report.energies.push(energy.to_f64_lossy());
    let mut h = BlockSparse::from_pattern(n, &problem.pattern());
    let mut grad = vec![T::zero(); 6 * n];
    let mut mu = T::c(1e-4);
    let tol = T::c(cfg.convergence_tol);

    for _ in 0..cfg.max_iterations {
        problem.assemble(&current, &states, &mut h, &mut grad)?;
        if grad.iter().all(|v| *v == T::zero()) {
            report.converged = true;
            break;
        }
        let rhs: Vec<T> = grad.iter().map(|v| -*v).collect();
        let mean_diag = {
            let mut s = T::zero();
            for i in 0..n {
                let d = h.diag(i);
                for r in 0..6 {
                    s += d[r][r];
                }
            }
            s / T::from_usize_lossy(6 * n)
        };
        let floor = mean_diag.max(T::min_positive_value()) * T::c(1e-6);
        let mut accepted = None;
        let mut solved_once = false;
        for _ in 0..=MAX_DAMPING_RETRIES {
            let extra: Vec<[T; 6]> = (0..n)
                .map(|i| {
                    let d = h.diag(i);
                    let mut e = [T::zero(); 6];
                    for r in 0..6 {
                        e[r] = mu * (d[r][r] + floor);
                    }
                    e
                })
                .collect();
            let Some(delta) = h.solve_pcg(&rhs, &extra, T::c(1e-12), 40 * 6 * n.max(1)) else {
                mu *= T::c(10.0);
                continue;
            };
            solved_once = true;
            let cand_states: Vec<NodeState<T>> = states
                .iter()
                .enumerate()
                .map(|(i, s)| s.stepped(&delta[6 * i..6 * i + 6]))
                .collect();
            let cand = current.with_motions(&cand_states.iter().map(|s| s.to_dq()).collect::<Vec<_>>())?;
            let e = problem.energy(&cand)?;
            if e.is_finite() && e <= energy {
                let step = delta.iter().fold(T::zero(), |m, v| m.max(v.abs()));
                accepted = Some((cand_states, cand, e, step));
                mu = (mu * T::c(0.1)).max(T::c(1e-12));
                break;
            }
            mu *= T::c(10.0);
        }
        if !solved_once {
            return Err(Error::SingularSystem {
                retries: MAX_DAMPING_RETRIES,
            });
        }
        let Some((s, g, e, step)) = accepted else {
            // No damped step lowers the energy: at a (local) minimum.
            report.converged = true;
            break;
        };
        states = s;
        current = g;
        energy = e;
        report.iterations += 1;
        report.energies.push(energy.to_f64_lossy());
        if step < tol {
            report.converged = true;
            break;
        }
    }
    report.residual_rms = residual_rms(&current, corr, &problem.bindings)?;
    Ok(TrackResult {
        graph: current,
        report,
    })
}

fn residual_rms<T: Real>(
    g: &EDGraph<T>,
    corr: &CorrespondenceSet<T>,
    bindings: &[Binding<T>],
) -> Result<f64> {
    if corr.is_empty() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for (i, b) in bindings.iter().enumerate() {
        let w = dq_to_rigid(&dqb(b, g)?)?.apply(corr.src[i]);
        s += (w - corr.tgt[i]).norm_sq().to_f64_lossy();
    }
    Ok((s / corr.len() as f64).sqrt())
}

fn solve_icp<T: Real>(
    graph: &EDGraph<T>,
    corr: &CorrespondenceSet<T>,
    cfg: &TrackConfig,
) -> Result<TrackResult<T>> {
    let target_index = KnnIndex::from_slice(&corr.tgt)?;
    let cutoff = graph.node_radius * T::c(cfg.icp_cutoff_spacings);
    let bindings = bind_points(&corr.src, graph)?;
    let mut current = graph.clone();
    let mut report = TrackReport::default();
    for _ in 0..cfg.icp_iterations.max(1) {
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        let mut normals = corr.normals.as_ref().map(|_| Vec::new());
        for (i, b) in bindings.iter().enumerate() {
            let w = dq_to_rigid(&dqb(b, &current)?)?.apply(corr.src[i]);
            let nb = target_index.knn(w, 1)?[0];
            if nb.distance <= cutoff {
                src.push(corr.src[i]);
                tgt.push(corr.tgt[nb.index]);
                if let (Some(out), Some(n)) = (normals.as_mut(), corr.normals.as_ref()) {
                    out.push(n[nb.index]);
                }
            }
        }
        if src.is_empty() {
            report.warnings.push("no correspondences within the ICP cutoff".into());
            break;
        }
        let pairs = CorrespondenceSet { src, tgt, normals };
        let inner = solve_given(&current, &pairs, cfg)?;
        let changed = inner.report.iterations > 0;
        current = inner.graph;
        report.iterations += inner.report.iterations;
        report.energies.extend(inner.report.energies);
        report.residual_rms = inner.report.residual_rms;
        report.warnings.extend(inner.report.warnings);
        if !changed {
            break;
        }
    }
    report.converged = true;
    Ok(TrackResult {
        graph: current,
        report,
    })
}

/// Keyframes partitioning `[0, frame_count)` into fixed-length key volumes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub keyframes: Vec<usize>,
    pub frame_count: usize,
    pub segment_length: usize,
}

impl SegmentPlan {
    pub fn segments(&self) -> Vec<Range<usize>> {
        self.keyframes
            .iter()
            .enumerate()
            .map(|(i, &k)| k..self.keyframes.get(i + 1).copied().unwrap_or(self.frame_count))
            .collect()
    }

    /// Segment containing `frame`.
    pub fn segment_of(&self, frame: usize) -> Option<Range<usize>> {
        self.segments().into_iter().find(|r| r.contains(&frame))
    }
}

pub fn plan_segments(frame_count: usize, segment_length: usize) -> Result<SegmentPlan> {
    if frame_count == 0 {
        return Err(Error::Empty("sequence has no frames"));
    }
    if segment_length == 0 {
        return Err(Error::InvalidParameter("segment length must be ≥ 1".into()));
    }
    Ok(SegmentPlan {
        keyframes: (0..frame_count).step_by(segment_length).collect(),
        frame_count,
        segment_length,
    })
}

/// Rigid transform recovered for a node, for inspecting tracking results.
pub fn node_transform<T: Real>(graph: &EDGraph<T>, i: usize) -> Result<RigidTransform<T>> {
    dq_to_rigid(&graph.nodes[i].dq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::dq_from_rigid;

    fn grid_graph(n: usize, spacing: f64) -> EDGraph<f64> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    pts.push(Vec3::new(i as f64, j as f64, k as f64) * spacing);
                }
            }
        }
        EDGraph::from_positions(pts, spacing).unwrap()
    }

    #[test]
    fn plan_examples() {
        let p = plan_segments(10, 4).unwrap();
        assert_eq!(p.keyframes, vec![0, 4, 8]);
        assert_eq!(p.segments(), vec![0..4, 4..8, 8..10]);
        assert_eq!(plan_segments(5, 10).unwrap().segments(), vec![0..5]);
        let one = plan_segments(1, 1).unwrap();
        assert_eq!(one.keyframes, vec![0]);
        assert_eq!(one.segments(), vec![0..1]);
        assert!(plan_segments(0, 3).is_err());
    }

    #[test]
    fn e_data_examples() {
        let g = grid_graph(2, 1.0);
        let p = vec![Vec3::new(0.2, 0.3, 0.4)];
        let same = CorrespondenceSet::new(p.clone(), p.clone()).unwrap();
        assert_eq!(e_data(&g, &same).unwrap(), 0.0);
        let off = CorrespondenceSet::new(p.clone(), vec![p[0] + Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!((e_data(&g, &off).unwrap() - 1.0).abs() < 1e-12);
        let empty = CorrespondenceSet::<f64> {
            src: vec![],
            tgt: vec![],
            normals: None,
        };
        assert!(e_data(&g, &empty).is_err());
    }

    #[test]
    fn e_data_zero_under_ground_truth_rigid() {
        let t = RigidTransform::from_quat(
            Quaternion::from_axis_angle(Vec3::new(0.2, 1.0, 0.3), 0.5),
            Vec3::new(0.1, -0.4, 0.2),
        )
        .unwrap();
        let dq = dq_from_rigid(&t).unwrap();
        let g = grid_graph(3, 0.5);
        let g = g.with_motions(&vec![dq; g.len()]).unwrap();
        let src: Vec<_> = (0..50).map(|i| Vec3::new(0.02 * i as f64, 0.5, 0.3)).collect();
        let tgt = src.iter().map(|p| t.apply(*p)).collect();
        let c = CorrespondenceSet::new(src, tgt).unwrap();
        assert!(e_data(&g, &c).unwrap() < 1e-8);
    }

    #[test]
    fn e_reg_examples() {
        let g = grid_graph(2, 1.0);
        assert_eq!(e_reg(&g).unwrap(), 0.0);
        let mut two = EDGraph::from_positions(vec![Vec3::zero(), Vec3::new(1.0f64, 0.0, 0.0)], 1.0).unwrap();
        two.nodes[1].dq = dq_from_rigid(&RigidTransform::translation(Vec3::new(1.0, 0.0, 0.0))).unwrap();
        assert!((e_reg(&two).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_problem_makes_no_change() {
        let g = grid_graph(3, 0.5);
        let src: Vec<_> = (0..100).map(|i| Vec3::new(0.01 * i as f64, 0.3, 0.7)).collect();
        let c = CorrespondenceSet::new(src.clone(), src).unwrap();
        let r = solve_tracking(&g, &c, &TrackConfig::default()).unwrap();
        assert_eq!(r.report.iterations, 0);
        for n in &r.graph.nodes {
            assert!((n.dq.real - Quaternion::identity()).norm() < 1e-12);
            assert!(n.dq.dual.norm() < 1e-12);
        }
    }

    #[test]
    fn point_to_plane_only_penalises_normal_offset() {
        let g = grid_graph(2, 1.0);
        let p = vec![Vec3::new(0.5, 0.5, 0.5)];
        let c = CorrespondenceSet::new(p.clone(), vec![p[0] + Vec3::new(0.3, 0.0, 2.0)])
            .unwrap()
            .with_normals(vec![Vec3::new(1.0, 0.0, 0.0)])
            .unwrap();
        assert!((e_data(&g, &c).unwrap() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn bad_weights_rejected() {
        let cfg = TrackConfig {
            lambda_data: 0.0,
            lambda_reg: 0.0,
            ..TrackConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn recovers_global_rigid_motion() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = grid_graph(3, 0.5);
        let t = RigidTransform::from_quat(
            Quaternion::from_axis_angle(Vec3::new(0.3, -0.5, 1.0), 0.6),
            Vec3::new(0.2, 0.1, -0.3),
        )
        .unwrap();
        let src: Vec<Vec3<f64>> = (0..500)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tgt = src.iter().map(|p| t.apply(*p)).collect();
        let c = CorrespondenceSet::new(src, tgt).unwrap();
        let r = solve_tracking(&g, &c, &TrackConfig::default()).unwrap();
        assert!(r.report.converged);
        for (k, n) in r.graph.nodes.iter().enumerate() {
            let got = node_transform(&r.graph, k).unwrap().apply(n.x);
            assert!((got - t.apply(n.x)).max_abs() < 1e-4, "node {k}");
        }
        assert!(r.report.energies.windows(2).all(|w| w[1] <= w[0]));
    }
}
