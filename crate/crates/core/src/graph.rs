//! Coarse embedded-deformation (ED) graph, fine Gaussian graph, dual-quaternion
//! blending and keyframe warping.

use std::collections::{BTreeMap, BTreeSet};

use arrayvec::ArrayVec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dq_to_rigid, rot_of, DualQuaternion, KnnIndex, Quaternion, Vec3};
use crate::kernel::{FrameState, GaussianKernel};
use crate::scalar::Real;

/// Kernel-to-kernel neighbourhood size of the Gaussian graph.
pub const KERNEL_NEIGHBORS: usize = 16;
/// ED nodes bound to each kernel.
pub const ED_BINDINGS: usize = 8;
/// Nearest nodes linked by ED edges before symmetrisation.
pub const ED_EDGE_K: usize = 4;
/// Blends whose real part falls below this norm are rejected.
pub const DQB_MIN_NORM: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EDNode<T> {
    /// Position in key space.
    pub x: Vec3<T>,
    /// Current motion estimate.
    pub dq: DualQuaternion<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EDGraph<T> {
    pub nodes: Vec<EDNode<T>>,
    pub node_radius: T,
    /// Symmetric adjacency, each list sorted ascending.
    pub edges: Vec<Vec<usize>>,
}

impl<T: Real> EDGraph<T> {
    /// Graph over fixed node positions with identity motion and 4-NN edges.
    pub fn from_positions(positions: Vec<Vec3<T>>, node_radius: T) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Empty("ed node positions"));
        }
        if !(node_radius > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "node radius must be positive, got {node_radius}"
            )));
        }
        let edges = symmetric_knn_edges(&positions, ED_EDGE_K)?;
        Ok(Self {
            nodes: positions
                .into_iter()
                .map(|x| EDNode {
                    x,
                    dq: DualQuaternion::identity(),
                })
                .collect(),
            node_radius,
            edges,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3<T>> {
        self.nodes.iter().map(|n| n.x).collect()
    }

    pub fn node_index(&self) -> Result<KnnIndex<T>> {
        KnnIndex::new(self.positions())
    }

    pub fn motions(&self) -> Vec<DualQuaternion<T>> {
        self.nodes.iter().map(|n| n.dq).collect()
    }

    /// Same nodes and edges with new per-node motions.
    pub fn with_motions(&self, motions: &[DualQuaternion<T>]) -> Result<Self> {
        if motions.len() != self.nodes.len() {
            return Err(Error::LengthMismatch {
                what: "ed motions",
                expected: self.nodes.len(),
                got: motions.len(),
            });
        }
        let mut g = self.clone();
        for (n, dq) in g.nodes.iter_mut().zip(motions) {
            n.dq = *dq;
        }
        Ok(g)
    }

    /// Directed edge count (each undirected edge counted twice).
    pub fn directed_edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn cast<U: Real>(&self) -> EDGraph<U> {
        EDGraph {
            nodes: self
                .nodes
                .iter()
                .map(|n| EDNode {
                    x: n.x.cast(),
                    dq: n.dq.cast(),
                })
                .collect(),
            node_radius: U::c(self.node_radius.to_f64_lossy()),
            edges: self.edges.clone(),
        }
    }
}

fn symmetric_knn_edges<T: Real>(positions: &[Vec3<T>], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = positions.len();
    let k = k.min(n.saturating_sub(1));
    let mut sets = vec![BTreeSet::new(); n];
    if k > 0 {
        let index = KnnIndex::from_slice(positions)?;
        for (i, p) in positions.iter().enumerate() {
            for nb in index.knn_filtered(*p, k, |j| j != i)? {
                sets[i].insert(nb.index);
                sets[nb.index].insert(i);
            }
        }
    }
    Ok(sets.into_iter().map(|s| s.into_iter().collect()).collect())
}

/// Voxel-grid downsampling: one node at the centroid of each occupied cell of
/// size `spacing`, cells anchored at the bounding-box minimum.
pub fn sample_ed_nodes<T: Real>(points: &[Vec3<T>], spacing: T) -> Result<EDGraph<T>> {
    if points.is_empty() {
        return Err(Error::Empty("ed sampling points"));
    }
    if !(spacing > T::zero()) || !spacing.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ed spacing must be positive, got {spacing}"
        )));
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            what: "ed sampling point",
            index: i,
        });
    }
    let origin = crate::kernel::bounds(points.iter().copied())
        .expect("non-empty")
        .0;
    let mut cells: BTreeMap<[i64; 3], (Vec3<T>, usize)> = BTreeMap::new();
    for p in points {
        let key = voxel_key(*p, origin, spacing);
        let e = cells.entry(key).or_insert((Vec3::zero(), 0));
        e.0 += *p;
        e.1 += 1;
    }
    let centroids = cells
        .into_values()
        .map(|(sum, n)| sum * (T::one() / T::from_usize_lossy(n)))
        .collect();
    EDGraph::from_positions(centroids, spacing)
}

pub(crate) fn voxel_key<T: Real>(p: Vec3<T>, origin: Vec3<T>, spacing: T) -> [i64; 3] {
    let d = (p - origin) * (T::one() / spacing);
    [
        d.x.floor().to_i64().unwrap_or(0),
        d.y.floor().to_i64().unwrap_or(0),
        d.z.floor().to_i64().unwrap_or(0),
    ]
}

/// Default ED spacing: 5% of the bounding-box diagonal.
pub fn default_ed_spacing<T: Real>(points: &[Vec3<T>]) -> T {
    let diag = crate::kernel::bounds(points.iter().copied())
        .map_or(T::one(), |(lo, hi)| (hi - lo).norm());
    if diag > T::zero() {
        diag * T::c(0.05)
    } else {
        T::one()
    }
}

/// Unnormalised influence of a node on `v`: `exp(−‖v − x‖² / (2 r²))`.
#[inline]
pub fn influence_weight<T: Real>(node_x: Vec3<T>, v: Vec3<T>, radius: T) -> T {
    (-(v - node_x).norm_sq() / (T::two() * radius * radius)).exp()
}

/// A kernel's ED nodes and normalised blend weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Binding<T> {
    nodes: ArrayVec<usize, ED_BINDINGS>,
    weights: ArrayVec<T, ED_BINDINGS>,
}

impl<T: Real> Binding<T> {
    /// Validates distinct indices and non-negative weights summing to one.
    pub fn new(nodes: &[usize], weights: &[T]) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() || nodes.len() > ED_BINDINGS {
            return Err(Error::InvalidParameter(format!(
                "binding needs 1..={ED_BINDINGS} nodes with matching weights, got {} / {}",
                nodes.len(),
                weights.len()
            )));
        }
        let distinct: BTreeSet<_> = nodes.iter().collect();
        if distinct.len() != nodes.len() {
            return Err(Error::InvalidParameter("binding node ids repeat".into()));
        }
        let sum: T = weights.iter().copied().sum();
        if weights.iter().any(|w| !(*w >= T::zero())) || (sum - T::one()).abs() > T::c(1e-6) {
            return Err(Error::InvalidParameter(format!(
                "binding weights must be non-negative and sum to 1, sum = {sum}"
            )));
        }
        Ok(Self {
            nodes: nodes.iter().copied().collect(),
            weights: weights.iter().copied().collect(),
        })
    }

    #[inline]
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    #[inline]
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Binds `p` to its `ED_BINDINGS` nearest nodes (fewer if the graph is smaller).
pub fn bind_point<T: Real>(index: &KnnIndex<T>, p: Vec3<T>, radius: T) -> Result<Binding<T>> {
    let k = ED_BINDINGS.min(index.len());
    let nbs = index.knn(p, k)?;
    let nodes_pos = index.points();
    let mut weights: ArrayVec<T, ED_BINDINGS> = nbs
        .iter()
        .map(|nb| influence_weight(nodes_pos[nb.index], p, radius))
        .collect();
    let mut sum: T = weights.iter().copied().sum();
    if !(sum >= T::min_positive_value()) || !sum.is_finite() {
        // Far from every node: weights relative to the nearest avoid underflow.
        let d0 = nbs[0].distance * nbs[0].distance;
        let two_r2 = T::two() * radius * radius;
        for (w, nb) in weights.iter_mut().zip(&nbs) {
            *w = (-(nb.distance * nb.distance - d0) / two_r2).exp();
        }
        sum = weights.iter().copied().sum();
    }
    let inv = T::one() / sum;
    for w in weights.iter_mut() {
        *w *= inv;
    }
    Ok(Binding {
        nodes: nbs.iter().map(|n| n.index).collect(),
        weights,
    })
}

/// Dual-quaternion blend of the bound node motions, sign-aligned to the first
/// node, then normalised.
pub fn dqb<T: Real>(binding: &Binding<T>, graph: &EDGraph<T>) -> Result<DualQuaternion<T>> {
    let mut acc = DualQuaternion::zero();
    let mut pivot: Option<Quaternion<T>> = None;
    for (i, w) in binding.iter() {
        let node = graph.nodes.get(i).ok_or_else(|| {
            Error::InvalidParameter(format!("binding refers to node {i} of {}", graph.len()))
        })?;
        let mut dq = node.dq;
        match pivot {
            None => pivot = Some(dq.real),
            Some(p) => {
                if dq.real.dot(p) < T::zero() {
                    dq = dq.neg();
                }
            }
        }
        acc = acc.add(&dq.scale(w));
    }
    let norm = acc.real.norm();
    if !(norm >= T::c(DQB_MIN_NORM)) {
        return Err(Error::DegenerateBlend {
            norm: norm.to_f64_lossy(),
        });
    }
    acc.normalized()
}

/// Position warped by the blended motion at `p`.
pub fn warp_point<T: Real>(binding: &Binding<T>, graph: &EDGraph<T>, p: Vec3<T>) -> Result<Vec3<T>> {
    let dq = dqb(binding, graph)?;
    Ok(dq_to_rigid(&dq)?.apply(p))
}

/// Warps a keyframe kernel: `p′ = SE3(DQB(p))·p`, `q′ = ROT(DQB(p)) ⊗ q`.
pub fn warp_kernel<T: Real>(
    kernel: &GaussianKernel<T>,
    binding: &Binding<T>,
    graph: &EDGraph<T>,
) -> Result<(Vec3<T>, Quaternion<T>)> {
    let dq = dqb(binding, graph)?;
    let p = dq_to_rigid(&dq)?.apply(kernel.position);
    // No renormalisation: an identity blend must reproduce `q` to roundoff.
    let q = rot_of(&dq)? * kernel.rotation;
    Ok((p, q))
}

/// Fine graph built once at the keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGraph<T> {
    /// Per kernel, the 16 nearest other kernels at the keyframe.
    pub kernel_neighbors: Vec<[u32; KERNEL_NEIGHBORS]>,
    pub bindings: Vec<Binding<T>>,
}

impl<T: Real> GaussianGraph<T> {
    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

pub fn build_gaussian_graph<T: Real>(
    kernels: &[GaussianKernel<T>],
    ed: &EDGraph<T>,
) -> Result<GaussianGraph<T>> {
    if kernels.len() < KERNEL_NEIGHBORS + 1 || ed.len() < ED_BINDINGS {
        return Err(Error::GraphTooSmall {
            kernels: kernels.len(),
            nodes: ed.len(),
            need_kernels: KERNEL_NEIGHBORS + 1,
            need_nodes: ED_BINDINGS,
        });
    }
    let positions: Vec<Vec3<T>> = kernels.iter().map(|k| k.position).collect();
    let kernel_index = KnnIndex::from_slice(&positions)?;
    let node_index = ed.node_index()?;
    let result: Result<Vec<_>> = positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nbs = kernel_index.knn_filtered(*p, KERNEL_NEIGHBORS, |j| j != i)?;
            let mut ids = [0u32; KERNEL_NEIGHBORS];
            for (slot, nb) in ids.iter_mut().zip(&nbs) {
                *slot = nb.index as u32;
            }
            let b = bind_point(&node_index, *p, ed.node_radius)?;
            Ok((ids, b))
        })
        .collect();
    let (kernel_neighbors, bindings) = result?.into_iter().unzip();
    Ok(GaussianGraph {
        kernel_neighbors,
        bindings,
    })
}

/// Bindings only, for callers that do not need kernel neighbourhoods.
pub fn bind_points<T: Real>(points: &[Vec3<T>], ed: &EDGraph<T>) -> Result<Vec<Binding<T>>> {
    let index = ed.node_index()?;
    points
        .par_iter()
        .map(|p| bind_point(&index, *p, ed.node_radius))
        .collect()
}

/// Warps every kernel of `key` with the motion carried by `ed`. Appearance is copied.
pub fn warp_frame<T: Real>(
    key: &FrameState<T>,
    bindings: &[Binding<T>],
    ed: &EDGraph<T>,
    frame: usize,
) -> Result<FrameState<T>> {
    if bindings.len() != key.len() {
        return Err(Error::LengthMismatch {
            what: "bindings",
            expected: key.len(),
            got: bindings.len(),
        });
    }
    let kernels: Result<Vec<_>> = key
        .kernels
        .par_iter()
        .zip(bindings.par_iter())
        .map(|(k, b)| {
            let (p, q) = warp_kernel(k, b, ed)?;
            let mut out = k.clone();
            out.position = p;
            out.rotation = q;
            Ok(out)
        })
        .collect();
    Ok(FrameState::new(frame, kernels?))
}

/// Warped positions only.
pub fn warp_positions<T: Real>(
    points: &[Vec3<T>],
    bindings: &[Binding<T>],
    ed: &EDGraph<T>,
) -> Result<Vec<Vec3<T>>> {
    points
        .par_iter()
        .zip(bindings.par_iter())
        .map(|(p, b)| warp_point(b, ed, *p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{dq_from_rigid, RigidTransform, SHCoefficients};

    fn kernel_at(p: Vec3<f64>) -> GaussianKernel<f64> {
        GaussianKernel {
            position: p,
            rotation: Quaternion::identity(),
            log_scale: Vec3::splat(-3.0),
            opacity_logit: 2.0,
            sh: SHCoefficients::zeros(0).unwrap(),
        }
    }

    #[test]
    fn single_point_single_node() {
        let g = sample_ed_nodes(&[Vec3::new(0.3, 0.2, 0.1)], 0.5).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.nodes[0].x, Vec3::new(0.3, 0.2, 0.1));
        assert!(g.edges[0].is_empty());
        assert_eq!(g.nodes[0].dq, DualQuaternion::identity());
    }

    #[test]
    fn empty_sampling_rejected() {
        assert!(sample_ed_nodes::<f64>(&[], 0.1).is_err());
    }

    #[test]
    fn two_clusters_are_connected() {
        let s = 0.1;
        let mut pts = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.01;
            pts.push(Vec3::new(t, 0.0, 0.0));
            pts.push(Vec3::new(10.0 * s + t, 0.0, 0.0));
        }
        let g = sample_ed_nodes(&pts, s).unwrap();
        assert!(g.len() >= 2);
        assert!(g.edges.iter().all(|e| !e.is_empty()));
        for (i, e) in g.edges.iter().enumerate() {
            for &j in e {
                assert!(g.edges[j].contains(&i), "edge {i}-{j} not symmetric");
            }
        }
    }

    #[test]
    fn influence_weight_values() {
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(influence_weight(x, x, 0.5), 1.0);
        let v = x + Vec3::new(0.5, 0.0, 0.0);
        assert!((influence_weight(x, v, 0.5) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn equidistant_nodes_get_equal_weights() {
        let mut pts = Vec::new();
        for sx in [-1.0f64, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    pts.push(Vec3::new(sx, sy, sz));
                }
            }
        }
        let g = EDGraph::from_positions(pts, 1.0).unwrap();
        let b = bind_point(&g.node_index().unwrap(), Vec3::zero(), g.node_radius).unwrap();
        for w in b.weights() {
            assert!((w - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn dqb_of_shared_transform_is_that_transform() {
        let t = RigidTransform::from_quat(
            Quaternion::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.7),
            Vec3::new(0.3, -0.2, 1.0),
        )
        .unwrap();
        let dq = dq_from_rigid(&t).unwrap();
        let pts: Vec<_> = (0..8).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let mut g = EDGraph::from_positions(pts, 1.0).unwrap();
        for n in &mut g.nodes {
            n.dq = dq;
        }
        let b = bind_point(&g.node_index().unwrap(), Vec3::new(3.2, 0.1, 0.0), 1.0).unwrap();
        let out = dqb(&b, &g).unwrap();
        assert!((out.real - dq.real).norm() < 1e-12);
        assert!((out.dual - dq.dual).norm() < 1e-12);
    }

    #[test]
    fn dqb_symmetric_rotations_cancel() {
        let z = Vec3::new(0.0, 0.0, 1.0);
        let a = 10f64.to_radians();
        let mut g = EDGraph::from_positions(vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.0)], 1.0).unwrap();
        g.nodes[0].dq = DualQuaternion::from_rotation_translation(Quaternion::from_axis_angle(z, a), Vec3::zero());
        g.nodes[1].dq = DualQuaternion::from_rotation_translation(Quaternion::from_axis_angle(z, -a), Vec3::zero());
        let b = Binding::new(&[0, 1], &[0.5, 0.5]).unwrap();
        let out = dqb(&b, &g).unwrap();
        assert!((out.real - Quaternion::identity()).norm() < 1e-6);
        assert!(out.dual.norm() < 1e-6);
    }

    #[test]
    fn dqb_sign_flip_invariance() {
        let mut g = EDGraph::from_positions(vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.0)], 1.0).unwrap();
        g.nodes[0].dq = DualQuaternion::from_rotation_translation(
            Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.4),
            Vec3::new(0.1, 0.0, 0.0),
        );
        g.nodes[1].dq = DualQuaternion::from_rotation_translation(
            Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.2),
            Vec3::new(0.0, 0.3, 0.0),
        );
        let b = Binding::new(&[0, 1], &[0.3, 0.7]).unwrap();
        let base = dqb(&b, &g).unwrap();
        let mut flipped = g.clone();
        flipped.nodes[1].dq = flipped.nodes[1].dq.neg();
        let out = dqb(&b, &flipped).unwrap();
        assert!((out.real - base.real).norm() < 1e-15);
        let mut flipped0 = g.clone();
        flipped0.nodes[0].dq = flipped0.nodes[0].dq.neg();
        let out0 = dqb(&b, &flipped0).unwrap();
        // Flipping the pivot flips the whole blend, which is the same rigid motion.
        let r0 = dq_to_rigid(&out0).unwrap();
        let rb = dq_to_rigid(&base).unwrap();
        assert!(r0.rotation.max_abs_diff(&rb.rotation) < 1e-14);
    }

    #[test]
    fn degenerate_blend_rejected() {
        let mut g = EDGraph::from_positions(vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.0)], 1.0).unwrap();
        // q and −q encode the same motion; sign alignment keeps the blend valid.
        g.nodes[1].dq = g.nodes[1].dq.neg();
        let b = Binding::new(&[0, 1], &[0.5, 0.5]).unwrap();
        assert!((dqb(&b, &g).unwrap().real - Quaternion::identity()).norm() < 1e-15);
        let zero = Binding {
            nodes: [0usize].into_iter().collect(),
            weights: [0.0f64].into_iter().collect(),
        };
        assert!(matches!(dqb(&zero, &g), Err(Error::DegenerateBlend { .. })));
    }

    #[test]
    fn identity_graph_warp_is_noop() {
        let pts: Vec<_> = (0..8).map(|i| Vec3::new(i as f64 * 0.3, 0.1, 0.0)).collect();
        let g = EDGraph::from_positions(pts, 0.3).unwrap();
        let k = kernel_at(Vec3::new(0.4, 0.2, 0.0));
        let b = bind_point(&g.node_index().unwrap(), k.position, g.node_radius).unwrap();
        let (p, q) = warp_kernel(&k, &b, &g).unwrap();
        assert!((p - k.position).max_abs() < 1e-15);
        assert!((q - k.rotation).norm() < 1e-15);
    }

    #[test]
    fn seventeen_kernels_graph() {
        let ks: Vec<_> = (0..17).map(|i| kernel_at(Vec3::new(i as f64, (i * i) as f64 * 0.1, 0.0))).collect();
        let nodes: Vec<_> = (0..8).map(|i| Vec3::new(2.0 * i as f64, 0.0, 0.0)).collect();
        let ed = EDGraph::from_positions(nodes, 2.0).unwrap();
        let gg = build_gaussian_graph(&ks, &ed).unwrap();
        for (i, nb) in gg.kernel_neighbors.iter().enumerate() {
            assert_eq!(nb.len(), 16);
            assert!(nb.iter().all(|&j| j as usize != i));
        }
        assert!(matches!(
            build_gaussian_graph(&ks[..16], &ed),
            Err(Error::GraphTooSmall { kernels: 16, .. })
        ));
    }

    #[test]
    fn coincident_kernel_prefers_its_node() {
        let nodes: Vec<_> = (0..10).map(|i| Vec3::new(i as f64 * 0.5, 0.0, 0.0)).collect();
        let ed = EDGraph::from_positions(nodes, 0.5).unwrap();
        let b = bind_point(&ed.node_index().unwrap(), Vec3::new(1.5, 0.0, 0.0), 0.5).unwrap();
        let (best, _) = b
            .iter()
            .fold((usize::MAX, -1.0), |acc, (i, w)| if w > acc.1 { (i, w) } else { acc });
        assert_eq!(best, 3);
        let w = b.weights();
        assert!(w.windows(2).all(|p| p[0] >= p[1]));
    }
}
