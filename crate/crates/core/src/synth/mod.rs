//! Synthetic ground truth: base scenes, analytic deformations, appearance
//! drift, camera rigs, rendered targets and exact correspondences.

mod field;

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use field::DeformationField;

use crate::energy::Region;
use crate::error::{Error, Result};
use crate::geom::{basis_count, rgb_to_dc, DualQuaternion, Mat3, Quaternion, SHCoefficients, Vec3};
use crate::graph::EDGraph;
use crate::kernel::{FrameState, GaussianKernel};
use crate::render::{rasterize, Camera, Image, RasterConfig};
use crate::track::CorrespondenceSet;

/// Reported for identical images instead of +∞.
pub const PSNR_SENTINEL: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// Radius 0.5 about the origin.
    Sphere,
    /// Radius 0.3, height 1.2 along y, capped.
    Cylinder,
    /// Body sphere (r 0.42) below a hand sphere (r 0.18) on the y axis.
    TwoLobe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub shape: Shape,
    pub kernel_count: usize,
    pub sh_degree: u8,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            shape: Shape::Cylinder,
            kernel_count: 2000,
            sh_degree: 3,
            seed: 7,
        }
    }
}

pub const SPHERE_RADIUS: f64 = 0.5;
const CYL_RADIUS: f64 = 0.3;
const CYL_HALF: f64 = 0.6;
const BODY: (f64, f64) = (0.42, -0.12);
const HAND: (f64, f64) = (0.18, 0.46);

fn unit_sphere(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let a = TAU * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * a.cos(), r * a.sin(), z)
}

/// Surface point, outward normal, region.
fn sample_surface(shape: Shape, rng: &mut ChaCha8Rng) -> (Vec3<f64>, Vec3<f64>, Region) {
    match shape {
        Shape::Sphere => {
            let n = unit_sphere(rng);
            (n * SPHERE_RADIUS, n, Region::Body)
        }
        Shape::Cylinder => {
            let side = TAU * CYL_RADIUS * 2.0 * CYL_HALF;
            let cap = PI * CYL_RADIUS * CYL_RADIUS;
            let u = rng.random::<f64>() * (side + 2.0 * cap);
            if u < side {
                let a = TAU * rng.random::<f64>();
                let y = (2.0 * rng.random::<f64>() - 1.0) * CYL_HALF;
                let n = Vec3::new(a.cos(), 0.0, a.sin());
                (Vec3::new(CYL_RADIUS * n.x, y, CYL_RADIUS * n.z), n, Region::Body)
            } else {
                let sgn = if u < side + cap { 1.0 } else { -1.0 };
                let a = TAU * rng.random::<f64>();
                let r = CYL_RADIUS * rng.random::<f64>().sqrt();
                (Vec3::new(r * a.cos(), sgn * CYL_HALF, r * a.sin()), Vec3::new(0.0, sgn, 0.0), Region::Body)
            }
        }
        Shape::TwoLobe => {
            let (ab, ah) = (BODY.0 * BODY.0, HAND.0 * HAND.0);
            let (r, cy, region) = if rng.random::<f64>() * (ab + ah) < ab {
                (BODY.0, BODY.1, Region::Body)
            } else {
                (HAND.0, HAND.1, Region::Hand)
            };
            let n = unit_sphere(rng);
            (Vec3::new(0.0, cy, 0.0) + n * r, n, region)
        }
    }
}

fn surface_area(shape: Shape) -> f64 {
    match shape {
        Shape::Sphere => 4.0 * PI * SPHERE_RADIUS * SPHERE_RADIUS,
        Shape::Cylinder => TAU * CYL_RADIUS * 2.0 * CYL_HALF + 2.0 * PI * CYL_RADIUS * CYL_RADIUS,
        Shape::TwoLobe => 4.0 * PI * (BODY.0 * BODY.0 + HAND.0 * HAND.0),
    }
}

/// Orthonormal frame whose third column is `n`.
fn tangent_frame(n: Vec3<f64>) -> Mat3<f64> {
    let helper = if n.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let t1 = n.cross(helper).normalized().expect("helper not parallel to n");
    let t2 = n.cross(t1);
    Mat3::from_cols(t1, t2, n)
}

/// Surface-sampled kernels with tangent-aligned flat scales, a smooth
/// DC-dominant colour pattern and opacity logits near +4.
pub fn make_base_scene(spec: &SceneSpec) -> Result<(FrameState<f64>, Vec<Region>)> {
    if spec.kernel_count < 100 {
        return Err(Error::InvalidParameter(format!(
            "base scene needs at least 100 kernels, got {}",
            spec.kernel_count
        )));
    }
    let nb = basis_count(spec.sh_degree);
    SHCoefficients::<f64>::zeros(spec.sh_degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spacing = (surface_area(spec.shape) / spec.kernel_count as f64).sqrt();
    let tangent = (0.6 * spacing).ln();
    let normal = (0.12 * spacing).ln();
    let phase: [f64; 3] = [TAU * rng.random::<f64>(), TAU * rng.random::<f64>(), TAU * rng.random::<f64>()];
    let mut labels = Vec::with_capacity(spec.kernel_count);
    let kernels = (0..spec.kernel_count)
        .map(|_| {
            let (p, n, region) = sample_surface(spec.shape, &mut rng);
            labels.push(region);
            let spin = Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), TAU * rng.random::<f64>());
            let rotation = Quaternion::from_rotation(&tangent_frame(n)) * spin;
            let jitter = |rng: &mut ChaCha8Rng| 0.1 * (rng.random::<f64>() - 0.5);
            let log_scale = Vec3::new(tangent + jitter(&mut rng), tangent + jitter(&mut rng), normal);
            let rgb = [
                0.5 + 0.3 * (4.0 * p.x + 3.0 * p.y + phase[0]).sin() + 0.04 * (rng.random::<f64>() - 0.5),
                0.5 + 0.3 * (5.0 * p.y - 2.0 * p.z + phase[1]).sin() + 0.04 * (rng.random::<f64>() - 0.5),
                0.5 + 0.3 * (3.0 * p.z + 4.0 * p.x + phase[2]).cos() + 0.04 * (rng.random::<f64>() - 0.5),
            ];
            let mut coeffs = vec![[0.0; 3]; nb];
            coeffs[0] = rgb_to_dc(rgb);
            for c in coeffs.iter_mut().skip(1) {
                *c = [0.0; 3].map(|_: f64| 0.04 * (rng.random::<f64>() - 0.5));
            }
            GaussianKernel {
                position: p,
                rotation,
                log_scale,
                opacity_logit: 4.0 + 0.5 * (rng.random::<f64>() - 0.5),
                sh: SHCoefficients::from_coeffs(spec.sh_degree, coeffs).expect("degree checked"),
            }
        })
        .collect();
    Ok((FrameState::new(0, kernels), labels))
}

/// Maps positions through `field` at frame `t` and composes rotations with
/// its local rotation. Appearance is copied.
pub fn apply_field(state: &FrameState<f64>, field: &DeformationField, t: usize) -> Result<FrameState<f64>> {
    field.validate()?;
    let tf = t as f64;
    let kernels: Result<Vec<_>> = state
        .kernels
        .par_iter()
        .map(|k| {
            let mut out = k.clone();
            out.position = field.map(k.position, tf);
            out.rotation = field.rotation(k.position, tf)? * k.rotation;
            Ok(out)
        })
        .collect();
    Ok(FrameState::new(t, kernels?))
}

/// Per-node rigid motions reproducing `field` at frame `t` to first order
/// (each node maps exactly).
pub fn field_node_motions(ed: &EDGraph<f64>, field: &DeformationField, t: usize) -> Result<Vec<DualQuaternion<f64>>> {
    ed.nodes.iter().map(|n| field.local_motion(n.x, t as f64)).collect()
}

/// Smooth sinusoidal appearance drift on a random subset of kernels, zero at
/// frame 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSpec {
    /// Amplitude on the opacity logit.
    pub opacity: f64,
    /// Amplitude on every DC channel.
    pub dc: f64,
    /// Period in frames.
    pub period: f64,
    /// Fraction of kernels that drift.
    pub fraction: f64,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            opacity: 0.0,
            dc: 0.0,
            period: 20.0,
            fraction: 1.0,
            seed: 11,
        }
    }
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && (0.0..=1.0).contains(&self.fraction) && self.opacity.is_finite() && self.dc.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid drift {self:?}")));
        }
        Ok(())
    }

    /// Per-kernel phase, `None` for kernels that do not drift.
    fn phases(&self, n: usize) -> Vec<Option<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..n)
            .map(|_| {
                let pick = rng.random::<f64>() < self.fraction;
                let phase = TAU * rng.random::<f64>();
                pick.then_some(phase)
            })
            .collect()
    }

    pub fn apply(&self, state: &mut FrameState<f64>, key: &FrameState<f64>, t: usize) {
        let w = TAU * t as f64 / self.period;
        for ((k, base), ph) in state.kernels.iter_mut().zip(&key.kernels).zip(self.phases(key.len())) {
            if let Some(ph) = ph {
                let s = (w + ph).sin() - ph.sin();
                k.opacity_logit = base.opacity_logit + self.opacity * s;
                let dc = base.sh.coeffs()[0];
                k.sh.coeffs_mut()[0] = dc.map(|c| c + self.dc * s);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigSpec {
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    /// Distance from the origin.
    pub radius: f64,
    /// Camera height above the x–z plane.
    pub elevation: f64,
    /// Vertical field of view, degrees.
    pub fov_deg: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            cameras: 4,
            width: 128,
            height: 128,
            radius: 2.6,
            elevation: 0.6,
            fov_deg: 32.0,
        }
    }
}

/// Cameras evenly spaced on a ring around the y axis, looking at the origin.
pub fn camera_ring(rig: &RigSpec) -> Result<Vec<Camera<f64>>> {
    if rig.cameras == 0 {
        return Err(Error::InvalidParameter("rig needs at least one camera".into()));
    }
    (0..rig.cameras)
        .map(|i| {
            let a = TAU * i as f64 / rig.cameras as f64 + 0.3;
            let eye = Vec3::new(rig.radius * a.cos(), rig.elevation, rig.radius * a.sin());
            Camera::look_at(
                eye,
                Vec3::zero(),
                Vec3::new(0.0, 1.0, 0.0),
                rig.fov_deg.to_radians(),
                rig.width,
                rig.height,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSpec {
    pub frames: usize,
    pub field: DeformationField,
    pub drift: Option<DriftSpec>,
    pub rig: RigSpec,
    pub raster: RasterConfig,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            frames: 30,
            field: DeformationField::bend_for(15.0, CYL_HALF, 30),
            drift: None,
            rig: RigSpec::default(),
            raster: RasterConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    /// Ground truth; frame 0 is the keyframe.
    pub frames: Vec<FrameState<f64>>,
    /// Keyframe position → frame position, per frame.
    pub correspondences: Vec<CorrespondenceSet<f64>>,
    pub cameras: Vec<Camera<f64>>,
    /// `targets[frame][camera]`.
    pub targets: Vec<Vec<Image<f64>>>,
    pub labels: Vec<Region>,
}

pub fn make_sequence(base: &FrameState<f64>, labels: &[Region], spec: &SequenceSpec) -> Result<SyntheticSequence> {
    if spec.frames == 0 {
        return Err(Error::InvalidParameter("sequence needs at least one frame".into()));
    }
    if labels.len() != base.len() {
        return Err(Error::LengthMismatch {
            what: "region labels",
            expected: base.len(),
            got: labels.len(),
        });
    }
    spec.field.validate()?;
    if let Some(d) = &spec.drift {
        d.validate()?;
    }
    let cameras = camera_ring(&spec.rig)?;
    let frames: Result<Vec<_>> = (0..spec.frames)
        .into_par_iter()
        .map(|t| {
            let mut f = apply_field(base, &spec.field, t)?;
            if let Some(d) = &spec.drift {
                d.apply(&mut f, base, t);
            }
            Ok(f)
        })
        .collect();
    let frames = frames?;
    let correspondences: Result<Vec<_>> = frames
        .iter()
        .map(|f| CorrespondenceSet::new(base.positions(), f.positions()))
        .collect();
    let targets: Result<Vec<Vec<_>>> = frames
        .par_iter()
        .map(|f| cameras.iter().map(|c| rasterize(&f.kernels, c, &spec.raster)).collect())
        .collect();
    Ok(SyntheticSequence {
        frames,
        correspondences: correspondences?,
        cameras,
        targets: targets?,
        labels: labels.to_vec(),
    })
}

/// `10·log10(1/MSE)` over pixels clamped to [0, 1]; identical images give
/// [`PSNR_SENTINEL`], and values are capped there.
pub fn psnr<T: crate::Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::SizeMismatch {
            expected: (a.width, a.height),
            got: (b.width, b.height),
        });
    }
    if a.data.is_empty() {
        return Err(Error::Empty("image"));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x.to_f64_lossy().clamp(0.0, 1.0) - y.to_f64_lossy().clamp(0.0, 1.0);
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_SENTINEL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{bind_points, default_ed_spacing, sample_ed_nodes, warp_frame};

    fn scene(shape: Shape, n: usize) -> (FrameState<f64>, Vec<Region>) {
        make_base_scene(&SceneSpec {
            shape,
            kernel_count: n,
            sh_degree: 1,
            seed: 7,
        })
        .unwrap()
    }

    #[test]
    fn sphere_kernels_lie_on_the_surface() {
        let (s, labels) = scene(Shape::Sphere, 1000);
        assert_eq!(s.len(), 1000);
        assert!(s.kernels.iter().all(|k| (k.position.norm() - SPHERE_RADIUS).abs() < 0.01 * SPHERE_RADIUS));
        assert!(labels.iter().all(|&r| r == Region::Body));
    }

    #[test]
    fn scenes_are_seed_deterministic() {
        let spec = SceneSpec::default();
        assert_eq!(make_base_scene(&spec).unwrap().0, make_base_scene(&spec).unwrap().0);
        let other = SceneSpec { seed: 8, ..spec.clone() };
        assert_ne!(make_base_scene(&spec).unwrap().0, make_base_scene(&other).unwrap().0);
        assert!(make_base_scene(&SceneSpec { kernel_count: 50, ..spec }).is_err());
    }

    #[test]
    fn kernels_are_flat_and_tangent() {
        let (s, _) = scene(Shape::Sphere, 500);
        for k in &s.kernels {
            let n = k.rotation.rotate(Vec3::new(0.0, 0.0, 1.0));
            assert!((n.dot(k.position.normalized().unwrap()) - 1.0).abs() < 1e-9);
            assert!(k.log_scale.z < k.log_scale.x - 1.0);
        }
    }

    #[test]
    fn two_lobe_labels_roughly_follow_area() {
        let (_, labels) = scene(Shape::TwoLobe, 4000);
        let hands = labels.iter().filter(|&&r| r == Region::Hand).count() as f64 / 4000.0;
        let expect = HAND.0 * HAND.0 / (HAND.0 * HAND.0 + BODY.0 * BODY.0);
        assert!((hands - expect).abs() < 0.03, "{hands} vs {expect}");
    }

    #[test]
    fn rigid_field_commutes_with_ed_warp() {
        let (s, _) = scene(Shape::Cylinder, 800);
        let field = DeformationField::Rigid {
            axis: [0.2, 1.0, 0.1],
            center: [0.0, 0.1, 0.0],
            angular_rate: 0.04,
            velocity: [0.01, 0.0, -0.01],
        };
        let ed = sample_ed_nodes(&s.positions(), default_ed_spacing(&s.positions())).unwrap();
        let b = bind_points(&s.positions(), &ed).unwrap();
        let ed_t = ed.with_motions(&field_node_motions(&ed, &field, 9).unwrap()).unwrap();
        let warped = warp_frame(&s, &b, &ed_t, 9).unwrap();
        let truth = apply_field(&s, &field, 9).unwrap();
        for (a, b) in warped.kernels.iter().zip(&truth.kernels) {
            assert!((a.position - b.position).norm() < 1e-5);
            assert!(a.rotation.dot(b.rotation).abs() > 1.0 - 1e-10);
        }
    }

    #[test]
    fn bend_warp_tracks_the_analytic_field() {
        let (s, _) = scene(Shape::Cylinder, 1000);
        let field = DeformationField::bend_for(15.0, CYL_HALF, 30);
        let DeformationField::Bend { rate, .. } = field else { unreachable!() };
        let spacing = default_ed_spacing(&s.positions());
        let ed = sample_ed_nodes(&s.positions(), spacing).unwrap();
        let b = bind_points(&s.positions(), &ed).unwrap();
        let ed_t = ed.with_motions(&field_node_motions(&ed, &field, 29).unwrap()).unwrap();
        let warped = warp_frame(&s, &b, &ed_t, 29).unwrap();
        let truth = apply_field(&s, &field, 29).unwrap();
        let worst = warped
            .kernels
            .iter()
            .zip(&truth.kernels)
            .map(|(a, b)| (a.position - b.position).norm())
            .fold(0.0, f64::max);
        let bound = 2.0 * spacing * rate * 29.0;
        assert!(worst < bound, "{worst} vs {bound}");
    }

    #[test]
    fn zero_field_gives_identical_frames() {
        let (s, labels) = scene(Shape::Sphere, 200);
        let spec = SequenceSpec {
            frames: 3,
            field: DeformationField::Twist { rate: 0.0 },
            rig: RigSpec {
                cameras: 1,
                width: 16,
                height: 16,
                ..RigSpec::default()
            },
            ..SequenceSpec::default()
        };
        let seq = make_sequence(&s, &labels, &spec).unwrap();
        assert!(seq.frames.iter().all(|f| f.kernels == s.kernels));
        assert_eq!(seq.targets[0], seq.targets[2]);
    }

    #[test]
    fn single_frame_sequence_is_the_base_scene() {
        let (s, labels) = scene(Shape::Sphere, 200);
        let spec = SequenceSpec {
            frames: 1,
            rig: RigSpec {
                cameras: 2,
                width: 16,
                height: 16,
                ..RigSpec::default()
            },
            ..SequenceSpec::default()
        };
        let seq = make_sequence(&s, &labels, &spec).unwrap();
        assert_eq!(seq.frames.len(), 1);
        assert_eq!(seq.frames[0].kernels, s.kernels);
        assert_eq!(seq.targets[0].len(), 2);
    }

    #[test]
    fn drift_hits_only_the_chosen_fraction() {
        let (s, labels) = scene(Shape::Sphere, 1000);
        let spec = SequenceSpec {
            frames: 4,
            field: DeformationField::identity(),
            drift: Some(DriftSpec {
                opacity: 0.5,
                dc: 0.1,
                fraction: 0.2,
                ..DriftSpec::default()
            }),
            rig: RigSpec {
                cameras: 1,
                width: 8,
                height: 8,
                ..RigSpec::default()
            },
            ..SequenceSpec::default()
        };
        let seq = make_sequence(&s, &labels, &spec).unwrap();
        assert_eq!(seq.frames[0].kernels, s.kernels);
        let moved = seq.frames[3]
            .kernels
            .iter()
            .zip(&s.kernels)
            .filter(|(a, b)| a.opacity_logit != b.opacity_logit)
            .count();
        assert!((150..250).contains(&moved), "{moved}");
    }

    #[test]
    fn psnr_examples() {
        let a = Image::<f64>::filled(8, 8, [0.0; 3]);
        let b = Image::<f64>::filled(8, 8, [1.0; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_SENTINEL);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &Image::new(4, 8)).is_err());
        // Uniform noise of standard deviation 0.1 → MSE 0.01 → 20 dB.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = Image::<f64>::filled(128, 128, [0.5; 3]);
        let half = 0.1 * 3f64.sqrt();
        for v in &mut c.data {
            *v += half * (2.0 * rng.random::<f64>() - 1.0);
        }
        let p = psnr(&Image::filled(128, 128, [0.5; 3]), &c).unwrap();
        assert!((p - 20.0).abs() < 0.5, "{p}");
    }

    #[test]
    fn renders_see_the_object() {
        let (s, _) = scene(Shape::Cylinder, 2000);
        let cams = camera_ring(&RigSpec {
            width: 32,
            height: 32,
            ..RigSpec::default()
        })
        .unwrap();
        for c in &cams {
            let img = rasterize(&s.kernels, c, &RasterConfig::default()).unwrap();
            let lit = (0..img.pixel_count()).filter(|&i| img.data[3 * i..3 * i + 3].iter().any(|&v| v > 0.05)).count();
            let frac = lit as f64 / img.pixel_count() as f64;
            assert!((0.1..0.8).contains(&frac), "coverage {frac}");
        }
    }
}
