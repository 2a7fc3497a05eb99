//! In-memory pipeline stages: tracking → warp → optimisation per keyframe
//! segment, plus render-side metrics.

use gs4d::codec::{group_values, set_group_values, Group, SegmentMotion};
use gs4d::energy::{adaptive_weights, optimize_frame, EnergyWeights, OptimizeConfig, OptimizeResult, Views};
use gs4d::graph::{bind_points, build_gaussian_graph, default_ed_spacing, sample_ed_nodes, warp_frame, EDGraph};
use gs4d::render::{rasterize, Camera, Image, RasterConfig};
use gs4d::synth::psnr;
use gs4d::track::{solve_tracking, CorrespondenceSet, TrackConfig, TrackReport};
use gs4d::{Frame64, Graph64, Result};
use rayon::prelude::*;

use crate::store::SegmentEntry;

pub fn segment_entries(frame_count: usize, segment_length: usize) -> Result<Vec<SegmentEntry>> {
    let plan = gs4d::track::plan_segments(frame_count, segment_length)?;
    Ok(plan
        .segments()
        .into_iter()
        .enumerate()
        .map(|(index, r)| SegmentEntry {
            index,
            start: r.start,
            frames: r.len(),
        })
        .collect())
}

/// Pairs kernel positions at the segment keyframe with those at frame `t`,
/// given sequence correspondences that all start from frame 0.
pub fn rebase_correspondences(
    key: &CorrespondenceSet<f64>,
    frame: &CorrespondenceSet<f64>,
) -> Result<CorrespondenceSet<f64>> {
    CorrespondenceSet::new(key.tgt.clone(), frame.tgt.clone())
}

/// Key-space ED graph with identity motions.
pub fn key_graph(key: &Frame64, spacing: f64) -> Result<Graph64> {
    let pos = key.positions();
    let spacing = if spacing > 0.0 { spacing } else { default_ed_spacing(&pos) };
    sample_ed_nodes(&pos, spacing)
}

/// Tracks every frame of a segment from its keyframe. `corr[i]` maps the
/// keyframe to segment frame `i`; frame 0 stays at identity and each frame
/// warm-starts from the previous solution.
pub fn track_segment(
    ed: &Graph64,
    corr: &[CorrespondenceSet<f64>],
    cfg: &TrackConfig,
    mut on_frame: impl FnMut(usize, &TrackReport, f64),
) -> Result<Vec<(Graph64, TrackReport)>> {
    let mut out = vec![(ed.clone(), TrackReport::default())];
    for (i, c) in corr.iter().enumerate().skip(1) {
        let start = std::time::Instant::now();
        let r = solve_tracking(&out[i - 1].0, c, cfg)?;
        on_frame(i, &r.report, start.elapsed().as_secs_f64());
        out.push((r.graph, r.report));
    }
    Ok(out)
}

pub fn warp_segment(key: &Frame64, graphs: &[Graph64], start: usize) -> Result<Vec<Frame64>> {
    let bindings = bind_points(&key.positions(), &graphs[0])?;
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| warp_frame(key, &bindings, g, start + i))
        .collect()
}

pub fn segment_motion(graphs: &[Graph64]) -> SegmentMotion<f64> {
    SegmentMotion {
        ed: graphs[0].clone(),
        motions: graphs.iter().map(EDGraph::motions).collect(),
    }
}

pub struct StageConfig<'a> {
    pub weights: &'a EnergyWeights,
    pub raster: &'a RasterConfig,
    pub optimize: &'a OptimizeConfig,
}

/// Sequential per-frame optimisation of one segment. `inits[i]` is the warped
/// keyframe for segment frame `i` and `targets[i]` its views. Frame 0 is the
/// keyframe itself and is returned unchanged with an empty report.
pub fn optimize_segment(
    key: &Frame64,
    ed: &Graph64,
    inits: &[Frame64],
    cameras: &[Camera<f64>],
    targets: &[Vec<Image<f64>>],
    cfg: &StageConfig<'_>,
    mut on_frame: impl FnMut(usize, &OptimizeResult<f64>, f64),
) -> Result<Vec<OptimizeResult<f64>>> {
    let graph = build_gaussian_graph(&key.kernels, ed)?;
    let mut out = vec![OptimizeResult {
        state: key.clone(),
        report: Default::default(),
    }];
    for i in 1..inits.len() {
        let start = std::time::Instant::now();
        let w = adaptive_weights(&inits[i - 1].positions(), &inits[i].positions(), cfg.weights.alpha)?;
        let views = Views::new(cameras, &targets[i])?;
        let r = optimize_frame(&inits[i], &out[i - 1].state, &graph, &w, views, cfg.weights, cfg.raster, cfg.optimize)?;
        on_frame(i, &r, start.elapsed().as_secs_f64());
        out.push(r);
    }
    Ok(out)
}

/// Motion-only fine-tune after appearance quantisation. Non-key frames take
/// the coded appearance (keyframe plus decoded residual, so the keyframe's own
/// quantisation error is not folded in), which stays frozen while position and
/// rotation are re-optimised against the targets. Results are `f32`-rounded,
/// as stored.
pub fn fine_tune_segment(
    frames: &[Frame64],
    decoded: &[Frame64],
    ed: &Graph64,
    cameras: &[Camera<f64>],
    targets: &[Vec<Image<f64>>],
    cfg: &StageConfig<'_>,
    on_frame: impl FnMut(usize, &OptimizeResult<f64>, f64),
) -> Result<Vec<Frame64>> {
    let (key, dkey) = (&frames[0], &decoded[0]);
    let mut inits = vec![key.clone()];
    for (f, d) in frames.iter().zip(decoded).skip(1) {
        let mut f = f.clone();
        for g in [Group::Scale, Group::Opacity, Group::Sh] {
            let v: Vec<f64> = group_values(key, g)
                .iter()
                .zip(group_values(d, g))
                .zip(group_values(dkey, g))
                .map(|((k, d), dk)| k + (d - dk))
                .collect();
            set_group_values(&mut f, g, &v)?;
        }
        inits.push(f);
    }
    let optimize = OptimizeConfig {
        freeze_appearance: true,
        ..cfg.optimize.clone()
    };
    let stage = StageConfig { optimize: &optimize, ..*cfg };
    let results = optimize_segment(&frames[0], ed, &inits, cameras, targets, &stage, on_frame)?;
    Ok(results
        .into_iter()
        .zip(frames)
        .map(|(r, f)| {
            let mut s = r.state.rounded_f32();
            s.frame = f.frame;
            s
        })
        .collect())
}

pub fn render_views(frame: &Frame64, cameras: &[Camera<f64>], raster: &RasterConfig) -> Result<Vec<Image<f64>>> {
    cameras.par_iter().map(|c| rasterize(&frame.kernels, c, raster)).collect()
}

/// PSNR of `frame` rendered from each camera against `targets`.
pub fn view_psnr(
    frame: &Frame64,
    cameras: &[Camera<f64>],
    targets: &[Image<f64>],
    raster: &RasterConfig,
) -> Result<Vec<f64>> {
    render_views(frame, cameras, raster)?
        .iter()
        .zip(targets)
        .map(|(a, b)| psnr(a, b))
        .collect()
}
