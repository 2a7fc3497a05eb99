//! Pipeline verbs operating on artefact directories.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gs4d::codec::{
    coded_errors, decode_segment, decode_segment_with, encode_segment, BitPolicy, DecodeOptions, Group, MOTION_RECORD,
};
use gs4d::energy::OptimizeConfig;
use gs4d::kernel::raw_frame_bytes;
use gs4d::render::{Camera, RasterConfig};
use gs4d::synth::{make_base_scene, make_sequence, psnr, SceneSpec, SequenceSpec};
use gs4d::track::CorrespondenceSet;
use gs4d::{io as gio, Frame64, Graph64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    fine_tune_segment, key_graph, optimize_segment, render_views, segment_entries, segment_motion, track_segment, view_psnr, warp_segment,
    StageConfig,
};
use crate::store::{self, SegmentEntry, Timing};

pub const FORMAT_VERSION: u32 = 1;
/// Storage of one raw frame quoted for 200k degree-3 kernels, MB.
pub const REFERENCE_FRAME_MB: f64 = 48.24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub scene: u64,
    pub drift: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub frames: usize,
    pub cameras: usize,
    pub kernels: usize,
    pub sh_degree: u8,
    pub width: usize,
    pub height: usize,
    pub seeds: Seeds,
    pub scene: SceneSpec,
    pub sequence: SequenceSpec,
}

pub fn read_manifest(seq: &Path) -> CliResult<Manifest> {
    let m: Manifest = store::read_json(&seq.join(store::MANIFEST))?;
    if m.format_version != FORMAT_VERSION {
        return Err(CliError::input(format!(
            "{}: format version {} is not supported",
            seq.display(),
            m.format_version
        )));
    }
    Ok(m)
}

fn read_segments(dir: &Path) -> CliResult<Vec<SegmentEntry>> {
    store::read_json(&dir.join(store::SEGMENTS))
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

pub fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> CliResult<Manifest> {
    store::ensure_dir(out)?;
    let mut timing = Timing::new(out);
    let start = Instant::now();
    let (base, labels) = make_base_scene(&cfg.scene)?;
    let seq = make_sequence(&base, &labels, &cfg.sequence)?;
    timing.record("synth", None, secs(start));
    let start = Instant::now();
    seq.frames.par_iter().try_for_each(|f| store::write_frame(out, f))?;
    seq.targets.par_iter().enumerate().try_for_each(|(t, views)| {
        views
            .iter()
            .enumerate()
            .try_for_each(|(c, img)| store::write_target(out, t, c, img))
    })?;
    for (t, c) in seq.correspondences.iter().enumerate() {
        store::write_json(&store::correspondence_path(out, t), c)?;
    }
    store::write_json(&out.join(store::CAMERAS), &seq.cameras)?;
    store::write_json(&out.join(store::LABELS), &seq.labels)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        frames: seq.frames.len(),
        cameras: seq.cameras.len(),
        kernels: base.len(),
        sh_degree: base.sh_degree(),
        width: cfg.sequence.rig.width,
        height: cfg.sequence.rig.height,
        seeds: Seeds {
            scene: cfg.scene.seed,
            drift: cfg.sequence.drift.as_ref().map(|d| d.seed),
        },
        scene: cfg.scene.clone(),
        sequence: cfg.sequence.clone(),
    };
    store::write_json(&out.join(store::MANIFEST), &manifest)?;
    timing.record("write", None, secs(start));
    timing.flush()?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub segment: usize,
    pub frame: usize,
    pub iterations: usize,
    pub converged: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub residual_rms: f64,
}

pub const TRACK_REPORT: &str = "track_report.csv";

pub fn cmd_track(seq: &Path, cfg: &PipelineConfig, out: &Path) -> CliResult<Vec<TrackRow>> {
    let manifest = read_manifest(seq)?;
    let corr: Vec<CorrespondenceSet<f64>> = (0..manifest.frames)
        .map(|t| store::read_json(&store::correspondence_path(seq, t)))
        .collect::<CliResult<_>>()?;
    store::ensure_dir(out)?;
    let mut timing = Timing::new(out);
    let segments = segment_entries(manifest.frames, cfg.segment_length)?;
    let mut rows = vec![];
    for s in &segments {
        let key = store::read_frame(seq, s.start)?;
        let start = Instant::now();
        let ed = key_graph(&key, cfg.ed_spacing)?;
        timing.record("ed-graph", Some(s.start), secs(start));
        let rebased: Vec<_> = (s.start..s.start + s.frames)
            .map(|t| CorrespondenceSet::new(key.positions(), corr[t].tgt.clone()))
            .collect::<gs4d::Result<_>>()?;
        let tracked = track_segment(&ed, &rebased, &cfg.track, |i, _, dt| {
            timing.record("track", Some(s.start + i), dt)
        })?;
        for (i, (g, r)) in tracked.iter().enumerate() {
            store::write_json(&store::graph_path(out, s.start + i), g)?;
            rows.push(TrackRow {
                segment: s.index,
                frame: s.start + i,
                iterations: r.iterations,
                converged: i == 0 || r.converged,
                initial_energy: r.initial_energy(),
                final_energy: r.final_energy(),
                residual_rms: r.residual_rms,
            });
        }
    }
    store::write_json(&out.join(store::SEGMENTS), &segments)?;
    store::write_csv(&out.join(TRACK_REPORT), &rows)?;
    timing.flush()?;
    Ok(rows)
}

fn read_graphs(track: &Path, s: &SegmentEntry) -> CliResult<Vec<Graph64>> {
    (s.start..s.start + s.frames)
        .map(|t| store::read_json(&store::graph_path(track, t)))
        .collect()
}

pub fn cmd_warp(seq: &Path, track: &Path, out: &Path) -> CliResult<usize> {
    let segments = read_segments(track)?;
    store::ensure_dir(out)?;
    let mut timing = Timing::new(out);
    let mut n = 0;
    for s in &segments {
        let key = store::read_frame(seq, s.start)?;
        let graphs = read_graphs(track, s)?;
        let start = Instant::now();
        let warped = warp_segment(&key, &graphs, s.start)?;
        timing.record("warp", Some(s.start), secs(start));
        for f in &warped {
            store::write_frame(out, f)?;
        }
        n += warped.len();
    }
    store::write_json(&out.join(store::SEGMENTS), &segments)?;
    timing.flush()?;
    Ok(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRow {
    pub segment: usize,
    pub frame: usize,
    pub steps: usize,
    pub best_iteration: usize,
    pub stopped_early: bool,
    pub initial_energy: f64,
    pub best_energy: f64,
    pub best_color: f64,
    pub best_temp: f64,
    pub best_smooth: f64,
    /// Best-so-far energy never increased.
    pub monotone: bool,
    pub min_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub frame: usize,
    pub iteration: usize,
    pub energy: f64,
    pub best_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsnrRow {
    pub frame: usize,
    pub camera: usize,
    pub init_psnr: f64,
    pub psnr: f64,
}

pub const OPTIMIZE_REPORT: &str = "optimize_report.csv";
pub const OPTIMIZE_ENERGIES: &str = "optimize_energies.csv";
pub const OPTIMIZE_PSNR: &str = "optimize_psnr.csv";

pub fn cmd_optimize(seq: &Path, track: &Path, warp: &Path, cfg: &PipelineConfig, out: &Path) -> CliResult<Vec<OptimizeRow>> {
    let segments = read_segments(track)?;
    let camera_file = seq.join(store::CAMERAS);
    let cameras = store::read_cameras(&camera_file)?;
    store::ensure_dir(out)?;
    let mut timing = Timing::new(out);
    let stage = StageConfig {
        weights: &cfg.energy,
        raster: &cfg.sequence.raster,
        optimize: &cfg.optimize,
    };
    let (mut rows, mut energies, mut psnrs) = (vec![], vec![], vec![]);
    for s in &segments {
        let key = store::read_frame(seq, s.start)?;
        let ed = store::read_json::<Graph64>(&store::graph_path(track, s.start))?;
        let range = s.start..s.start + s.frames;
        let inits: Vec<Frame64> = range.clone().map(|t| store::read_frame(warp, t)).collect::<CliResult<_>>()?;
        let targets = read_targets(seq, range.clone(), cameras.len())?;
        let results = optimize_segment(&key, &ed, &inits, &cameras, &targets, &stage, |i, _, dt| {
            timing.record("optimize", Some(s.start + i), dt)
        })?;
        for (i, r) in results.iter().enumerate() {
            let t = s.start + i;
            let mut state = r.state.clone();
            state.frame = t;
            store::write_frame(out, &state)?;
            let before = view_psnr(&inits[i], &cameras, &targets[i], stage.raster)?;
            let after = view_psnr(&r.state, &cameras, &targets[i], stage.raster)?;
            for (c, (a, b)) in before.iter().zip(&after).enumerate() {
                psnrs.push(PsnrRow {
                    frame: t,
                    camera: c,
                    init_psnr: *a,
                    psnr: *b,
                });
            }
            let rep = &r.report;
            for (it, (e, b)) in rep.energies.iter().zip(&rep.best_energies).enumerate() {
                energies.push(EnergyRow {
                    frame: t,
                    iteration: it,
                    energy: *e,
                    best_energy: *b,
                });
            }
            rows.push(OptimizeRow {
                segment: s.index,
                frame: t,
                steps: rep.steps,
                best_iteration: rep.best_iteration,
                stopped_early: rep.stopped_early,
                initial_energy: rep.energies.first().copied().unwrap_or(0.0),
                best_energy: rep.best_energies.last().copied().unwrap_or(0.0),
                best_color: rep.best_color,
                best_temp: rep.best_temp,
                best_smooth: rep.best_smooth,
                monotone: rep.best_energies.windows(2).all(|w| w[1] <= w[0]),
                min_psnr: after.iter().copied().fold(f64::INFINITY, f64::min),
            });
        }
    }
    store::write_json(&out.join(store::SEGMENTS), &segments)?;
    store::write_csv(&out.join(OPTIMIZE_REPORT), &rows)?;
    store::write_csv(&out.join(OPTIMIZE_ENERGIES), &energies)?;
    store::write_csv(&out.join(OPTIMIZE_PSNR), &psnrs)?;
    timing.flush()?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub segment: usize,
    pub frame: usize,
    pub record: String,
    pub bits: u8,
    pub symbols: usize,
    pub table_entries: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub segment: usize,
    pub start: usize,
    pub frames: usize,
    pub kernels: usize,
    pub sh_degree: u8,
    pub residual: bool,
    pub raw_bytes: usize,
    pub encoded_bytes: usize,
    pub ratio: f64,
    pub header_bytes: usize,
    pub ed_motion_bytes: usize,
    pub position_bytes: usize,
    pub rotation_bytes: usize,
    pub scale_bytes: usize,
    pub opacity_bytes: usize,
    pub sh_bytes: usize,
    /// Non-key frames only: raw size over encoded records.
    pub nonkey_ratio: f64,
}

pub const ENCODE_RECORDS: &str = "encode_records.csv";
pub const ENCODE_SUMMARY: &str = "encode_summary.csv";
pub const ENCODE_POLICY: &str = "policy.json";

fn record_name(id: u8) -> String {
    match Group::ALL.iter().find(|g| g.id() == id) {
        Some(g) => g.name().to_string(),
        None if id == MOTION_RECORD => "ed-motion".to_string(),
        None => format!("record-{id}"),
    }
}

/// Encodes the frames under `frames` one container per segment. Segments
/// come from `track` when given, else from the configured segment length.
/// Directory under the encode output holding fine-tuned encoder inputs.
pub const FINE_TUNED: &str = "fine_tuned";

fn read_targets(seq: &Path, range: std::ops::Range<usize>, cameras: usize) -> CliResult<Vec<Vec<gs4d::Image64>>> {
    range
        .map(|t| (0..cameras).map(|c| store::read_target(seq, t, c)).collect::<CliResult<Vec<_>>>())
        .collect()
}

/// Encodes every segment. With `seq` (the target sequence) and a positive
/// `fine_tune_iterations`, residual segments are encoded once, their motion
/// fine-tuned under the decoded appearance, and encoded again; the final
/// encoder inputs are written under [`FINE_TUNED`].
pub fn cmd_encode(
    frames: &Path,
    track: Option<&Path>,
    seq: Option<&Path>,
    policy: &BitPolicy,
    cfg: &PipelineConfig,
    out: &Path,
) -> CliResult<Vec<SummaryRow>> {
    policy.validate()?;
    let fine_tune = match seq {
        Some(dir) if policy.residual && cfg.fine_tune_iterations > 0 => {
            Some((dir, store::read_cameras(&dir.join(store::CAMERAS))?))
        }
        _ => None,
    };
    let segments = match track {
        Some(dir) => read_segments(dir)?,
        None if policy.residual => {
            return Err(CliError::input("residual coding needs the tracking output (--track)"));
        }
        None => segment_entries(store::count_frames(frames), cfg.segment_length)?,
    };
    store::ensure_dir(out)?;
    let mut timing = Timing::new(out);
    let (mut records, mut summary) = (vec![], vec![]);
    for s in &segments {
        let input: Vec<Frame64> = (s.start..s.start + s.frames)
            .map(|t| store::read_frame(frames, t))
            .collect::<CliResult<_>>()?;
        let motion = match track {
            Some(dir) if policy.residual => Some(segment_motion(&read_graphs(dir, s)?)),
            _ => None,
        };
        let start = Instant::now();
        let mut enc = encode_segment(&input, motion.as_ref(), policy)?;
        timing.record("encode", Some(s.start), secs(start));
        if let (Some((dir, cameras)), Some(m)) = (&fine_tune, &motion) {
            let targets = read_targets(dir, s.start..s.start + s.frames, cameras.len())?;
            let decoded = decode_segment::<f64>(&enc.bytes)?;
            let optimize = OptimizeConfig {
                iterations: cfg.fine_tune_iterations,
                ..cfg.optimize.clone()
            };
            let stage = StageConfig {
                weights: &cfg.energy,
                raster: &cfg.sequence.raster,
                optimize: &optimize,
            };
            let tuned = fine_tune_segment(&input, &decoded.frames, &m.ed, cameras, &targets, &stage, |i, _, dt| {
                timing.record("fine_tune", Some(s.start + i), dt)
            })?;
            let start = Instant::now();
            enc = encode_segment(&tuned, Some(m), policy)?;
            timing.record("encode", Some(s.start), secs(start));
            for f in &tuned {
                store::write_frame(&out.join(FINE_TUNED), f)?;
            }
        }
        gio::write_bytes(store::segment_path(out, s.index), &enc.bytes)?;
        let st = &enc.stats;
        for r in &st.records {
            records.push(RecordRow {
                segment: s.index,
                frame: s.start + r.frame,
                record: record_name(r.group),
                bits: r.bits,
                symbols: r.symbols,
                table_entries: r.table_entries,
                bytes: r.bytes,
            });
        }
        let nonkey: usize = (1..s.frames).map(|t| st.frame_bytes(t)).sum();
        let nonkey_raw = (s.frames - 1) * raw_frame_bytes(st.kernel_count, st.sh_degree);
        summary.push(SummaryRow {
            segment: s.index,
            start: s.start,
            frames: s.frames,
            kernels: st.kernel_count,
            sh_degree: st.sh_degree,
            residual: policy.residual,
            raw_bytes: st.raw_bytes(),
            encoded_bytes: st.total_bytes,
            ratio: st.ratio(),
            header_bytes: st.header_bytes,
            ed_motion_bytes: st.group_bytes(MOTION_RECORD),
            position_bytes: st.group_bytes(Group::Position.id()),
            rotation_bytes: st.group_bytes(Group::Rotation.id()),
            scale_bytes: st.group_bytes(Group::Scale.id()),
            opacity_bytes: st.group_bytes(Group::Opacity.id()),
            sh_bytes: st.group_bytes(Group::Sh.id()),
            nonkey_ratio: if nonkey > 0 { nonkey_raw as f64 / nonkey as f64 } else { 0.0 },
        });
    }
    store::write_json(&out.join(store::SEGMENTS), &segments)?;
    store::write_json(&out.join(ENCODE_POLICY), policy)?;
    store::write_csv(&out.join(ENCODE_RECORDS), &records)?;
    store::write_csv(&out.join(ENCODE_SUMMARY), &summary)?;
    timing.flush()?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRow {
    pub segment: usize,
    pub frame: usize,
    pub group: String,
    pub bits: u8,
    pub max_error: f64,
    pub max_half_step: f64,
    pub worst_ratio: f64,
    pub exact: String,
    pub within_bound: bool,
}

pub const DECODE_REPORT: &str = "decode_report.csv";

/// Decodes every segment under `encoded` into frames. With `reference` (the
/// encoder's input frames), checks each group against its step/2 bound and
/// fails with a numeric error if any is exceeded.
pub fn cmd_decode(encoded: &Path, reference: Option<&Path>, out: &Path) -> CliResult<Vec<DecodeRow>> {
    let segments = read_segments(encoded)?;
    store::ensure_dir(out)?;
    let mut timing = Timing::new(out);
    let mut rows = vec![];
    for s in &segments {
        let path = store::segment_path(encoded, s.index);
        store::require(&path)?;
        let bytes = gio::read_bytes(&path)?;
        let start = Instant::now();
        let dec = decode_segment::<f64>(&bytes).map_err(|e| CliError::from(e).at(&path))?;
        timing.record("decode", Some(s.start), secs(start));
        if dec.frames.len() != s.frames {
            return Err(CliError::Corrupt(format!(
                "{}: {} frames, segment list says {}",
                path.display(),
                dec.frames.len(),
                s.frames
            )));
        }
        for (i, f) in dec.frames.iter().enumerate() {
            let mut f = f.clone();
            f.frame = s.start + i;
            store::write_frame(out, &f)?;
        }
        if let Some(refdir) = reference {
            let input: Vec<Frame64> = (s.start..s.start + s.frames)
                .map(|t| store::read_frame(refdir, t))
                .collect::<CliResult<_>>()?;
            let raw = decode_segment_with::<f64>(&bytes, DecodeOptions { normalize_rotations: false })?;
            for e in coded_errors(&input, &raw)? {
                rows.push(DecodeRow {
                    segment: s.index,
                    frame: s.start + e.frame,
                    group: e.group.name().to_string(),
                    bits: e.bits,
                    max_error: e.max_error,
                    max_half_step: e.max_half_step,
                    worst_ratio: e.worst_ratio,
                    exact: match e.exact {
                        Some(true) => "yes".into(),
                        Some(false) => "no".into(),
                        None => "n/a".into(),
                    },
                    within_bound: e.within_bound(),
                });
            }
        }
    }
    store::write_json(&out.join(store::SEGMENTS), &segments)?;
    if reference.is_some() {
        store::write_csv(&out.join(DECODE_REPORT), &rows)?;
    }
    timing.flush()?;
    if let Some(bad) = rows.iter().find(|r| !r.within_bound) {
        return Err(CliError::Numeric(format!(
            "frame {} group {}: error {:e} exceeds step/2 ({:e})",
            bad.frame, bad.group, bad.max_error, bad.max_half_step
        )));
    }
    Ok(rows)
}

pub fn cmd_render(frames: &Path, cameras: &Path, raster: &RasterConfig, out: &Path) -> CliResult<usize> {
    let cams = store::read_cameras(cameras)?;
    let input = store::read_frames(frames)?;
    store::ensure_dir(out)?;
    input.par_iter().try_for_each(|f| -> CliResult<()> {
        for (c, img) in render_views(f, &cams, raster)?.iter().enumerate() {
            gio::write_bytes(store::render_path(out, f.frame, c), &gio::encode_png(img)?)?;
        }
        Ok(())
    })?;
    Ok(input.len() * cams.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub frame: usize,
    pub camera: usize,
    pub psnr_db: f64,
    /// Encoded record bytes of this frame, 0 without an encode directory.
    pub frame_bytes: usize,
    pub raw_frame_bytes: usize,
}

pub const STATS_REPORT: &str = "stats.csv";
pub const STATS_COLUMNS: [&str; 5] = ["frame", "camera", "psnr_db", "frame_bytes", "raw_frame_bytes"];

/// PSNR of every frame under `frames` from every camera against `reference`
/// target images, with per-frame storage from `encoded` when given.
pub fn cmd_stats(
    frames: &Path,
    cameras: &Path,
    reference: &Path,
    encoded: Option<&Path>,
    raster: &RasterConfig,
    out: &Path,
) -> CliResult<Vec<StatsRow>> {
    let cams: Vec<Camera<f64>> = store::read_cameras(cameras)?;
    let input = store::read_frames(frames)?;
    let bytes: Vec<RecordRow> = match encoded {
        Some(dir) => store::read_csv(&dir.join(ENCODE_RECORDS))?,
        None => vec![],
    };
    let per_frame: Vec<Vec<StatsRow>> = input
        .par_iter()
        .map(|f| -> CliResult<Vec<StatsRow>> {
            let imgs = render_views(f, &cams, raster)?;
            let frame_bytes = bytes.iter().filter(|r| r.frame == f.frame).map(|r| r.bytes).sum();
            imgs.iter()
                .enumerate()
                .map(|(c, img)| {
                    let target = store::read_target(reference, f.frame, c)?;
                    if !img.same_size(&target) {
                        return Err(CliError::input(format!(
                            "frame {} camera {c}: render {}×{} vs reference {}×{}",
                            f.frame, img.width, img.height, target.width, target.height
                        )));
                    }
                    Ok(StatsRow {
                        frame: f.frame,
                        camera: c,
                        psnr_db: psnr(img, &target)?,
                        frame_bytes,
                        raw_frame_bytes: raw_frame_bytes(f.len(), f.sh_degree()),
                    })
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    let rows: Vec<StatsRow> = per_frame.into_iter().flatten().collect();
    let path = if out.extension().is_some() { out.to_path_buf() } else { out.join(STATS_REPORT) };
    store::write_csv(&path, &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawStorage {
    pub kernels: usize,
    pub sh_degree: u8,
    pub floats_per_kernel: usize,
    pub raw_frame_bytes: usize,
    pub raw_frame_mb: f64,
    pub reference_mb: f64,
    /// `(raw − reference) / reference`.
    pub relative_gap: f64,
}

/// Raw 32-bit storage of one frame; MB are 10⁶ bytes.
pub fn raw_storage(kernels: usize, sh_degree: u8) -> RawStorage {
    let bytes = raw_frame_bytes(kernels, sh_degree);
    let mb = bytes as f64 / 1e6;
    RawStorage {
        kernels,
        sh_degree,
        floats_per_kernel: raw_frame_bytes(1, sh_degree) / 4,
        raw_frame_bytes: bytes,
        raw_frame_mb: mb,
        reference_mb: REFERENCE_FRAME_MB,
        relative_gap: (mb - REFERENCE_FRAME_MB) / REFERENCE_FRAME_MB,
    }
}

/// Stage directories of a pipeline run.
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn sequence(&self) -> PathBuf {
        self.root.join("sequence")
    }
    pub fn track(&self) -> PathBuf {
        self.root.join("track")
    }
    pub fn warp(&self) -> PathBuf {
        self.root.join("warp")
    }
    pub fn optimize(&self) -> PathBuf {
        self.root.join("optimize")
    }
    pub fn encode(&self) -> PathBuf {
        self.root.join("encode")
    }
    pub fn decode(&self) -> PathBuf {
        self.root.join("decode")
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("stats")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub frames: usize,
    pub kernels: usize,
    pub min_optimized_psnr: f64,
    pub min_decoded_psnr: f64,
    pub encoded_bytes: usize,
    pub raw_bytes: usize,
    pub ratio: f64,
}

pub const PIPELINE_SUMMARY: &str = "summary.json";

/// synth → track → warp → optimize → encode → decode → stats.
pub fn cmd_pipeline(cfg: &PipelineConfig, out: &Path) -> CliResult<PipelineSummary> {
    cfg.validate()?;
    let run = RunLayout::new(out);
    store::ensure_dir(out)?;
    gio::write_bytes(out.join("config.toml"), cfg.to_toml().as_bytes())?;
    let manifest = cmd_synth(cfg, &run.sequence())?;
    cmd_track(&run.sequence(), cfg, &run.track())?;
    cmd_warp(&run.sequence(), &run.track(), &run.warp())?;
    let opt = cmd_optimize(&run.sequence(), &run.track(), &run.warp(), cfg, &run.optimize())?;
    let enc = cmd_encode(
        &run.optimize(),
        Some(&run.track()),
        Some(&run.sequence()),
        &cfg.codec,
        cfg,
        &run.encode(),
    )?;
    let reference = if run.encode().join(FINE_TUNED).exists() {
        run.encode().join(FINE_TUNED)
    } else {
        run.optimize()
    };
    cmd_decode(&run.encode(), Some(&reference), &run.decode())?;
    let stats = cmd_stats(
        &run.decode(),
        &run.sequence().join(store::CAMERAS),
        &run.sequence(),
        Some(&run.encode()),
        &cfg.sequence.raster,
        &run.stats(),
    )?;
    let (encoded_bytes, raw_bytes) = enc
        .iter()
        .fold((0, 0), |(e, r), s| (e + s.encoded_bytes, r + s.raw_bytes));
    let summary = PipelineSummary {
        frames: manifest.frames,
        kernels: manifest.kernels,
        min_optimized_psnr: opt.iter().map(|r| r.min_psnr).fold(f64::INFINITY, f64::min),
        min_decoded_psnr: stats.iter().map(|r| r.psnr_db).fold(f64::INFINITY, f64::min),
        encoded_bytes,
        raw_bytes,
        ratio: raw_bytes as f64 / encoded_bytes as f64,
    };
    store::write_json(&out.join(PIPELINE_SUMMARY), &summary)?;
    Ok(summary)
}
