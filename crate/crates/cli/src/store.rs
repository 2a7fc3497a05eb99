//! Directory layout of pipeline artefacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gs4d::io as gio;
use gs4d::render::{Camera, Image};
use gs4d::Frame64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const CAMERAS: &str = "cameras.json";
pub const LABELS: &str = "labels.json";
pub const SEGMENTS: &str = "segments.json";
pub const TIMING: &str = "timing.jsonl";

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("frames").join(format!("frame_{t:04}.gsfr"))
}

pub fn target_path(dir: &Path, t: usize, cam: usize, ext: &str) -> PathBuf {
    dir.join("targets").join(format!("frame_{t:04}_cam_{cam:02}.{ext}"))
}

pub fn render_path(dir: &Path, t: usize, cam: usize) -> PathBuf {
    dir.join(format!("frame_{t:04}_cam_{cam:02}.png"))
}

pub fn correspondence_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("correspondences").join(format!("frame_{t:04}.json"))
}

pub fn graph_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("graph_{t:04}.json"))
}

pub fn segment_path(dir: &Path, s: usize) -> PathBuf {
    dir.join(format!("segment_{s:03}.gs4d"))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

pub fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::input(format!("missing input {}", path.display())))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    gio::write_bytes(path, text.as_bytes()).map_err(Into::into)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    require(path)?;
    let bytes = gio::read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_frame(dir: &Path, frame: &Frame64) -> CliResult<()> {
    gio::write_frame(frame_path(dir, frame.frame), frame).map_err(Into::into)
}

pub fn read_frame(dir: &Path, t: usize) -> CliResult<Frame64> {
    let path = frame_path(dir, t);
    require(&path)?;
    gio::read_frame(&path, t).map_err(|e| CliError::from(e).at(&path))
}

/// Number of consecutive frame files starting at 0.
pub fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&t| frame_path(dir, t).exists()).count()
}

pub fn read_frames(dir: &Path) -> CliResult<Vec<Frame64>> {
    let n = count_frames(dir);
    if n == 0 {
        return Err(CliError::input(format!("no frames under {}", dir.join("frames").display())));
    }
    (0..n).map(|t| read_frame(dir, t)).collect()
}

pub fn read_cameras(path: &Path) -> CliResult<Vec<Camera<f64>>> {
    let cams: Vec<Camera<f64>> = read_json(path)?;
    if cams.is_empty() {
        return Err(CliError::input(format!("{}: no cameras", path.display())));
    }
    Ok(cams)
}

pub fn write_target(dir: &Path, t: usize, cam: usize, img: &Image<f64>) -> CliResult<()> {
    gio::write_bytes(target_path(dir, t, cam, "gsim"), &gio::encode_raw_image(img)?)?;
    gio::write_bytes(target_path(dir, t, cam, "png"), &gio::encode_png(img)?)?;
    Ok(())
}

pub fn read_target(dir: &Path, t: usize, cam: usize) -> CliResult<Image<f64>> {
    let path = target_path(dir, t, cam, "gsim");
    require(&path)?;
    gio::decode_raw_image(&gio::read_bytes(&path)?).map_err(|e| CliError::from(e).at(&path))
}

pub fn read_targets(dir: &Path, frames: usize, cams: usize) -> CliResult<Vec<Vec<Image<f64>>>> {
    (0..frames)
        .map(|t| (0..cams).map(|c| read_target(dir, t, c)).collect())
        .collect()
}

/// Keyframe segments written by `track` and `encode`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub index: usize,
    pub start: usize,
    pub frames: usize,
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::input(format!("csv: {e}")))?;
    gio::write_bytes(path, &bytes).map_err(Into::into)
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> CliResult<Vec<R>> {
    require(path)?;
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Wall-clock log kept apart from the deterministic reports.
pub struct Timing {
    path: PathBuf,
    lines: Vec<String>,
}

#[derive(Serialize)]
struct TimingLine<'a> {
    step: &'a str,
    frame: Option<usize>,
    seconds: f64,
}

impl Timing {
    pub fn new(dir: &Path) -> Self {
        Self {
            path: dir.join(TIMING),
            lines: vec![],
        }
    }

    pub fn record(&mut self, step: &str, frame: Option<usize>, seconds: f64) {
        self.lines
            .push(serde_json::to_string(&TimingLine { step, frame, seconds }).expect("serialisable"));
    }

    pub fn flush(&self) -> CliResult<()> {
        let mut f = fs::File::create(&self.path)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", self.path.display())))?;
        for l in &self.lines {
            writeln!(f, "{l}").map_err(|e| CliError::input(format!("{}: {e}", self.path.display())))?;
        }
        Ok(())
    }
}
