//! Segment compression: raw keyframe motion, motion-compensated residuals for
//! non-key frames, per-channel range quantisation and rANS entropy coding.
//!
//! The byte layout is documented in `docs/FORMAT.md`.

pub(crate) mod container;
mod quant;
mod rans;
mod tokens;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use container::{DecodeError, MAGIC, VERSION};
pub use quant::{ChannelRange, QuantSpec, MAX_BITS};
pub use rans::{rans_decode, rans_encode, FrequencyTable, PROB_BITS, PROB_SCALE, RANS_L};

use container::{f32_le, read_f32s, Reader, Writer};
use crate::error::{Error, Result};
use crate::geom::{basis_count, DualQuaternion, Quaternion, Vec3, MAX_SH_DEGREE};
use crate::graph::{bind_points, warp_frame, Binding, EDGraph};
use crate::kernel::{raw_frame_bytes, FrameState};
use crate::scalar::Real;

/// Attribute groups in stream order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Position = 0,
    Rotation = 1,
    Scale = 2,
    Opacity = 3,
    Sh = 4,
}

/// Record id of the per-frame ED node motions.
pub const MOTION_RECORD: u8 = 5;
/// ED motion is coded as its offset from identity on a 12-bit dyadic grid.
/// Both sides warp with the decoded motion, so compensation stays exact, and
/// near-identity nodes snap to exactly identity.
pub const ED_MOTION_BITS: u8 = 12;
const MOTION_CHANNELS: usize = 8;
/// Header flag: non-key frames are residuals against the warped keyframe.
pub const FLAG_RESIDUAL: u8 = 1;

impl Group {
    pub const ALL: [Group; 5] = [Group::Position, Group::Rotation, Group::Scale, Group::Opacity, Group::Sh];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Position => "position",
            Group::Rotation => "rotation",
            Group::Scale => "scale",
            Group::Opacity => "opacity",
            Group::Sh => "sh",
        }
    }

    /// Position and rotation are motion; scale, opacity and colour are appearance.
    pub fn is_motion(self) -> bool {
        matches!(self, Group::Position | Group::Rotation)
    }

    pub fn channels(self, degree: u8) -> usize {
        match self {
            Group::Position | Group::Scale => 3,
            Group::Rotation => 4,
            Group::Opacity => 1,
            Group::Sh => 3 * basis_count(degree),
        }
    }
}

/// Bit widths per frame class; 0 stores the group as raw `f32`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BitPolicy {
    pub key_motion: u8,
    pub key_appearance: u8,
    pub motion: u8,
    pub appearance: u8,
    /// Code non-key frames as residuals against the motion-compensated keyframe.
    pub residual: bool,
}

impl Default for BitPolicy {
    fn default() -> Self {
        Self {
            key_motion: 0,
            key_appearance: 9,
            motion: 11,
            appearance: 7,
            residual: true,
        }
    }
}

impl BitPolicy {
    /// Every frame coded on its own at keyframe precision.
    pub fn high_bit_no_residual() -> Self {
        Self {
            motion: 0,
            appearance: 9,
            residual: false,
            ..Self::default()
        }
    }

    /// Every non-key frame coded on its own at non-key precision.
    pub fn low_bit_no_residual() -> Self {
        Self {
            residual: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [
            ("key_motion", self.key_motion),
            ("key_appearance", self.key_appearance),
            ("motion", self.motion),
            ("appearance", self.appearance),
        ] {
            if b > MAX_BITS {
                return Err(Error::InvalidParameter(format!("{name} bits {b} exceed {MAX_BITS}")));
            }
        }
        Ok(())
    }

    pub fn bits(&self, group: Group, key: bool) -> u8 {
        match (key, group.is_motion()) {
            (true, true) => self.key_motion,
            (true, false) => self.key_appearance,
            (false, true) => self.motion,
            (false, false) => self.appearance,
        }
    }
}

/// Tracked ED motion for a segment: key-space nodes and one motion per node
/// per frame (frame 0 is the keyframe and its motion is ignored).
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMotion<T> {
    pub ed: EDGraph<T>,
    pub motions: Vec<Vec<DualQuaternion<T>>>,
}

/// Kernel-major interleaved values of one group.
pub fn group_values<T: Real>(frame: &FrameState<T>, group: Group) -> Vec<T> {
    let per = group.channels(frame.sh_degree());
    let mut out = Vec::with_capacity(per * frame.len());
    for k in &frame.kernels {
        match group {
            Group::Position => out.extend_from_slice(&k.position.to_array()),
            Group::Rotation => out.extend_from_slice(&k.rotation.to_array()),
            Group::Scale => out.extend_from_slice(&k.log_scale.to_array()),
            Group::Opacity => out.push(k.opacity_logit),
            Group::Sh => out.extend(k.sh.flat()),
        }
    }
    out
}

/// Inverse of [`group_values`].
pub fn set_group_values<T: Real>(frame: &mut FrameState<T>, group: Group, values: &[T]) -> Result<()> {
    let per = group.channels(frame.sh_degree());
    if values.len() != per * frame.len() {
        return Err(Error::LengthMismatch {
            what: "group values",
            expected: per * frame.len(),
            got: values.len(),
        });
    }
    for (k, c) in frame.kernels.iter_mut().zip(values.chunks_exact(per)) {
        match group {
            Group::Position => k.position = Vec3::new(c[0], c[1], c[2]),
            Group::Rotation => k.rotation = Quaternion::new(c[0], c[1], c[2], c[3]),
            Group::Scale => k.log_scale = Vec3::new(c[0], c[1], c[2]),
            Group::Opacity => k.opacity_logit = c[0],
            Group::Sh => {
                for (b, coef) in k.sh.coeffs_mut().iter_mut().enumerate() {
                    *coef = [c[3 * b], c[3 * b + 1], c[3 * b + 2]];
                }
            }
        }
    }
    Ok(())
}

/// Residuals of `frame` against `key` warped by `ed_t`, one array per group in
/// [`Group::ALL`] order. Rotations are flipped into the warped rotation's
/// hemisphere before subtracting.
pub fn residual_frame<T: Real>(
    frame: &FrameState<T>,
    key: &FrameState<T>,
    bindings: &[Binding<T>],
    ed_t: &EDGraph<T>,
) -> Result<[Vec<T>; 5]> {
    frame.check_same_len(key, "residual frame")?;
    let warped = warp_frame(key, bindings, ed_t, frame.frame)?;
    Ok(residual_against(frame, &warped))
}

fn residual_against<T: Real>(frame: &FrameState<T>, base: &FrameState<T>) -> [Vec<T>; 5] {
    Group::ALL.map(|g| {
        let cur = if g == Group::Rotation {
            aligned_rotations(frame, base)
        } else {
            group_values(frame, g)
        };
        cur.iter().zip(group_values(base, g)).map(|(&a, b)| a - b).collect()
    })
}

/// Rotations of `frame` flipped into the hemisphere of `reference`'s.
pub fn aligned_rotations<T: Real>(frame: &FrameState<T>, reference: &FrameState<T>) -> Vec<T> {
    frame
        .kernels
        .iter()
        .zip(&reference.kernels)
        .flat_map(|(k, r)| k.rotation.aligned_to(r.rotation).to_array())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordStat {
    pub frame: usize,
    /// Group id, or [`MOTION_RECORD`].
    pub group: u8,
    pub bits: u8,
    pub symbols: usize,
    pub table_entries: usize,
    /// Whole record including its table and length fields.
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub kernel_count: usize,
    pub frame_count: usize,
    pub sh_degree: u8,
    /// Header, quantisation specs, ED node block and checksum.
    pub header_bytes: usize,
    pub records: Vec<RecordStat>,
    pub total_bytes: usize,
}

impl SegmentStats {
    pub fn raw_bytes(&self) -> usize {
        self.frame_count * raw_frame_bytes(self.kernel_count, self.sh_degree)
    }

    pub fn ratio(&self) -> f64 {
        self.raw_bytes() as f64 / self.total_bytes as f64
    }

    pub fn frame_bytes(&self, frame: usize) -> usize {
        self.records.iter().filter(|r| r.frame == frame).map(|r| r.bytes).sum()
    }

    pub fn group_bytes(&self, group: u8) -> usize {
        self.records.iter().filter(|r| r.group == group).map(|r| r.bytes).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSegment {
    pub bytes: Vec<u8>,
    pub stats: SegmentStats,
}

struct Record {
    spec: QuantSpec,
    group: u8,
    body: Vec<u8>,
    symbols: usize,
    table_entries: usize,
}

fn write_record(w: &mut Writer, group: u8, count: usize, table: &[(u32, u32)], payload: &[u8]) {
    w.u8(group);
    w.u32(count as u32);
    w.u16(table.len() as u16);
    for &(s, f) in table {
        w.u16(s as u16);
        w.u16(f as u16);
    }
    w.u32(payload.len() as u32);
    w.bytes(payload);
}

/// Steps finer than half an `f32` ulp of the attribute's own magnitude carry
/// no information (inputs are stored at `f32`), so residual roundoff never
/// spreads over the alphabet.
fn step_floor<T: Real>(magnitudes: &[T], channels: usize) -> Vec<f64> {
    let mut m = vec![0.0f64; channels];
    for (i, v) in magnitudes.iter().enumerate() {
        let c = i % channels;
        m[c] = m[c].max(v.to_f64_lossy().abs());
    }
    m.into_iter().map(|x| x * f32::EPSILON as f64 * 0.5).collect()
}

fn encode_group<T: Real>(values: &[T], magnitudes: &[T], group: Group, degree: u8, bits: u8) -> Result<(Record, Vec<T>)> {
    let channels = group.channels(degree);
    let spec = QuantSpec::fit_with_floor(values, channels, bits, &step_floor(magnitudes, channels))?;
    let mut w = Writer::default();
    let (decoded, entries) = if spec.is_raw() {
        let raw: Vec<f32> = values.iter().map(|v| v.to_f32_lossy()).collect();
        write_record(&mut w, group.id(), values.len(), &[], &f32_le(raw.iter().copied()));
        (raw.into_iter().map(T::from_f32_exact).collect(), 0)
    } else {
        code_symbols(&mut w, group.id(), &spec, values)?
    };
    Ok((
        Record {
            spec,
            group: group.id(),
            body: w.buf,
            symbols: values.len(),
            table_entries: entries,
        },
        decoded,
    ))
}

fn code_symbols<T: Real>(w: &mut Writer, id: u8, spec: &QuantSpec, values: &[T]) -> Result<(Vec<T>, usize)> {
    let mut symbols = spec.quantize(values)?;
    let decoded = spec.dequantize(&symbols);
    spec.align(&mut symbols);
    let (toks, raw) = tokens::tokenize(&symbols, spec.bits);
    let table = FrequencyTable::from_symbols(&toks)?;
    let stream = rans_encode(&toks, &table)?;
    let mut payload = Writer::default();
    payload.u32(stream.len() as u32);
    payload.bytes(&stream);
    payload.bytes(&raw);
    write_record(w, id, symbols.len(), table.entries(), &payload.buf);
    Ok((decoded, table.len()))
}

fn motion_offsets<T: Real>(m: &[DualQuaternion<T>]) -> Vec<T> {
    m.iter()
        .flat_map(|d| {
            let mut a = d.to_array();
            a[0] -= T::one();
            a
        })
        .collect()
}

fn motion_from_offsets<T: Real>(v: &[T]) -> Vec<DualQuaternion<T>> {
    v.chunks_exact(MOTION_CHANNELS)
        .map(|c| {
            let mut a: [T; 8] = c.try_into().unwrap();
            a[0] += T::one();
            DualQuaternion::from_array(a)
        })
        .collect()
}

/// Quantises one frame of ED motion; returns the record and the motion both
/// sides warp with.
fn encode_motion<T: Real>(m: &[DualQuaternion<T>]) -> Result<(QuantSpec, Vec<u8>, usize, Vec<DualQuaternion<T>>)> {
    let offsets = motion_offsets(m);
    let spec = QuantSpec::fit_dyadic(&offsets, MOTION_CHANNELS, ED_MOTION_BITS)?;
    let mut w = Writer::default();
    let (decoded, entries) = code_symbols(&mut w, MOTION_RECORD, &spec, &offsets)?;
    Ok((spec, w.buf, entries, motion_from_offsets(&decoded)))
}

fn write_spec(w: &mut Writer, id: u8, spec: &QuantSpec) {
    w.u8(id);
    w.u8(spec.bits);
    w.u16(spec.channels as u16);
    for c in &spec.ranges {
        w.f32(c.min);
        w.f32(c.step);
    }
}

fn rounded_ed<T: Real>(ed: &EDGraph<T>) -> Result<EDGraph<T>> {
    EDGraph::from_positions(
        ed.positions().into_iter().map(|p| p.map(Real::round_f32)).collect(),
        ed.node_radius.round_f32(),
    )
}

/// Normalises quantised rotations after decode; raw rotations are untouched.
fn finish_rotations<T: Real>(frame: &mut FrameState<T>) {
    for k in &mut frame.kernels {
        if let Ok(u) = k.rotation.normalized() {
            k.rotation = u;
        }
    }
}

fn check_segment<T: Real>(frames: &[FrameState<T>]) -> Result<()> {
    let key = frames.first().ok_or(Error::Empty("segment frames"))?;
    if frames.len() > u16::MAX as usize {
        return Err(Error::InvalidParameter(format!("{} frames exceed the u16 frame count", frames.len())));
    }
    if key.len() > u32::MAX as usize {
        return Err(Error::InvalidParameter("kernel count exceeds u32".into()));
    }
    for f in frames {
        f.check_same_len(key, "segment frame")?;
        f.check_finite()?;
        if f.sh_degree() != key.sh_degree() {
            return Err(Error::InvalidParameter(format!(
                "frame {} has SH degree {}, keyframe {}",
                f.frame,
                f.sh_degree(),
                key.sh_degree()
            )));
        }
    }
    Ok(())
}

/// Codes one frame, as residuals against `base` when given. The returned
/// reconstruction is meaningful for the keyframe only (`base == None`).
fn encode_frame<T: Real>(
    frame: &FrameState<T>,
    base: Option<&FrameState<T>>,
    policy: &BitPolicy,
    key: bool,
) -> Result<(Vec<Record>, FrameState<T>)> {
    let degree = frame.sh_degree();
    let targets: [Vec<T>; 5] = match base {
        Some(b) => residual_against(frame, b),
        None => Group::ALL.map(|g| group_values(frame, g)),
    };
    let mut out = frame.clone();
    let mut records = Vec::with_capacity(5);
    for (g, vals) in Group::ALL.into_iter().zip(targets) {
        let bits = policy.bits(g, key);
        let (rec, mut decoded) = encode_group(&vals, &group_values(frame, g), g, degree, bits)?;
        if let Some(b) = base {
            for (d, w) in decoded.iter_mut().zip(group_values(b, g)) {
                *d += w;
            }
        }
        set_group_values(&mut out, g, &decoded)?;
        if g == Group::Rotation && (bits > 0 || base.is_some()) {
            finish_rotations(&mut out);
        }
        records.push(rec);
    }
    Ok((records, out))
}

/// Encodes a segment whose first frame is the keyframe. `motion` is required
/// when `policy.residual` is set.
pub fn encode_segment<T: Real>(
    frames: &[FrameState<T>],
    motion: Option<&SegmentMotion<T>>,
    policy: &BitPolicy,
) -> Result<EncodedSegment> {
    policy.validate()?;
    check_segment(frames)?;
    let key = &frames[0];
    let degree = key.sh_degree();
    let n = key.len();
    let (key_records, dkey) = encode_frame(key, None, policy, true)?;

    let mut ed_block = Writer::default();
    let mut frame_records: Vec<(Vec<Record>, Option<Record>)> = Vec::with_capacity(frames.len());
    frame_records.push((key_records, None));
    if policy.residual {
        let motion = motion.ok_or_else(|| Error::InvalidParameter("residual coding needs segment motion".into()))?;
        if motion.motions.len() != frames.len() {
            return Err(Error::LengthMismatch {
                what: "segment motions",
                expected: frames.len(),
                got: motion.motions.len(),
            });
        }
        let ed = rounded_ed(&motion.ed)?;
        ed_block.u32(ed.len() as u32);
        ed_block.f32(ed.node_radius.to_f32_lossy());
        ed_block.bytes(&f32_le(ed.positions().iter().flat_map(|p| p.to_array()).map(|v| v.to_f32_lossy())));
        let bindings = bind_points(&dkey.positions(), &ed)?;
        let rest: Result<Vec<_>> = frames[1..]
            .par_iter()
            .zip(&motion.motions[1..])
            .map(|(f, m)| {
                let (mspec, mbody, entries, m) = encode_motion(m)?;
                let ed_t = ed.with_motions(&m)?;
                // Motion is predicted by the warped decoded keyframe; appearance
                // by the keyframe's own values, so static attributes code as zeros.
                let mut base = warp_frame(&dkey, &bindings, &ed_t, f.frame)?;
                for (b, k) in base.kernels.iter_mut().zip(&key.kernels) {
                    b.log_scale = k.log_scale;
                    b.opacity_logit = k.opacity_logit;
                    b.sh = k.sh.clone();
                }
                let (recs, _) = encode_frame(f, Some(&base), policy, false)?;
                let mrec = Record {
                    spec: mspec,
                    group: MOTION_RECORD,
                    body: mbody,
                    symbols: MOTION_CHANNELS * m.len(),
                    table_entries: entries,
                };
                Ok((recs, Some(mrec)))
            })
            .collect();
        frame_records.extend(rest?);
    } else {
        let rest: Result<Vec<_>> = frames[1..]
            .par_iter()
            .map(|f| Ok((encode_frame(f, None, policy, false)?.0, None)))
            .collect();
        frame_records.extend(rest?);
    }

    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.u32(n as u32);
    w.u16(frames.len() as u16);
    w.u8(degree);
    w.u8(if policy.residual { FLAG_RESIDUAL } else { 0 });
    for (recs, motion_rec) in &frame_records {
        for r in recs.iter().chain(motion_rec) {
            write_spec(&mut w, r.group, &r.spec);
        }
    }
    w.bytes(&ed_block.buf);
    let mut stats = Vec::new();
    for (t, (recs, motion_rec)) in frame_records.iter().enumerate() {
        for r in motion_rec.iter().chain(recs) {
            stats.push(RecordStat {
                frame: t,
                group: r.group,
                bits: r.spec.bits,
                symbols: r.symbols,
                table_entries: r.table_entries,
                bytes: r.body.len(),
            });
            w.bytes(&r.body);
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    let total_bytes = w.len();
    let header_bytes = total_bytes - stats.iter().map(|r| r.bytes).sum::<usize>();
    Ok(EncodedSegment {
        bytes: w.buf,
        stats: SegmentStats {
            kernel_count: n,
            frame_count: frames.len(),
            sh_degree: degree,
            header_bytes,
            records: stats,
            total_bytes,
        },
    })
}

#[derive(Clone, Debug)]
pub struct DecodedSegment<T> {
    pub frames: Vec<FrameState<T>>,
    pub motion: Option<SegmentMotion<T>>,
    pub specs: Vec<[QuantSpec; 5]>,
    pub residual: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Renormalise quantised rotations (on by default). Off returns the raw
    /// dequantised components, which carry the strict per-channel bound.
    pub normalize_rotations: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            normalize_rotations: true,
        }
    }
}

struct RawRecord<'a> {
    offset: usize,
    symbols: usize,
    table: Vec<(u32, u32)>,
    payload: &'a [u8],
}

fn read_record<'a>(
    r: &mut Reader<'a>,
    frame: usize,
    expected_group: u8,
    expected_count: usize,
) -> std::result::Result<RawRecord<'a>, DecodeError> {
    let offset = r.pos;
    let id = r.u8()?;
    if id != expected_group {
        return Err(DecodeError::UnexpectedGroup {
            frame,
            offset,
            expected: expected_group,
            found: id,
        });
    }
    let symbols = r.u32()? as usize;
    if symbols != expected_count {
        return Err(DecodeError::CountMismatch {
            frame,
            group: id,
            expected: expected_count,
            found: symbols,
        });
    }
    let entries = r.u16()? as usize;
    let mut table = Vec::with_capacity(entries);
    for _ in 0..entries {
        let s = r.u16()? as u32;
        let f = r.u16()? as u32;
        table.push((s, f));
    }
    let len = r.u32()? as usize;
    let payload = r.take(len)?;
    Ok(RawRecord {
        offset,
        symbols,
        table,
        payload,
    })
}

fn decode_values<T: Real>(
    rec: &RawRecord<'_>,
    spec: &QuantSpec,
    frame: usize,
    group: u8,
) -> std::result::Result<Vec<T>, DecodeError> {
    let wrap = |e: DecodeError| DecodeError::Payload {
        frame,
        group,
        offset: rec.offset,
        source: Box::new(e),
    };
    if spec.is_raw() {
        if !rec.table.is_empty() || rec.payload.len() != 4 * rec.symbols {
            return Err(wrap(DecodeError::InvalidTable {
                reason: format!(
                    "raw record with {} table entries and {} bytes for {} values",
                    rec.table.len(),
                    rec.payload.len(),
                    rec.symbols
                ),
            }));
        }
        return Ok(read_f32s(rec.payload).into_iter().map(T::from_f32_exact).collect());
    }
    if let Some(&(s, _)) = rec.table.iter().find(|e| e.0 >= tokens::MAX_TOKENS) {
        return Err(wrap(DecodeError::InvalidTable {
            reason: format!("token {s} outside the token alphabet"),
        }));
    }
    let table = FrequencyTable::from_entries(rec.table.clone()).map_err(wrap)?;
    let mut r = Reader::new(rec.payload);
    let len = r.u32().map_err(wrap)? as usize;
    let stream = r.take(len).map_err(wrap)?;
    let toks = rans_decode(stream, &table, rec.symbols).map_err(wrap)?;
    let mut symbols = tokens::detokenize(&toks, &rec.payload[4 + len..], spec.bits).map_err(wrap)?;
    spec.unalign(&mut symbols);
    Ok(spec.dequantize(&symbols))
}

fn read_spec(r: &mut Reader<'_>, group: Group, degree: u8) -> std::result::Result<QuantSpec, DecodeError> {
    read_spec_for(r, group.id(), group.name(), group.channels(degree))
}

fn read_motion_spec(r: &mut Reader<'_>) -> std::result::Result<QuantSpec, DecodeError> {
    let offset = r.pos;
    let spec = read_spec_for(r, MOTION_RECORD, "ED motion", MOTION_CHANNELS)?;
    if spec.bits != ED_MOTION_BITS {
        return Err(DecodeError::InvalidHeader {
            offset,
            reason: format!("ED motion at {} bits, expected {ED_MOTION_BITS}", spec.bits),
        });
    }
    Ok(spec)
}

fn read_spec_for(
    r: &mut Reader<'_>,
    expected: u8,
    name: &str,
    expected_channels: usize,
) -> std::result::Result<QuantSpec, DecodeError> {
    let offset = r.pos;
    let bad = |reason: String| DecodeError::InvalidHeader { offset, reason };
    let id = r.u8()?;
    if id != expected {
        return Err(bad(format!("quantisation block for group {id}, expected {expected}")));
    }
    let bits = r.u8()?;
    if bits > MAX_BITS {
        return Err(bad(format!("bit width {bits} exceeds {MAX_BITS}")));
    }
    let channels = r.u16()? as usize;
    if channels != expected_channels {
        return Err(bad(format!("{channels} channels for {name}, expected {expected_channels}")));
    }
    let mut ranges = Vec::new();
    if bits > 0 {
        for c in 0..channels {
            let min = r.f32()?;
            let step = r.f32()?;
            if !(min.is_finite() && step.is_finite() && step > 0.0) {
                return Err(bad(format!("channel {c} has min {min}, step {step}")));
            }
            ranges.push(ChannelRange { min, step });
        }
    }
    Ok(QuantSpec { bits, channels, ranges })
}

pub fn decode_segment<T: Real>(bytes: &[u8]) -> Result<DecodedSegment<T>> {
    decode_segment_with(bytes, DecodeOptions::default())
}

pub fn decode_segment_with<T: Real>(bytes: &[u8], opts: DecodeOptions) -> Result<DecodedSegment<T>> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(DecodeError::BadMagic { found: magic }.into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        }
        .into());
    }
    let n = r.u32()? as usize;
    let frame_count = r.u16()? as usize;
    let degree_at = r.pos;
    let degree = r.u8()?;
    if degree > MAX_SH_DEGREE {
        return Err(DecodeError::InvalidHeader {
            offset: degree_at,
            reason: format!("SH degree {degree} exceeds {MAX_SH_DEGREE}"),
        }
        .into());
    }
    let flags_at = r.pos;
    let flags = r.u8()?;
    if flags & !FLAG_RESIDUAL != 0 {
        return Err(DecodeError::InvalidHeader {
            offset: flags_at,
            reason: format!("unknown flags {flags:#04x}"),
        }
        .into());
    }
    if frame_count == 0 {
        return Err(DecodeError::InvalidHeader {
            offset: flags_at - 3,
            reason: "segment has no frames".into(),
        }
        .into());
    }
    let residual = flags & FLAG_RESIDUAL != 0;
    let mut specs = Vec::with_capacity(frame_count);
    let mut motion_specs = Vec::with_capacity(frame_count);
    for t in 0..frame_count {
        let mut s = Vec::with_capacity(5);
        for g in Group::ALL {
            s.push(read_spec(&mut r, g, degree)?);
        }
        let s: [QuantSpec; 5] = s.try_into().unwrap();
        specs.push(s);
        motion_specs.push(if residual && t > 0 { Some(read_motion_spec(&mut r)?) } else { None });
    }
    let mut ed = None;
    if residual {
        let at = r.pos;
        let m = r.u32()? as usize;
        let radius = r.f32()?;
        let pos = read_f32s(r.take(m.checked_mul(12).ok_or(DecodeError::InvalidHeader {
            offset: at,
            reason: format!("{m} ED nodes"),
        })?)?);
        let positions: Vec<Vec3<T>> = pos
            .chunks_exact(3)
            .map(|c| Vec3::new(T::from_f32_exact(c[0]), T::from_f32_exact(c[1]), T::from_f32_exact(c[2])))
            .collect();
        ed = Some(EDGraph::from_positions(positions, T::from_f32_exact(radius)).map_err(|e| {
            DecodeError::InvalidHeader {
                offset: at,
                reason: format!("ED block: {e}"),
            }
        })?);
    }
    let m = ed.as_ref().map_or(0, EDGraph::len);
    let mut layout: Vec<(Option<RawRecord<'_>>, Vec<RawRecord<'_>>)> = Vec::with_capacity(frame_count);
    for t in 0..frame_count {
        let motion = if residual && t > 0 {
            Some(read_record(&mut r, t, MOTION_RECORD, MOTION_CHANNELS * m)?)
        } else {
            None
        };
        let mut recs = Vec::with_capacity(5);
        for g in Group::ALL {
            recs.push(read_record(&mut r, t, g.id(), n * g.channels(degree))?);
        }
        layout.push((motion, recs));
    }
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.remaining() > 0 {
        return Err(DecodeError::TrailingBytes { count: r.remaining() }.into());
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(DecodeError::Checksum { stored, computed }.into());
    }

    let template = FrameState::new(
        0,
        (0..n)
            .map(|_| crate::kernel::GaussianKernel {
                position: Vec3::zero(),
                rotation: Quaternion::identity(),
                log_scale: Vec3::zero(),
                opacity_logit: T::zero(),
                sh: crate::geom::SHCoefficients::zeros(degree).expect("degree checked"),
            })
            .collect(),
    );
    let rebuild = |t: usize, recs: &[RawRecord<'_>], base: Option<&FrameState<T>>| -> Result<(FrameState<T>, FrameState<T>)> {
        let mut out = template.clone();
        out.frame = t;
        let mut unnormalized = None;
        for (g, rec) in Group::ALL.into_iter().zip(recs) {
            let spec = &specs[t][g as usize];
            let mut vals: Vec<T> = decode_values(rec, spec, t, g.id())?;
            if let Some(b) = base {
                for (v, w) in vals.iter_mut().zip(group_values(b, g)) {
                    *v += w;
                }
            }
            set_group_values(&mut out, g, &vals)?;
            if g == Group::Rotation && (spec.bits > 0 || base.is_some()) {
                unnormalized = Some(out.clone());
                finish_rotations(&mut out);
            }
        }
        let reported = match (unnormalized, opts.normalize_rotations) {
            (Some(mut raw), false) => {
                for (a, b) in raw.kernels.iter_mut().zip(&out.kernels) {
                    let q = a.rotation;
                    *a = b.clone();
                    a.rotation = q;
                }
                raw
            }
            _ => out.clone(),
        };
        Ok((out, reported))
    };

    let (dkey, key_out) = rebuild(0, &layout[0].1, None)?;
    let mut frames = vec![key_out];
    let mut motions = vec![vec![DualQuaternion::identity(); m]];
    if let Some(ed) = &ed {
        let bindings = bind_points(&dkey.positions(), ed)?;
        let rest: Result<Vec<_>> = layout[1..]
            .par_iter()
            .enumerate()
            .map(|(i, (mrec, recs))| {
                let t = i + 1;
                let mrec = mrec.as_ref().expect("residual frames carry motion");
                let mspec = motion_specs[t].as_ref().expect("residual frames carry a motion spec");
                let vals: Vec<T> = decode_values(mrec, mspec, t, MOTION_RECORD)?;
                let mot = motion_from_offsets(&vals);
                let ed_t = ed.with_motions(&mot)?;
                let warped = warp_frame(&dkey, &bindings, &ed_t, t)?;
                let (_, f) = rebuild(t, recs, Some(&warped))?;
                Ok((f, mot))
            })
            .collect();
        for (f, mot) in rest? {
            frames.push(f);
            motions.push(mot);
        }
    } else {
        let rest: Result<Vec<_>> = layout[1..]
            .par_iter()
            .enumerate()
            .map(|(i, (_, recs))| Ok(rebuild(i + 1, recs, None)?.1))
            .collect();
        frames.extend(rest?);
    }
    Ok(DecodedSegment {
        frames,
        motion: ed.map(|ed| SegmentMotion { ed, motions }),
        specs,
        residual,
    })
}

/// Size of `frames` stored as raw 32-bit floats.
pub fn raw_segment_bytes(kernel_count: usize, degree: u8, frames: usize) -> usize {
    frames * raw_frame_bytes(kernel_count, degree)
}

/// Reconstruction error of one group in one frame, measured on the coded
/// quantity: the value itself, or for non-key appearance in residual mode the
/// offset from the keyframe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub frame: usize,
    pub group: Group,
    pub bits: u8,
    pub max_error: f64,
    pub max_half_step: f64,
    /// Largest per-value error over its channel's half step (0 for raw).
    pub worst_ratio: f64,
    /// Whether raw values came back bit-exact; `None` when not applicable.
    pub exact: Option<bool>,
}

impl GroupError {
    pub fn within_bound(&self) -> bool {
        self.worst_ratio <= 1.0 && self.exact != Some(false)
    }
}

/// Per-frame, per-group errors of `decoded` (decoded without rotation
/// renormalisation) against the encoder's `input`.
pub fn coded_errors<T: Real>(input: &[FrameState<T>], decoded: &DecodedSegment<T>) -> Result<Vec<GroupError>> {
    if input.len() != decoded.frames.len() {
        return Err(Error::LengthMismatch {
            what: "decoded frames",
            expected: input.len(),
            got: decoded.frames.len(),
        });
    }
    let (key_in, key_out) = (&input[0], &decoded.frames[0]);
    let mut out = Vec::with_capacity(5 * input.len());
    for (t, (fin, fout)) in input.iter().zip(&decoded.frames).enumerate() {
        fin.check_same_len(fout, "decoded kernels")?;
        for g in Group::ALL {
            let spec = &decoded.specs[t][g as usize];
            let a = if g == Group::Rotation {
                aligned_rotations(fin, fout)
            } else {
                group_values(fin, g)
            };
            let b = group_values(fout, g);
            let (a, b): (Vec<T>, Vec<T>) = if decoded.residual && t > 0 && !g.is_motion() {
                let (ki, ko) = (group_values(key_in, g), group_values(key_out, g));
                (
                    a.iter().zip(&ki).map(|(x, k)| *x - *k).collect(),
                    b.iter().zip(&ko).map(|(x, k)| *x - *k).collect(),
                )
            } else {
                (a, b)
            };
            let mut e = GroupError {
                frame: t,
                group: g,
                bits: spec.bits,
                max_error: 0.0,
                max_half_step: (0..spec.channels).map(|c| spec.half_step(c)).fold(0.0, f64::max),
                worst_ratio: 0.0,
                exact: None,
            };
            let raw_exact = spec.is_raw() && !(decoded.residual && t > 0);
            if raw_exact {
                e.exact = Some(true);
            }
            for (i, (x, y)) in a.iter().zip(&b).enumerate() {
                let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
                let err = (x - y).abs();
                e.max_error = e.max_error.max(err);
                if spec.is_raw() {
                    if raw_exact && x.to_bits() != y.to_bits() {
                        e.exact = Some(false);
                    }
                    continue;
                }
                // Slack for the f64 arithmetic of the reconstruction itself.
                let tol = spec.half_step(i % spec.channels) * (1.0 + 1e-9) + 1e-12 * (1.0 + x.abs());
                e.worst_ratio = e.worst_ratio.max(err / tol);
            }
            out.push(e);
        }
    }
    Ok(out)
}
