//! Per-channel range quantisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAX_BITS: u8 = 16;

/// Range of one channel as stored: `v′ = min + sym·step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f32,
    pub step: f32,
}

impl ChannelRange {
    /// Fits `[lo, hi]` at `bits` with a step no finer than `floor`. `min` is
    /// rounded down and `step` up to the nearest `f32` so the stored grid
    /// still covers the whole range. A degenerate range gets step 1.
    pub fn fit(lo: f64, hi: f64, bits: u8, floor: f64) -> Self {
        let min = f32_down(lo);
        let levels = ((1u32 << bits) - 1) as f64;
        let span = hi - min as f64;
        let step = (span / levels).max(floor);
        let step = if step > 0.0 { f32_up(step) } else { 1.0 };
        Self { min, step }
    }

    /// Fits `[lo, hi]` on a grid `k·2^e` that contains 0 exactly, so values
    /// within half a step of 0 reconstruct as exactly 0.
    pub fn fit_dyadic(lo: f64, hi: f64, bits: u8) -> Self {
        let levels = ((1u32 << bits) - 1) as f64;
        let mut step = ((hi - lo) / levels).max(f64::from(f32::MIN_POSITIVE) * 1024.0).log2().ceil().exp2();
        loop {
            let min = (lo / step).round() * step;
            if ((hi - min) / step).round() <= levels {
                return Self {
                    min: min as f32,
                    step: step as f32,
                };
            }
            step *= 2.0;
        }
    }

    #[inline]
    pub fn quantize(&self, v: f64, bits: u8) -> u32 {
        let top = ((1u32 << bits) - 1) as f64;
        ((v - self.min as f64) / self.step as f64).round().clamp(0.0, top) as u32
    }

    #[inline]
    pub fn dequantize(&self, sym: u32) -> f64 {
        self.min as f64 + sym as f64 * self.step as f64
    }
}

fn f32_down(x: f64) -> f32 {
    let s = x as f32;
    if (s as f64) > x {
        s.next_down()
    } else {
        s
    }
}

fn f32_up(x: f64) -> f32 {
    let s = x as f32;
    if (s as f64) < x {
        s.next_up()
    } else {
        s
    }
}

/// Quantisation of one attribute group. `bits == 0` means stored raw as `f32`
/// and carries no ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u8,
    pub channels: usize,
    pub ranges: Vec<ChannelRange>,
}

impl QuantSpec {
    pub fn raw(channels: usize) -> Self {
        Self {
            bits: 0,
            channels,
            ranges: vec![],
        }
    }

    /// Fits per-channel ranges to kernel-major interleaved `values`.
    pub fn fit<T: Real>(values: &[T], channels: usize, bits: u8) -> Result<Self> {
        Self::fit_with_floor(values, channels, bits, &vec![0.0; channels])
    }

    /// As [`QuantSpec::fit`], with a lower bound on each channel's step.
    pub fn fit_with_floor<T: Real>(values: &[T], channels: usize, bits: u8, floor: &[f64]) -> Result<Self> {
        if floor.len() != channels {
            return Err(Error::LengthMismatch {
                what: "step floors",
                expected: channels,
                got: floor.len(),
            });
        }
        if bits > MAX_BITS {
            return Err(Error::InvalidParameter(format!("bit width {bits} exceeds {MAX_BITS}")));
        }
        check_layout(values, channels)?;
        if bits == 0 {
            return Ok(Self::raw(channels));
        }
        let mut lo = vec![f64::INFINITY; channels];
        let mut hi = vec![f64::NEG_INFINITY; channels];
        for (i, v) in values.iter().enumerate() {
            let v = v.to_f64_lossy();
            let c = i % channels;
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
        let ranges = (0..channels)
            .map(|c| {
                if lo[c].is_finite() {
                    ChannelRange::fit(lo[c], hi[c], bits, floor[c])
                } else {
                    ChannelRange { min: 0.0, step: 1.0 }
                }
            })
            .collect();
        Ok(Self { bits, channels, ranges })
    }

    /// As [`QuantSpec::fit`] on dyadic grids containing 0.
    pub fn fit_dyadic<T: Real>(values: &[T], channels: usize, bits: u8) -> Result<Self> {
        if bits == 0 || bits > MAX_BITS {
            return Err(Error::InvalidParameter(format!("dyadic grid needs 1..={MAX_BITS} bits, got {bits}")));
        }
        check_layout(values, channels)?;
        let mut lo = vec![0.0f64; channels];
        let mut hi = vec![0.0f64; channels];
        for (i, v) in values.iter().enumerate() {
            let v = v.to_f64_lossy();
            let c = i % channels;
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
        let ranges = (0..channels).map(|c| ChannelRange::fit_dyadic(lo[c], hi[c], bits)).collect();
        Ok(Self { bits, channels, ranges })
    }

    pub fn is_raw(&self) -> bool {
        self.bits == 0
    }

    /// Largest per-channel reconstruction error bound (`step/2`), 0 for raw.
    pub fn half_step(&self, channel: usize) -> f64 {
        self.ranges.get(channel).map_or(0.0, |r| 0.5 * r.step as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits > MAX_BITS {
            return Err(Error::InvalidParameter(format!("bit width {} exceeds {MAX_BITS}", self.bits)));
        }
        let want = if self.bits == 0 { 0 } else { self.channels };
        if self.ranges.len() != want {
            return Err(Error::LengthMismatch {
                what: "quantisation ranges",
                expected: want,
                got: self.ranges.len(),
            });
        }
        if let Some(i) = self.ranges.iter().position(|r| !(r.step > 0.0 && r.step.is_finite() && r.min.is_finite())) {
            return Err(Error::InvalidParameter(format!("channel {i} needs a finite positive step")));
        }
        Ok(())
    }

    pub fn quantize<T: Real>(&self, values: &[T]) -> Result<Vec<u32>> {
        if self.is_raw() {
            return Err(Error::InvalidParameter("raw group has no quantiser".into()));
        }
        check_layout(values, self.channels)?;
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, v)| self.ranges[i % self.channels].quantize(v.to_f64_lossy(), self.bits))
            .collect())
    }

    /// Rotates each channel's alphabet so the symbol of 0.0 becomes 0. Residual
    /// channels then share one peak in a common frequency table.
    pub fn align(&self, symbols: &mut [u32]) {
        let mask = (1u32 << self.bits) - 1;
        let zeros = self.zero_symbols();
        for (i, s) in symbols.iter_mut().enumerate() {
            *s = s.wrapping_sub(zeros[i % self.channels]) & mask;
        }
    }

    /// Inverse of [`QuantSpec::align`].
    pub fn unalign(&self, symbols: &mut [u32]) {
        let mask = (1u32 << self.bits) - 1;
        let zeros = self.zero_symbols();
        for (i, s) in symbols.iter_mut().enumerate() {
            *s = s.wrapping_add(zeros[i % self.channels]) & mask;
        }
    }

    fn zero_symbols(&self) -> Vec<u32> {
        self.ranges.iter().map(|r| r.quantize(0.0, self.bits)).collect()
    }

    pub fn dequantize<T: Real>(&self, symbols: &[u32]) -> Vec<T> {
        symbols
            .iter()
            .enumerate()
            .map(|(i, &s)| T::c(self.ranges[i % self.channels].dequantize(s)))
            .collect()
    }
}

fn check_layout<T: Real>(values: &[T], channels: usize) -> Result<()> {
    if channels == 0 || values.len() % channels != 0 {
        return Err(Error::InvalidParameter(format!(
            "{} values do not split into {channels} channels",
            values.len()
        )));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "quantiser input",
            index,
        });
    }
    Ok(())
}
