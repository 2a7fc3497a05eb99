//! Byte-renormalised rANS with a 32-bit state and 12-bit frequencies.
//!
//! The encoder consumes symbols last-to-first so the decoder emits them in
//! order; the stream starts with the final encoder state (little-endian)
//! followed by renormalisation bytes in the order the decoder reads them.

use super::DecodeError;
use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 12;
pub const PROB_SCALE: u32 = 1 << PROB_BITS;
/// Lower bound of the normalised state interval `[L, 256·L)`.
pub const RANS_L: u32 = 1 << 23;

/// Symbol frequencies normalised to sum to exactly [`PROB_SCALE`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyTable {
    /// Present symbols, strictly ascending, each with frequency ≥ 1.
    entries: Vec<(u32, u32)>,
    cum: Vec<u32>,
    /// Symbol → entry index (`u32::MAX` when absent).
    lookup: Vec<u32>,
    /// Slot → entry index.
    slots: Vec<u16>,
}

impl FrequencyTable {
    /// Normalises raw symbol counts. Every symbol with a positive count keeps a
    /// frequency of at least 1; rounding surplus or deficit is settled greedily
    /// by smallest coding-cost increase (ties to the lower symbol).
    pub fn from_counts(counts: &[(u32, u64)]) -> Result<Self> {
        let mut present: Vec<(u32, u64)> = counts.iter().copied().filter(|c| c.1 > 0).collect();
        present.sort_unstable_by_key(|c| c.0);
        if present.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("duplicate symbol in frequency counts".into()));
        }
        if present.len() > PROB_SCALE as usize {
            return Err(Error::TableOverflow {
                distinct: present.len(),
                capacity: PROB_SCALE as usize,
            });
        }
        if present.is_empty() {
            return Self::from_entries(vec![]).map_err(Error::from);
        }
        let total: u64 = present.iter().map(|c| c.1).sum();
        let mut freq: Vec<u32> = present
            .iter()
            .map(|&(_, c)| (((c as f64) * PROB_SCALE as f64 / total as f64).round() as u32).max(1))
            .collect();
        let mut sum: i64 = freq.iter().map(|&f| f as i64).sum();
        while sum != PROB_SCALE as i64 {
            let grow = sum < PROB_SCALE as i64;
            let mut best: Option<(usize, f64)> = None;
            for (i, (&(_, c), &f)) in present.iter().zip(&freq).enumerate() {
                if !grow && f <= 1 {
                    continue;
                }
                // Change in Σ c·log2(1/f) caused by f → f±1; grow picks the
                // largest gain, shrink the smallest loss.
                let delta = if grow {
                    -(c as f64) * ((f + 1) as f64 / f as f64).log2()
                } else {
                    (c as f64) * (f as f64 / (f - 1) as f64).log2()
                };
                if best.is_none_or(|(_, d)| delta < d) {
                    best = Some((i, delta));
                }
            }
            let (i, _) = best.expect("a non-empty table can always be adjusted");
            if grow {
                freq[i] += 1;
                sum += 1;
            } else {
                freq[i] -= 1;
                sum -= 1;
            }
        }
        let entries = present.iter().zip(freq).map(|(&(s, _), f)| (s, f)).collect();
        Self::from_entries(entries).map_err(Error::from)
    }

    pub fn from_symbols(symbols: &[u32]) -> Result<Self> {
        let mut sorted = symbols.to_vec();
        sorted.sort_unstable();
        let mut counts: Vec<(u32, u64)> = Vec::new();
        for s in sorted {
            match counts.last_mut() {
                Some((last, c)) if *last == s => *c += 1,
                _ => counts.push((s, 1)),
            }
        }
        Self::from_counts(&counts)
    }

    /// Validates an already-normalised table (as read from a stream). An empty
    /// table is allowed and can only code the empty payload.
    pub fn from_entries(entries: Vec<(u32, u32)>) -> std::result::Result<Self, DecodeError> {
        let bad = |reason: String| DecodeError::InvalidTable { reason };
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(bad("symbols not strictly ascending".into()));
        }
        if let Some(&(s, _)) = entries.iter().find(|e| e.1 == 0) {
            return Err(bad(format!("symbol {s} has zero frequency")));
        }
        let sum: u64 = entries.iter().map(|e| e.1 as u64).sum();
        if !entries.is_empty() && sum != PROB_SCALE as u64 {
            return Err(bad(format!("frequencies sum to {sum}, expected {PROB_SCALE}")));
        }
        let mut cum = Vec::with_capacity(entries.len());
        let mut slots = Vec::with_capacity(if entries.is_empty() { 0 } else { PROB_SCALE as usize });
        let mut acc = 0u32;
        for (i, &(_, f)) in entries.iter().enumerate() {
            cum.push(acc);
            acc += f;
            slots.extend(std::iter::repeat_n(i as u16, f as usize));
        }
        let alphabet = entries.last().map_or(0, |e| e.0 as usize + 1);
        let mut lookup = vec![u32::MAX; alphabet];
        for (i, &(s, _)) in entries.iter().enumerate() {
            lookup[s as usize] = i as u32;
        }
        Ok(Self {
            entries,
            cum,
            lookup,
            slots,
        })
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn freq(&self, symbol: u32) -> u32 {
        self.index_of(symbol).map_or(0, |i| self.entries[i].1)
    }

    fn index_of(&self, symbol: u32) -> Option<usize> {
        match self.lookup.get(symbol as usize) {
            Some(&i) if i != u32::MAX => Some(i as usize),
            _ => None,
        }
    }

    /// Ideal code length in bits of `symbols` under this table.
    pub fn cost_bits(&self, symbols: &[u32]) -> f64 {
        symbols
            .iter()
            .map(|&s| (PROB_SCALE as f64 / self.freq(s) as f64).log2())
            .sum()
    }
}

pub fn rans_encode(symbols: &[u32], table: &FrequencyTable) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(symbols.len() / 2 + 8);
    let mut x = RANS_L;
    for &s in symbols.iter().rev() {
        let i = table.index_of(s).ok_or(Error::ZeroFrequency { symbol: s })?;
        let f = table.entries[i].1;
        let c = table.cum[i];
        let x_max = ((RANS_L >> PROB_BITS) << 8) * f;
        while x >= x_max {
            out.push(x as u8);
            x >>= 8;
        }
        x = ((x / f) << PROB_BITS) + (x % f) + c;
    }
    out.extend_from_slice(&x.to_be_bytes());
    out.reverse();
    Ok(out)
}

/// Inverse of [`rans_encode`]. Fails on exhausted input, unconsumed bytes, or
/// a final state other than the encoder's initial state.
pub fn rans_decode(stream: &[u8], table: &FrequencyTable, count: usize) -> std::result::Result<Vec<u32>, DecodeError> {
    if stream.len() < 4 {
        return Err(DecodeError::RansUnderflow { position: stream.len() });
    }
    if count > 0 && table.is_empty() {
        return Err(DecodeError::InvalidTable {
            reason: format!("empty table cannot decode {count} symbols"),
        });
    }
    let mut x = u32::from_le_bytes([stream[0], stream[1], stream[2], stream[3]]);
    let mut pos = 4;
    let mut out = Vec::with_capacity(count.min(stream.len().saturating_mul(8) + 4096));
    for _ in 0..count {
        if x < RANS_L {
            return Err(DecodeError::RansState { state: x, position: pos });
        }
        let slot = x & (PROB_SCALE - 1);
        let i = table.slots[slot as usize] as usize;
        let (s, f) = table.entries[i];
        x = f * (x >> PROB_BITS) + slot - table.cum[i];
        while x < RANS_L {
            let Some(&b) = stream.get(pos) else {
                return Err(DecodeError::RansUnderflow { position: pos });
            };
            x = (x << 8) | b as u32;
            pos += 1;
        }
        out.push(s);
    }
    if pos != stream.len() {
        return Err(DecodeError::RansTrailing {
            consumed: pos,
            len: stream.len(),
        });
    }
    if x != RANS_L {
        return Err(DecodeError::RansState { state: x, position: pos });
    }
    Ok(out)
}
