//! Symbol tokenisation ahead of rANS. Aligned symbols are read as signed
//! offsets from zero, zigzag-mapped, and split into a token (octave plus one
//! mantissa bit) that is entropy coded and low bits that are stored raw. The
//! frequency table then has at most 32 entries whatever the alphabet size.

use super::container::DecodeError;

/// Tokens below this value carry no extra bits.
const DIRECT: u32 = 4;
pub const MAX_TOKENS: u32 = 32;

#[inline]
fn zigzag(sym: u32, bits: u8) -> u32 {
    let half = 1u32 << (bits - 1);
    if sym < half {
        2 * sym
    } else {
        2 * ((1u32 << bits) - sym) - 1
    }
}

#[inline]
fn unzigzag(u: u32, bits: u8) -> u32 {
    if u % 2 == 0 {
        u / 2
    } else {
        (1u32 << bits) - (u + 1) / 2
    }
}

#[inline]
fn split(u: u32) -> (u32, u32, u32) {
    if u < DIRECT {
        return (u, 0, 0);
    }
    let k = 31 - u.leading_zeros();
    let m = (u >> (k - 1)) & 1;
    (2 * k + m, k - 1, u & ((1 << (k - 1)) - 1))
}

#[inline]
fn extra_bits(token: u32) -> u32 {
    if token < DIRECT { 0 } else { token / 2 - 1 }
}

#[derive(Default)]
struct BitWriter {
    buf: Vec<u8>,
    acc: u64,
    fill: u32,
}

impl BitWriter {
    fn put(&mut self, value: u32, n: u32) {
        self.acc |= (value as u64) << self.fill;
        self.fill += n;
        while self.fill >= 8 {
            self.buf.push(self.acc as u8);
            self.acc >>= 8;
            self.fill -= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.fill > 0 {
            self.buf.push(self.acc as u8);
        }
        self.buf
    }
}

struct BitReader<'a> {
    buf: &'a [u8],
    pos: usize,
    acc: u64,
    fill: u32,
}

impl<'a> BitReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0, acc: 0, fill: 0 }
    }

    fn get(&mut self, n: u32) -> Result<u32, DecodeError> {
        while self.fill < n {
            let b = *self.buf.get(self.pos).ok_or(DecodeError::InvalidTable {
                reason: format!("raw bits exhausted after {} bytes", self.buf.len()),
            })?;
            self.acc |= (b as u64) << self.fill;
            self.pos += 1;
            self.fill += 8;
        }
        let v = (self.acc & ((1u64 << n) - 1)) as u32;
        self.acc >>= n;
        self.fill -= n;
        Ok(v)
    }
}

/// Splits `bits`-wide symbols into tokens and packed raw bits.
pub fn tokenize(symbols: &[u32], bits: u8) -> (Vec<u32>, Vec<u8>) {
    let mut w = BitWriter::default();
    let tokens = symbols
        .iter()
        .map(|&s| {
            let (t, n, v) = split(zigzag(s, bits));
            w.put(v, n);
            t
        })
        .collect();
    (tokens, w.finish())
}

/// Inverse of [`tokenize`]; the raw bits must be consumed exactly.
pub fn detokenize(tokens: &[u32], raw: &[u8], bits: u8) -> Result<Vec<u32>, DecodeError> {
    let mut r = BitReader::new(raw);
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let u = if t < DIRECT {
            t
        } else {
            let k = t / 2;
            let low = r.get(extra_bits(t))?;
            (1 << k) | ((t & 1) << (k - 1)) | low
        };
        if u >> bits != 0 {
            return Err(DecodeError::InvalidTable {
                reason: format!("token {t} outside the {bits}-bit alphabet"),
            });
        }
        out.push(unzigzag(u, bits));
    }
    if r.pos != raw.len() || r.acc != 0 {
        return Err(DecodeError::InvalidTable {
            reason: format!("{} raw bytes, {} consumed", raw.len(), r.pos),
        });
    }
    Ok(out)
}
