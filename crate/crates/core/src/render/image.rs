use crate::scalar::Real;

/// Row-major RGB image, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    /// Black image.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); 3 * width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [T; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, o: &Self) -> bool {
        self.width == o.width && self.height == o.height
    }

    /// Mean absolute per-channel difference; sizes must match.
    pub fn mean_abs_diff(&self, o: &Self) -> T {
        debug_assert!(self.same_size(o));
        if self.data.is_empty() {
            return T::zero();
        }
        let s: T = self.data.iter().zip(&o.data).map(|(a, b)| (*a - *b).abs()).sum();
        s / T::from_usize_lossy(self.data.len())
    }

    pub fn mean_sq_diff(&self, o: &Self) -> f64 {
        debug_assert!(self.same_size(o));
        if self.data.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&o.data)
            .map(|(a, b)| {
                let d = (*a - *b).to_f64_lossy();
                d * d
            })
            .sum();
        s / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean over `f×f` blocks; dimensions must be multiples of `f`.
    pub fn downsample(&self, f: usize) -> Self {
        let (w, h) = (self.width / f, self.height / f);
        let mut out = Self::new(w, h);
        let inv = T::one() / T::from_usize_lossy(f * f);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [T::zero(); 3];
                for dy in 0..f {
                    for dx in 0..f {
                        let p = self.get(f * x + dx, f * y + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set(x, y, acc.map(|v| v * inv));
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::c(v.to_f64_lossy())).collect(),
        }
    }
}
