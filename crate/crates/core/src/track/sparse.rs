//! Block-sparse symmetric system with 6×6 blocks and a block-Jacobi
//! preconditioned conjugate-gradient solver.

use std::collections::BTreeSet;

use crate::scalar::Real;

pub(crate) type Block<T> = [[T; 6]; 6];

pub(crate) fn zero_block<T: Real>() -> Block<T> {
    [[T::zero(); 6]; 6]
}

/// Fixed sparsity pattern in CSR form; blocks are dense.
pub(crate) struct BlockSparse<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    blocks: Vec<Block<T>>,
    diag_slot: Vec<usize>,
}

impl<T: Real> BlockSparse<T> {
    pub fn from_pattern(n: usize, pairs: &BTreeSet<(usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            rows[i].push(i);
        }
        for &(i, j) in pairs {
            if i != j {
                rows[i].push(j);
                rows[j].push(i);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut diag_slot = vec![0; n];
        row_ptr.push(0);
        for (i, r) in rows.iter_mut().enumerate() {
            r.sort_unstable();
            r.dedup();
            for &c in r.iter() {
                if c == i {
                    diag_slot[i] = cols.len();
                }
                cols.push(c);
            }
            row_ptr.push(cols.len());
        }
        let blocks = vec![zero_block(); cols.len()];
        Self {
            n,
            row_ptr,
            cols,
            blocks,
            diag_slot,
        }
    }

    pub fn clear(&mut self) {
        for b in &mut self.blocks {
            *b = zero_block();
        }
    }

    #[inline]
    pub fn slot(&self, i: usize, j: usize) -> usize {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        self.row_ptr[i] + row.binary_search(&j).expect("pattern covers block")
    }

    #[inline]
    pub fn block_mut(&mut self, slot: usize) -> &mut Block<T> {
        &mut self.blocks[slot]
    }

    pub fn diag(&self, i: usize) -> &Block<T> {
        &self.blocks[self.diag_slot[i]]
    }

    /// `y = (A + D) x` where `D` is the block diagonal `extra`.
    pub fn mul(&self, x: &[T], extra: &[[T; 6]], y: &mut [T]) {
        for i in 0..self.n {
            let mut acc = [T::zero(); 6];
            for s in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[s];
                let b = &self.blocks[s];
                let xj = &x[6 * j..6 * j + 6];
                for r in 0..6 {
                    let mut v = T::zero();
                    for c in 0..6 {
                        v += b[r][c] * xj[c];
                    }
                    acc[r] += v;
                }
            }
            for r in 0..6 {
                y[6 * i + r] = acc[r] + extra[i][r] * x[6 * i + r];
            }
        }
    }

    /// Solves `(A + diag(extra)) x = b`. `None` when the preconditioner or the
    /// iteration breaks down, i.e. the damped system is not positive definite.
    pub fn solve_pcg(&self, b: &[T], extra: &[[T; 6]], tol: T, max_iter: usize) -> Option<Vec<T>> {
        let dim = 6 * self.n;
        let mut precond = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut d = *self.diag(i);
            for r in 0..6 {
                d[r][r] += extra[i][r];
            }
            precond.push(cholesky6(&d)?);
        }
        let apply_precond = |r: &[T], z: &mut [T]| {
            for i in 0..self.n {
                let zi = cholesky6_solve(&precond[i], &r[6 * i..6 * i + 6]);
                z[6 * i..6 * i + 6].copy_from_slice(&zi);
            }
        };
        let b_norm = dot(b, b).sqrt();
        let mut x = vec![T::zero(); dim];
        if b_norm == T::zero() {
            return Some(x);
        }
        let mut r = b.to_vec();
        let mut z = vec![T::zero(); dim];
        apply_precond(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![T::zero(); dim];
        for _ in 0..max_iter {
            self.mul(&p, extra, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > T::zero()) || !pap.is_finite() {
                return None;
            }
            let alpha = rz / pap;
            for k in 0..dim {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            if dot(&r, &r).sqrt() <= tol * b_norm {
                break;
            }
            apply_precond(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..dim {
                p[k] = z[k] + beta * p[k];
            }
        }
        if x.iter().all(|v| v.is_finite()) {
            Some(x)
        } else {
            None
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// Lower Cholesky factor of an SPD 6×6 block.
fn cholesky6<T: Real>(a: &Block<T>) -> Option<Block<T>> {
    let mut l = zero_block::<T>();
    for i in 0..6 {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn cholesky6_solve<T: Real>(l: &Block<T>, b: &[T]) -> [T; 6] {
    let mut y = [T::zero(); 6];
    for i in 0..6 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [T::zero(); 6];
    for i in (0..6).rev() {
        let mut s = y[i];
        for k in i + 1..6 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcg_solves_small_spd_system() {
        let mut pairs = BTreeSet::new();
        pairs.insert((0, 1));
        let mut a = BlockSparse::<f64>::from_pattern(2, &pairs);
        let s00 = a.slot(0, 0);
        let s11 = a.slot(1, 1);
        let s01 = a.slot(0, 1);
        let s10 = a.slot(1, 0);
        for r in 0..6 {
            a.block_mut(s00)[r][r] = 4.0 + r as f64;
            a.block_mut(s11)[r][r] = 3.0;
            a.block_mut(s01)[r][r] = 1.0;
            a.block_mut(s10)[r][r] = 1.0;
        }
        let b: Vec<f64> = (0..12).map(|i| i as f64 - 3.0).collect();
        let extra = vec![[0.0; 6]; 2];
        let x = a.solve_pcg(&b, &extra, 1e-14, 100).unwrap();
        let mut ax = vec![0.0; 12];
        a.mul(&x, &extra, &mut ax);
        for k in 0..12 {
            assert!((ax[k] - b[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_block_detected() {
        let a = BlockSparse::<f64>::from_pattern(1, &BTreeSet::new());
        let extra = vec![[0.0; 6]; 1];
        assert!(a.solve_pcg(&[1.0; 6], &extra, 1e-12, 10).is_none());
    }
}
