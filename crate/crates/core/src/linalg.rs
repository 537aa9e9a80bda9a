//! Banded Cholesky factorization for the finite-difference operators.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math::sqrt;

/// Cholesky factor `L` of a symmetric positive definite band matrix with
/// half-bandwidth `bw` (entries with `|i - j| > bw` are zero).
///
/// Row `i` of `L` stores columns `i - bw ..= i`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the matrix whose lower band is given by `entry(i, j)` for
    /// `j <= i` and `i - j <= bw`.
    pub fn factor<F>(n: usize, bw: usize, entry: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64,
    {
        let width = bw + 1;
        let mut l = vec![0.0; n * width];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = entry(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i * width + k + bw - i] * l[j * width + k + bw - j];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Numeric(format!(
                            "banded Cholesky failed at row {i}: pivot {s} is not positive"
                        )));
                    }
                    l[i * width + bw] = sqrt(s);
                } else {
                    l[i * width + j + bw - i] = s / l[j * width + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + j + self.bw - i]
    }

    /// Solves `A x = b` in place.
    #[allow(clippy::needless_range_loop)]
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        check_dim(self.n, b.len())?;
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.at(i, k) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.at(k, i) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}
