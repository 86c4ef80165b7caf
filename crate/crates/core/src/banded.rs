//! Symmetric tridiagonal matrices and their bidiagonal Cholesky factors.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fmath;

/// Symmetric tridiagonal matrix stored by its diagonal and first off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: alloc::vec![0.0; n],
            off: alloc::vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            diag: self
                .diag
                .iter()
                .zip(&other.diag)
                .map(|(a, b)| a + b)
                .collect(),
            off: self
                .off
                .iter()
                .zip(&other.off)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// `self * x` applied to every column of `x`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut y = DMatrix::zeros(n, x.ncols());
        for c in 0..x.ncols() {
            let xc = x.column(c);
            let mut yc = y.column_mut(c);
            for i in 0..n {
                let mut s = self.diag[i] * xc[i];
                if i > 0 {
                    s += self.off[i - 1] * xc[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * xc[i + 1];
                }
                yc[i] = s;
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }

    /// Cholesky factorization `L L^T` with `L` lower bidiagonal.
    pub fn cholesky(&self) -> Result<LowerBidiagonal> {
        let n = self.dim();
        let mut diag = Vec::with_capacity(n);
        let mut sub = Vec::with_capacity(n.saturating_sub(1));
        let scale = self.diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let mut carry = 0.0;
        for i in 0..n {
            let pivot = self.diag[i] - carry;
            if !(pivot > 1e-14 * scale) {
                return Err(Error::NotPositiveDefinite(format!(
                    "Cholesky pivot {pivot:e} at row {i}"
                )));
            }
            let d = fmath::sqrt(pivot);
            diag.push(d);
            if i + 1 < n {
                let l = self.off[i] / d;
                sub.push(l);
                carry = l * l;
            }
        }
        Ok(LowerBidiagonal { diag, sub })
    }
}

/// Lower bidiagonal matrix with diagonal `diag` and subdiagonal `sub`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBidiagonal {
    pub diag: Vec<f64>,
    pub sub: Vec<f64>,
}

impl LowerBidiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `L^{-1} x` by forward substitution, column by column.
    pub fn solve(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        for mut col in y.column_iter_mut() {
            col[0] /= self.diag[0];
            for i in 1..self.dim() {
                col[i] = (col[i] - self.sub[i - 1] * col[i - 1]) / self.diag[i];
            }
        }
        y
    }

    /// `L^{-T} x` by backward substitution.
    pub fn solve_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut y = x.clone();
        for mut col in y.column_iter_mut() {
            col[n - 1] /= self.diag[n - 1];
            for i in (0..n - 1).rev() {
                col[i] = (col[i] - self.sub[i] * col[i + 1]) / self.diag[i];
            }
        }
        y
    }

    /// `L^T x`.
    pub fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut y = DMatrix::zeros(n, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = self.diag[i] * x[(i, c)];
                if i + 1 < n {
                    s += self.sub[i] * x[(i + 1, c)];
                }
                y[(i, c)] = s;
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i + 1, i)] = self.sub[i];
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> SymTridiagonal {
        SymTridiagonal {
            diag: vec![4.0, 5.0, 6.0, 3.0],
            off: vec![1.0, -2.0, 0.5],
        }
    }

    #[test]
    fn cholesky_reproduces_matrix() {
        let a = sample();
        let l = a.cholesky().unwrap().to_dense();
        assert!((&l * l.transpose() - a.to_dense()).norm() < 1e-13);
    }

    #[test]
    fn solves_invert_factor() {
        let a = sample();
        let l = a.cholesky().unwrap();
        let x = DMatrix::from_fn(4, 2, |i, j| (i + 3 * j) as f64 - 1.5);
        let ld = l.to_dense();
        assert!((&ld * l.solve(&x) - &x).norm() < 1e-13);
        assert!((ld.transpose() * l.solve_transpose(&x) - &x).norm() < 1e-13);
        assert!((l.apply_transpose(&x) - ld.transpose() * &x).norm() < 1e-13);
        assert!((a.apply(&x) - a.to_dense() * &x).norm() < 1e-13);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = SymTridiagonal {
            diag: vec![1.0, 1.0],
            off: vec![2.0],
        };
        assert!(matches!(a.cholesky(), Err(Error::NotPositiveDefinite(_))));
    }
}
