//! Dense singular value decomposition with an accuracy check.
//!
//! The fast path is `faer`'s blocked SVD. Every result is checked by
//! recomposition, and failures are recomputed with one-sided Jacobi
//! rotations, which are accurate to rounding level but slower. (nalgebra's
//! own bidiagonal SVD misses by up to 1e-10 relative on some small, wide
//! matrices, so it is not used here.)

use nalgebra::{DMatrix, DVector};

use crate::fmath;

/// Largest accepted relative recomposition error of the fast path.
const RECOMPOSE_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD `a = u diag(s) v^T`; `s` is not necessarily sorted.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn svd(a: &DMatrix<f64>) -> Svd {
    let norm = a.norm();
    if norm == 0.0 {
        let k = a.nrows().min(a.ncols());
        return Svd {
            u: DMatrix::zeros(a.nrows(), k),
            s: DVector::zeros(k),
            v: DMatrix::zeros(a.ncols(), k),
        };
    }
    if let Some(fast) = faer_svd(a) {
        let mut us = fast.u.clone();
        for (k, mut col) in us.column_iter_mut().enumerate() {
            col *= fast.s[k];
        }
        if (us * fast.v.transpose() - a).norm() <= RECOMPOSE_TOL * norm {
            return fast;
        }
    }
    jacobi_svd(a)
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn faer_svd(a: &DMatrix<f64>) -> Option<Svd> {
    let (m, n) = a.shape();
    let k = m.min(n);
    let d = to_faer(a).thin_svd().ok()?;
    let (u, v, s) = (d.U(), d.V(), d.S().column_vector());
    Some(Svd {
        u: DMatrix::from_fn(m, k, |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |i, _| s[i]),
        v: DMatrix::from_fn(n, k, |i, j| v[(i, j)]),
    })
}

/// One-sided Jacobi SVD.
pub fn jacobi_svd(a: &DMatrix<f64>) -> Svd {
    if a.nrows() < a.ncols() {
        let t = jacobi_svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = f64::EPSILON * m as f64;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= tol * fmath::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + fmath::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / fmath::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let s = DVector::from_fn(n, |k, _| w.column(k).norm());
    let mut u = w;
    for (k, mut col) in u.column_iter_mut().enumerate() {
        if s[k] > 0.0 {
            col /= s[k];
        }
    }
    Svd { u, s, v }
}

/// Columns `(p, q) <- (c x_p - s x_q, s x_p + c x_q)`.
fn rotate(x: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..x.nrows() {
        let (a, b) = (x[(i, p)], x[(i, q)]);
        x[(i, p)] = c * a - s * b;
        x[(i, q)] = s * a + c * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn recompose(d: &Svd) -> DMatrix<f64> {
        &d.u * DMatrix::from_diagonal(&d.s) * d.v.transpose()
    }

    #[test]
    fn jacobi_reconstructs_and_is_orthogonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for (m, n) in [(1, 1), (3, 3), (5, 3), (3, 5), (12, 7)] {
            let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let d = jacobi_svd(&a);
            assert!((recompose(&d) - &a).norm() < 1e-14 * (1.0 + a.norm()));
            let k = m.min(n);
            assert!((d.v.transpose() * &d.v - DMatrix::<f64>::identity(k, k)).norm() < 1e-14);
            assert!((d.u.transpose() * &d.u - DMatrix::<f64>::identity(k, k)).norm() < 1e-13);
            let mut s: alloc::vec::Vec<f64> = d.s.iter().copied().collect();
            s.sort_by(|x, y| y.total_cmp(x));
            let mut oracle: alloc::vec::Vec<f64> = a.singular_values().iter().copied().collect();
            oracle.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in s.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backend_failure_is_repaired() {
        // nalgebra's bidiagonal SVD misses this matrix by about 1e-10.
        let b = DMatrix::from_vec(
            3,
            3,
            alloc::vec![
                -0.7321945667869493,
                0.8944296826430662,
                0.42838755412569596,
                -0.8473700390975132,
                -0.31985104174170237,
                -0.8375638591547726,
                0.0,
                0.2901216970384669,
                -0.2636653186240414,
            ],
        );
        let d = svd(&b);
        assert!((recompose(&d) - &b).norm() < 1e-14 * b.norm());
        assert_eq!(svd(&DMatrix::zeros(2, 3)).s.len(), 2);
    }
}
