//! Factored low-rank matrices `sum_k s_k l_k r_k^T`.
//!
//! A [`LowRankMatrix`] is either *canonical* (orthonormal factor columns and
//! positive nonincreasing weights, i.e. a thin SVD) or a free concatenation of
//! weighted outer products. Every operation that needs singular values brings
//! its input to canonical form first, using thin QR of both factor blocks and
//! a dense SVD of the small core. The full `rows x cols` matrix is never
//! formed except by [`LowRankMatrix::to_dense`].

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dense;
use crate::error::{Error, Result};
use crate::fmath;

/// Singular values below this fraction of the reference scale are dropped
/// during canonicalization.
pub const RANK_FLOOR: f64 = 1e-14;

/// Entries smaller than this are skipped when fixing column signs.
const SIGN_PIVOT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankMatrix {
    rows: usize,
    cols: usize,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    values: DVector<f64>,
    canonical: bool,
}

impl LowRankMatrix {
    /// The zero matrix (rank 0, canonical).
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            left: DMatrix::zeros(rows, 0),
            right: DMatrix::zeros(cols, 0),
            values: DVector::zeros(0),
            canonical: true,
        }
    }

    /// `left * right^T` with unit weights. Not canonical.
    pub fn from_factors(left: DMatrix<f64>, right: DMatrix<f64>) -> Result<Self> {
        let r = left.ncols();
        Self::from_weighted_factors(left, DVector::from_element(r, 1.0), right)
    }

    /// `left * diag(values) * right^T`. Not canonical.
    pub fn from_weighted_factors(
        left: DMatrix<f64>,
        values: DVector<f64>,
        right: DMatrix<f64>,
    ) -> Result<Self> {
        if left.ncols() != right.ncols() || left.ncols() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "factor ranks {} / {} / {}",
                left.ncols(),
                values.len(),
                right.ncols()
            )));
        }
        if !all_finite(left.as_slice())
            || !all_finite(right.as_slice())
            || !all_finite(values.as_slice())
        {
            return Err(Error::NonFinite("low-rank factors"));
        }
        Ok(Self {
            rows: left.nrows(),
            cols: right.nrows(),
            left,
            right,
            values,
            canonical: false,
        })
    }

    /// Rank-one `v w^T`.
    pub fn outer(v: &DVector<f64>, w: &DVector<f64>) -> Result<Self> {
        Self::from_factors(
            DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
            DMatrix::from_column_slice(w.len(), 1, w.as_slice()),
        )
    }

    /// Canonical factorization of a dense matrix via its SVD.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if !all_finite(m.as_slice()) {
            return Err(Error::NonFinite("dense matrix"));
        }
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Ok(Self::zeros(rows, cols));
        }
        let svd = dense::svd(m);
        Ok(assemble_canonical(
            rows,
            cols,
            &svd.u,
            &svd.s,
            &svd.v,
            m.norm(),
        ))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    /// Term weights; the singular values when [`Self::is_canonical`].
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    /// Singular values, available only in canonical form.
    pub fn singular_values(&self) -> Option<&DVector<f64>> {
        self.canonical.then_some(&self.values)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.values[k];
        }
        scaled * self.right.transpose()
    }

    /// Multiplies all weights by `c`. A negative factor drops canonical form.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values *= c;
        if c < 0.0 {
            out.canonical = false;
        } else if c == 0.0 {
            return Self::zeros(self.rows, self.cols);
        }
        out
    }

    /// Unrounded linear combination `sum_i c_i W_i` by concatenating factors.
    pub fn combine(terms: &[(f64, &LowRankMatrix)]) -> Result<Self> {
        let Some(&(_, first)) = terms.first() else {
            return Err(Error::InvalidArgument("empty combination".into()));
        };
        let (rows, cols) = (first.rows, first.cols);
        for (_, t) in terms {
            if t.rows != rows || t.cols != cols {
                return Err(Error::DimensionMismatch(format!(
                    "{}x{} vs {}x{}",
                    rows, cols, t.rows, t.cols
                )));
            }
        }
        let total: usize = terms.iter().map(|(_, t)| t.rank()).sum();
        let mut left = DMatrix::zeros(rows, total);
        let mut right = DMatrix::zeros(cols, total);
        let mut values = DVector::zeros(total);
        let mut offset = 0;
        for &(c, t) in terms {
            let r = t.rank();
            left.view_mut((0, offset), (rows, r)).copy_from(&t.left);
            right.view_mut((0, offset), (cols, r)).copy_from(&t.right);
            values.rows_mut(offset, r).copy_from(&(&t.values * c));
            offset += r;
        }
        Ok(Self {
            rows,
            cols,
            left,
            right,
            values,
            canonical: false,
        })
    }

    /// Applies linear maps to the factors: returns `c * (A L) diag(s) (B R)^T`.
    pub fn map_factors(
        &self,
        left_map: impl FnOnce(&DMatrix<f64>) -> DMatrix<f64>,
        right_map: impl FnOnce(&DMatrix<f64>) -> DMatrix<f64>,
        coeff: f64,
    ) -> Self {
        let left = left_map(&self.left);
        let right = right_map(&self.right);
        Self {
            rows: left.nrows(),
            cols: right.nrows(),
            left,
            right,
            values: &self.values * coeff,
            canonical: false,
        }
    }

    /// Brings the factorization to thin-SVD form.
    ///
    /// Singular values below `1e-14` times the larger of the leading singular
    /// value and the pre-cancellation scale of the input terms are dropped.
    /// The first entry of each left column above `1e-10` is made positive.
    pub fn canonicalize(&self) -> Result<Self> {
        if self.canonical {
            return Ok(self.clone());
        }
        if !all_finite(self.left.as_slice())
            || !all_finite(self.right.as_slice())
            || !all_finite(self.values.as_slice())
        {
            return Err(Error::NonFinite("low-rank factors"));
        }
        if self.rank() == 0 || self.rows == 0 || self.cols == 0 {
            return Ok(Self::zeros(self.rows, self.cols));
        }
        let reference = self.term_scale();
        let (q_left, q_right, core) = self.qr_core();
        let svd = dense::svd(&core);
        let u = q_left * svd.u;
        let v = q_right * svd.v;
        Ok(assemble_canonical(
            self.rows, self.cols, &u, &svd.s, &v, reference,
        ))
    }

    /// `sqrt(sum_k (s_k |l_k| |r_k|)^2)`, an upper bound for the norm before
    /// any cancellation between terms.
    fn term_scale(&self) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.rank() {
            let t = self.values[k] * self.left.column(k).norm() * self.right.column(k).norm();
            acc += t * t;
        }
        fmath::sqrt(acc)
    }

    /// `R_l diag(s) R_r^T` from the triangular parts of both factors.
    fn core_of(&self, r_left: DMatrix<f64>, r_right: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r_left = r_left;
        for (k, mut col) in r_left.column_iter_mut().enumerate() {
            col *= self.values[k];
        }
        r_left * r_right.transpose()
    }

    /// Orthonormal bases of both factors' ranges and the core between them.
    fn qr_core(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (ql, rl) = range_basis(&self.left);
        let (qr, rr) = range_basis(&self.right);
        let core = self.core_of(rl, &rr);
        (ql, qr, core)
    }

    /// Smallest-rank truncation with Frobenius error at most `tol`.
    pub fn truncated_svd(&self, tol: f64) -> Result<Self> {
        if !(tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation tolerance {tol} < 0"
            )));
        }
        let w = self.canonicalize()?;
        let keep = optimal_rank(w.values.as_slice(), tol);
        Ok(w.leading(keep))
    }

    /// Soft thresholding of the singular values: `s_k -> max(0, s_k - delta)`.
    pub fn soft_threshold(&self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) {
            return Err(Error::InvalidArgument(format!("threshold {delta} < 0")));
        }
        let w = self.canonicalize()?;
        let keep = w.values.iter().take_while(|&&s| s > delta).count();
        let mut out = w.leading(keep);
        out.values.add_scalar_mut(-delta);
        Ok(out)
    }

    /// First `k` terms of a canonical matrix.
    fn leading(&self, k: usize) -> Self {
        debug_assert!(self.canonical);
        Self {
            rows: self.rows,
            cols: self.cols,
            left: self.left.columns(0, k).into_owned(),
            right: self.right.columns(0, k).into_owned(),
            values: self.values.rows(0, k).into_owned(),
            canonical: true,
        }
    }

    /// Frobenius norm; `sqrt(sum s_k^2)` in canonical form, Gram formula
    /// `sum_ij s_i s_j (L^T L)_ij (R^T R)_ij` otherwise.
    pub fn frobenius_norm(&self) -> f64 {
        if self.canonical {
            return self.values.norm();
        }
        let gl = self.left.transpose() * &self.left;
        let gr = self.right.transpose() * &self.right;
        let mut acc = 0.0;
        for j in 0..self.rank() {
            for i in 0..self.rank() {
                acc += self.values[i] * self.values[j] * gl[(i, j)] * gr[(i, j)];
            }
        }
        fmath::sqrt(acc.max(0.0))
    }

    /// Frobenius norm computed from the QR core, accurate under heavy
    /// cancellation between terms.
    pub fn frobenius_norm_stable(&self) -> f64 {
        if self.canonical {
            return self.values.norm();
        }
        if self.rank() == 0 {
            return 0.0;
        }
        let (_, rl) = range_basis(&self.left);
        let (_, rr) = range_basis(&self.right);
        self.core_of(rl, &rr).norm()
    }

    /// `||a - b||_F` without forming either matrix.
    pub fn distance(a: &LowRankMatrix, b: &LowRankMatrix) -> Result<f64> {
        Ok(Self::combine(&[(1.0, a), (-1.0, b)])?.frobenius_norm_stable())
    }
}

/// Sum of low-rank terms, accumulated pairwise with truncation so that the
/// result is within `tol` of the exact sum. With `tol = 0` the terms are
/// concatenated and canonicalized once.
pub fn rounded_sum(terms: &[LowRankMatrix], tol: f64) -> Result<LowRankMatrix> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rounding tolerance {tol} < 0"
        )));
    }
    let refs: Vec<(f64, &LowRankMatrix)> = terms.iter().map(|t| (1.0, t)).collect();
    let combined = LowRankMatrix::combine(&refs)?;
    if tol == 0.0 || terms.len() == 1 {
        return combined.canonicalize();
    }
    let step_tol = tol / (terms.len() - 1) as f64;
    let mut acc = terms[0].canonicalize()?;
    for t in &terms[1..] {
        acc = LowRankMatrix::combine(&[(1.0, &acc), (1.0, t)])?.truncated_svd(step_tol)?;
    }
    Ok(acc)
}

/// Smallest `r` with `sqrt(sum_{k >= r} s_k^2) <= tol` for nonincreasing `s`.
pub fn optimal_rank(singular_values: &[f64], tol: f64) -> usize {
    let tol2 = tol * tol;
    let mut tail = 0.0;
    let mut keep = singular_values.len();
    while keep > 0 {
        let s = singular_values[keep - 1];
        if tail + s * s > tol2 {
            break;
        }
        tail += s * s;
        keep -= 1;
    }
    keep
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Builds a canonical matrix from SVD-like data `u diag(s) v^T`, dropping
/// negligible singular values and fixing column signs.
fn assemble_canonical(
    rows: usize,
    cols: usize,
    u: &DMatrix<f64>,
    s: &DVector<f64>,
    v: &DMatrix<f64>,
    reference: f64,
) -> LowRankMatrix {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let leading = order.first().map_or(0.0, |&i| s[i]);
    let floor = RANK_FLOOR * leading.max(reference);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| s[i] > floor && s[i] > 0.0)
        .collect();
    let r = kept.len();
    let mut left = DMatrix::zeros(rows, r);
    let mut right = DMatrix::zeros(cols, r);
    let mut values = DVector::zeros(r);
    for (k, &i) in kept.iter().enumerate() {
        let mut lc = u.column(i).into_owned();
        let mut rc = v.column(i).into_owned();
        if let Some(p) = lc.iter().find(|x| x.abs() > SIGN_PIVOT) {
            if *p < 0.0 {
                lc.neg_mut();
                rc.neg_mut();
            }
        }
        left.set_column(k, &lc);
        right.set_column(k, &rc);
        values[k] = s[i];
    }
    LowRankMatrix {
        rows,
        cols,
        left,
        right,
        values,
        canonical: true,
    }
}

/// `(Q, R)` with `a = Q R` and orthonormal `Q`. A factor with at least as
/// many columns as rows spans the whole space, so `Q = I` and `R = a`; this
/// skips a Householder pass over a wide matrix.
fn range_basis(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    if a.ncols() >= a.nrows() {
        return (DMatrix::identity(a.nrows(), a.nrows()), a.clone());
    }
    let qr = a.clone().qr();
    (qr.q(), qr.r())
}
