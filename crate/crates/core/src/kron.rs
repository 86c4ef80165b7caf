//! Operators that are short sums of Kronecker products.
//!
//! Coefficient matrices `U` are `(J+1) x N_ang` with the spatial index in the
//! rows, and vectorization stacks columns, so a term `c (A_mu ⊗ A_z)` acts as
//! `U -> c A_z U A_mu^T`. On a factored `U = L diag(s) R^T` this is
//! `c (A_z L) diag(s) (A_mu R)^T`, which never forms `U`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::banded::{LowerBidiagonal, SymTridiagonal};
use crate::error::{Error, Result};
use crate::lowrank::LowRankMatrix;

/// Largest `rows * cols` for which [`KronOperator::materialize`] will run.
pub const MATERIALIZE_LIMIT: usize = 4096;

/// A square linear map applied to the columns of a factor block.
#[derive(Debug, Clone)]
pub enum LinearMap {
    Identity(usize),
    Diagonal(DVector<f64>),
    Dense(Arc<DMatrix<f64>>),
    Tridiagonal(Arc<SymTridiagonal>),
    /// Rank-one `u v^T`.
    Outer {
        u: DVector<f64>,
        v: DVector<f64>,
    },
    /// `Q diag(values) Q^T` with orthonormal `Q`.
    Spectral {
        q: Arc<DMatrix<f64>>,
        values: DVector<f64>,
    },
    /// `L^{-1} inner L^{-T}` with a bidiagonal factor `L`.
    Conjugated {
        factor: Arc<LowerBidiagonal>,
        inner: Arc<LinearMap>,
    },
    /// Product `maps[0] * maps[1] * ...`; the last map acts first.
    Composed(Vec<LinearMap>),
}

impl LinearMap {
    pub fn dense(m: DMatrix<f64>) -> Self {
        Self::Dense(Arc::new(m))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Identity(n) => *n,
            Self::Diagonal(d) => d.len(),
            Self::Dense(m) => m.nrows(),
            Self::Tridiagonal(t) => t.dim(),
            Self::Outer { u, .. } => u.len(),
            Self::Spectral { q, .. } => q.nrows(),
            Self::Conjugated { factor, .. } => factor.dim(),
            Self::Composed(maps) => maps.first().map_or(0, LinearMap::dim),
        }
    }

    /// Applies the map to every column of `x`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Identity(_) => x.clone(),
            Self::Diagonal(d) => {
                let mut y = x.clone();
                for mut col in y.column_iter_mut() {
                    col.component_mul_assign(d);
                }
                y
            }
            Self::Dense(m) => m.as_ref() * x,
            Self::Tridiagonal(t) => t.apply(x),
            Self::Outer { u, v } => u * (v.transpose() * x),
            Self::Spectral { q, values } => {
                let mut c = q.tr_mul(x);
                for (i, mut row) in c.row_iter_mut().enumerate() {
                    row *= values[i];
                }
                q.as_ref() * c
            }
            Self::Conjugated { factor, inner } => {
                factor.solve(&inner.apply(&factor.solve_transpose(x)))
            }
            Self::Composed(maps) => {
                let mut y = x.clone();
                for m in maps.iter().rev() {
                    y = m.apply(&y);
                }
                y
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Self::Dense(m) => m.as_ref().clone(),
            _ => self.apply(&DMatrix::identity(self.dim(), self.dim())),
        }
    }

    /// `self * other` (other acts first), flattening nested compositions and
    /// dropping identities.
    pub fn compose(maps: &[&LinearMap]) -> LinearMap {
        let mut flat = Vec::new();
        for m in maps {
            match m {
                Self::Identity(_) => {}
                Self::Composed(inner) => flat.extend(inner.iter().cloned()),
                other => flat.push((*other).clone()),
            }
        }
        match flat.len() {
            0 => Self::Identity(maps.first().map_or(0, |m| m.dim())),
            1 => flat.pop().expect("one element"),
            _ => Self::Composed(flat),
        }
    }
}

/// One summand `coeff * (angular ⊗ spatial)`.
#[derive(Debug, Clone)]
pub struct KronTerm {
    pub coeff: f64,
    pub angular: LinearMap,
    pub spatial: LinearMap,
}

impl KronTerm {
    pub fn new(coeff: f64, angular: LinearMap, spatial: LinearMap) -> Self {
        Self {
            coeff,
            angular,
            spatial,
        }
    }

    /// `coeff (A_z L) diag(s) (A_mu R)^T` in unrounded factored form.
    pub fn apply(&self, w: &LowRankMatrix) -> LowRankMatrix {
        w.map_factors(
            |l| self.spatial.apply(l),
            |r| self.angular.apply(r),
            self.coeff,
        )
    }
}

/// Nonempty sum of Kronecker terms acting on `spatial_dim x angular_dim`
/// coefficient matrices.
#[derive(Debug, Clone)]
pub struct KronOperator {
    terms: Vec<KronTerm>,
    spatial_dim: usize,
    angular_dim: usize,
}

impl KronOperator {
    pub fn new(terms: Vec<KronTerm>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("operator needs at least one term".into()))?;
        let (sd, ad) = (first.spatial.dim(), first.angular.dim());
        for (k, t) in terms.iter().enumerate() {
            if t.spatial.dim() != sd || t.angular.dim() != ad {
                return Err(Error::DimensionMismatch(format!(
                    "term {k} is ({} ⊗ {}), expected ({ad} ⊗ {sd})",
                    t.angular.dim(),
                    t.spatial.dim()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::NonFinite("Kronecker coefficient"));
            }
        }
        Ok(Self {
            terms,
            spatial_dim: sd,
            angular_dim: ad,
        })
    }

    pub fn identity(spatial_dim: usize, angular_dim: usize) -> Self {
        Self {
            terms: alloc::vec![KronTerm::new(
                1.0,
                LinearMap::Identity(angular_dim),
                LinearMap::Identity(spatial_dim)
            )],
            spatial_dim,
            angular_dim,
        }
    }

    pub fn terms(&self) -> &[KronTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    pub fn angular_dim(&self) -> usize {
        self.angular_dim
    }

    fn check(&self, w: &LowRankMatrix) -> Result<()> {
        if w.rows() != self.spatial_dim || w.cols() != self.angular_dim {
            return Err(Error::DimensionMismatch(format!(
                "operator acts on {}x{}, argument is {}x{}",
                self.spatial_dim,
                self.angular_dim,
                w.rows(),
                w.cols()
            )));
        }
        Ok(())
    }

    /// Exact application as an unrounded concatenation of the term images.
    pub fn apply_unrounded(&self, w: &LowRankMatrix) -> Result<LowRankMatrix> {
        self.check(w)?;
        let images: Vec<LowRankMatrix> = self.terms.iter().map(|t| t.apply(w)).collect();
        let refs: Vec<(f64, &LowRankMatrix)> = images.iter().map(|m| (1.0, m)).collect();
        LowRankMatrix::combine(&refs)
    }

    /// Application followed by canonicalization and, for `round_tol > 0`, a
    /// truncation with Frobenius error at most `round_tol`.
    pub fn apply(&self, w: &LowRankMatrix, round_tol: f64) -> Result<LowRankMatrix> {
        if !(round_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rounding tolerance {round_tol} < 0"
            )));
        }
        let exact = self.apply_unrounded(w)?.canonicalize()?;
        if round_tol > 0.0 {
            exact.truncated_svd(round_tol)
        } else {
            Ok(exact)
        }
    }

    /// Dense matrix of the operator in the column-major vec convention.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        let n = self.spatial_dim * self.angular_dim;
        if n > MATERIALIZE_LIMIT {
            return Err(Error::TooLarge {
                rows: self.spatial_dim,
                cols: self.angular_dim,
                limit: MATERIALIZE_LIMIT,
            });
        }
        let mut out = DMatrix::zeros(n, n);
        for t in &self.terms {
            out += t.angular.to_dense().kronecker(&t.spatial.to_dense()) * t.coeff;
        }
        Ok(out)
    }

    /// Terms of `P E P`, ordered with the left factor of `P` outermost, then
    /// the term of `E`, then the right factor of `P`.
    pub fn compose_sandwich(p: &KronOperator, e: &KronOperator) -> Result<KronOperator> {
        if p.spatial_dim != e.spatial_dim || p.angular_dim != e.angular_dim {
            return Err(Error::DimensionMismatch(format!(
                "preconditioner acts on {}x{}, operator on {}x{}",
                p.spatial_dim, p.angular_dim, e.spatial_dim, e.angular_dim
            )));
        }
        let mut terms = Vec::with_capacity(p.len() * p.len() * e.len());
        for outer in &p.terms {
            for mid in &e.terms {
                for inner in &p.terms {
                    terms.push(KronTerm::new(
                        outer.coeff * mid.coeff * inner.coeff,
                        LinearMap::compose(&[&outer.angular, &mid.angular, &inner.angular]),
                        LinearMap::compose(&[&outer.spatial, &mid.spatial, &inner.spatial]),
                    ));
                }
            }
        }
        KronOperator::new(terms)
    }
}
