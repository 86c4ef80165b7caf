//! Exponential-sum approximation of `t^{-1/2}` and the Kronecker-format
//! preconditioner built from it.
//!
//! The trapezoidal rule applied to `t^{-beta} = (1/Gamma(beta)) ∫ exp(-t e^s + beta s) ds`
//! gives `Psi(t) = (h/Gamma(beta)) sum_{i=-i1}^{i2} e^{beta i h} exp(-e^{ih} t)`.
//! Because the Riesz operator is a Kronecker sum, each exponential factorizes
//! into an angular and a spatial matrix exponential.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::discretization::SymmetricBlock;
use crate::error::{Error, Result};
use crate::fmath;
use crate::kron::{KronOperator, KronTerm};
use crate::lowrank::LowRankMatrix;

/// Exponent of the approximated power.
pub const BETA: f64 = 0.5;
/// Default relative accuracy of the approximation.
pub const DEFAULT_EPS: f64 = 0.1;
/// Interior sample count of the certification grid.
pub const CERT_SAMPLES: usize = 10_000;
/// Fraction of `eps` the sampled error must stay below.
pub const CERT_MARGIN: f64 = 0.95;
/// Largest admissible `i1 + i2`.
pub const MAX_INDEX_SPAN: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpSumApproximation {
    pub beta: f64,
    pub eps: f64,
    pub h: f64,
    pub i1: usize,
    pub i2: usize,
    pub lambda: f64,
    pub big_lambda: f64,
    /// Largest sampled `|Psi(t) t^beta - 1|` on `[lambda, Lambda]`.
    pub max_rel_error: f64,
}

/// Largest step size allowed for accuracy `eps`.
pub fn step_size(eps: f64, beta: f64) -> f64 {
    2.0 * PI / (fmath::ln(3.0) + beta * fmath::ln(fmath::cos(1.0)).abs() + fmath::ln(eps).abs())
}

/// `|Psi(t) t^beta - 1|` for the given parameters.
fn relative_error(h: f64, beta: f64, i1: usize, i2: usize, t: f64) -> f64 {
    (psi(h, beta, i1, i2, t) * fmath::pow(t, beta) - 1.0).abs()
}

fn psi(h: f64, beta: f64, i1: usize, i2: usize, t: f64) -> f64 {
    let mut s = 0.0;
    for i in -(i1 as i64)..=(i2 as i64) {
        let ih = i as f64 * h;
        s += fmath::exp(beta * ih - fmath::exp(ih) * t);
    }
    h / fmath::gamma(beta) * s
}

/// Certification grid: `CERT_SAMPLES` log-uniform points plus both endpoints.
pub fn certification_grid(lambda: f64, big_lambda: f64) -> Vec<f64> {
    let (a, b) = (fmath::ln(lambda), fmath::ln(big_lambda));
    let mut grid = Vec::with_capacity(CERT_SAMPLES + 2);
    grid.push(lambda);
    for k in 0..CERT_SAMPLES {
        let s = a + (b - a) * (k as f64 + 0.5) / CERT_SAMPLES as f64;
        grid.push(fmath::exp(s));
    }
    grid.push(big_lambda);
    grid
}

impl ExpSumApproximation {
    /// Smallest exponential sum whose sampled relative error on
    /// `[lambda, Lambda]` is at most `0.95 eps`.
    ///
    /// For each total term count the index splits `i1 + i2 = n - 1` are tried
    /// and, among those that certify, the one with the smallest error wins.
    pub fn fit(eps: f64, lambda: f64, big_lambda: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eps = {eps} must lie in (0, 1)"
            )));
        }
        if !(lambda > 0.0 && lambda <= big_lambda && big_lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < lambda <= Lambda, got [{lambda}, {big_lambda}]"
            )));
        }
        let beta = BETA;
        let h = step_size(eps, beta);
        let target = CERT_MARGIN * eps;
        let grid = certification_grid(lambda, big_lambda);
        for n in 1..=MAX_INDEX_SPAN + 1 {
            let mut best: Option<(f64, usize)> = None;
            for i1 in 0..n {
                let i2 = n - 1 - i1;
                if relative_error(h, beta, i1, i2, lambda) > target
                    || relative_error(h, beta, i1, i2, big_lambda) > target
                {
                    continue;
                }
                let mut worst = 0.0f64;
                for &t in &grid {
                    worst = worst.max(relative_error(h, beta, i1, i2, t));
                    if worst > target {
                        break;
                    }
                }
                if worst <= target && best.is_none_or(|(e, _)| worst < e) {
                    best = Some((worst, i1));
                }
            }
            if let Some((err, i1)) = best {
                return Ok(Self {
                    beta,
                    eps,
                    h,
                    i1,
                    i2: n - 1 - i1,
                    lambda,
                    big_lambda,
                    max_rel_error: err,
                });
            }
        }
        Err(Error::Certification(format!(
            "no exponential sum with at most {} terms reaches eps = {eps} on [{lambda:e}, {big_lambda:e}]",
            MAX_INDEX_SPAN + 1
        )))
    }

    /// Number of terms `r_p = i1 + i2 + 1`.
    pub fn rank(&self) -> usize {
        self.i1 + self.i2 + 1
    }

    /// Indices `-i1..=i2` in the order the preconditioner terms use.
    pub fn indices(&self) -> impl Iterator<Item = i64> + '_ {
        -(self.i1 as i64)..=(self.i2 as i64)
    }

    /// Node `rho_i = e^{ih}`.
    pub fn node(&self, i: i64) -> f64 {
        fmath::exp(i as f64 * self.h)
    }

    /// Weight `alpha_i = e^{beta i h}`.
    pub fn weight(&self, i: i64) -> f64 {
        fmath::exp(self.beta * i as f64 * self.h)
    }

    /// Common prefactor `h / Gamma(beta)`.
    pub fn prefactor(&self) -> f64 {
        self.h / fmath::gamma(self.beta)
    }

    pub fn eval(&self, t: f64) -> f64 {
        psi(self.h, self.beta, self.i1, self.i2, t)
    }

    /// Largest `|Psi(t) t^beta - 1|` over the given points.
    pub fn max_relative_error(&self, points: &[f64]) -> f64 {
        points
            .iter()
            .map(|&t| relative_error(self.h, self.beta, self.i1, self.i2, t))
            .fold(0.0, f64::max)
    }
}

/// `P^{-1/2} = (h/sqrt(pi)) sum_i alpha_i exp(-rho_i J_mu) ⊗ exp(-rho_i J_z)`.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    pub expsum: ExpSumApproximation,
    pub terms: KronOperator,
}

impl Preconditioner {
    /// Builds the preconditioner terms from eigendecompositions of the two
    /// Riesz blocks. The approximation must be certified on an interval that
    /// contains their summed spectrum.
    pub fn build(
        approx: &ExpSumApproximation,
        j_mu: &SymmetricBlock,
        j_z: &SymmetricBlock,
    ) -> Result<Self> {
        let lo = j_mu.min_eigenvalue() + j_z.min_eigenvalue();
        let hi = j_mu.max_eigenvalue() + j_z.max_eigenvalue();
        let slack = 1e-12 * hi;
        if lo < approx.lambda - slack || hi > approx.big_lambda + slack {
            return Err(Error::Certification(format!(
                "spectrum [{lo:e}, {hi:e}] is not inside the certified interval [{:e}, {:e}]",
                approx.lambda, approx.big_lambda
            )));
        }
        let c = approx.prefactor();
        let terms = approx
            .indices()
            .map(|i| {
                let rho = approx.node(i);
                KronTerm::new(
                    c * approx.weight(i),
                    j_mu.function(|x| fmath::exp(-rho * x)),
                    j_z.function(|x| fmath::exp(-rho * x)),
                )
            })
            .collect();
        Ok(Self {
            expsum: approx.clone(),
            terms: KronOperator::new(terms)?,
        })
    }

    /// Fits an approximation to the blocks' spectral interval and builds the
    /// preconditioner.
    pub fn fit(eps: f64, j_mu: &SymmetricBlock, j_z: &SymmetricBlock) -> Result<Self> {
        let lo = j_mu.min_eigenvalue() + j_z.min_eigenvalue();
        let hi = j_mu.max_eigenvalue() + j_z.max_eigenvalue();
        Self::build(&ExpSumApproximation::fit(eps, lo, hi)?, j_mu, j_z)
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    /// `P^{-1/2} W`, canonicalized and optionally truncated at `round_tol`.
    pub fn apply(&self, w: &LowRankMatrix, round_tol: f64) -> Result<LowRankMatrix> {
        self.terms.apply(w, round_tol)
    }
}
