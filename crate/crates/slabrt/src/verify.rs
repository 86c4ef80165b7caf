//! Invariant suites run by the `verify` subcommand on small problems where
//! dense computations are affordable.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slabrt_core::discretization::Scheme;
use slabrt_core::expsum::CERT_SAMPLES;
use slabrt_core::solver::{st_solve, st_solve_inexact, LowRankOperator};
use slabrt_core::study::{prepare_row, PreparedRow, SolverVariant};
use slabrt_core::LowRankMatrix;

use crate::config::Experiment;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Not run because it would be too expensive; does not count as a failure.
    pub skipped: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, skipped: false, detail }
    }

    fn skipped(name: &'static str, detail: String) -> Self {
        Self { name, passed: true, skipped: true, detail }
    }

    pub fn label(&self) -> &'static str {
        match (self.skipped, self.passed) {
            (true, _) => "SKIP",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        }
    }

    fn failed(name: &'static str, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }
}

/// Small `(J, N)` pairs valid for the scheme.
pub fn small_sizes(scheme: Scheme) -> [(usize, usize); 3] {
    match scheme {
        Scheme::SN => [(4, 2), (8, 4), (16, 8)],
        Scheme::PN => [(4, 3), (8, 3), (16, 5)],
    }
}

/// Number of random instances per property suite.
pub const PROPERTY_INSTANCES: usize = 200;
/// Number of random operator applications checked against the dense product.
pub const APPLY_INSTANCES: usize = 20;
/// Largest predicted iteration count for which the final certificate is run.
pub const CERTIFICATE_ITERATION_BUDGET: f64 = 20_000.0;

/// Dense matrix of `P E P` in the column-major vec convention.
pub fn dense_system(row: &PreparedRow) -> slabrt_core::Result<DMatrix<f64>> {
    let p = row.preconditioner.terms.materialize()?;
    let e = row.system.e_hat.materialize()?;
    Ok(&p * e * &p)
}

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random matrix of the given rank with geometrically spread singular values.
fn random_low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> LowRankMatrix {
    let l = random_dense(rng, rows, rank);
    let r = random_dense(rng, cols, rank);
    let s = DVector::from_fn(rank, |k, _| 10f64.powf(-(k as f64)) * rng.random_range(0.5..2.0));
    LowRankMatrix::from_weighted_factors(l, s, r).expect("consistent factors")
}

fn prepared(exp: &Experiment) -> Vec<Result<PreparedRow, String>> {
    small_sizes(exp.scheme)
        .iter()
        .map(|&(j, n)| prepare_row(&exp.case, exp.scheme, j, n, &exp.params).map_err(|e| format!("({j}, {n}): {e}")))
        .collect()
}

/// Sampled relative error of every small preconditioner's exponential sum
/// at random log-uniform points of its interval.
fn expsum_certificate(exp: &Experiment, rows: &[Result<PreparedRow, String>], rng: &mut ChaCha8Rng) -> Check {
    const NAME: &str = "expsum_certificate";
    let mut worst = 0.0f64;
    for row in rows {
        let row = match row {
            Ok(r) => r,
            Err(e) => return Check::failed(NAME, e),
        };
        let a = &row.preconditioner.expsum;
        let (lo, hi) = (a.lambda.ln(), a.big_lambda.ln());
        let mut pts: Vec<f64> = (0..CERT_SAMPLES).map(|_| rng.random_range(lo..=hi).exp()).collect();
        pts.extend([a.lambda, a.big_lambda]);
        worst = worst.max(a.max_relative_error(&pts));
    }
    let eps = exp.params.expsum_eps;
    Check::new(NAME, worst <= eps, format!("max sampled error {worst:.3e} <= eps {eps}"))
}

/// Dense eigenvalues of the preconditioned operator inside the band given by
/// the coercivity constants.
fn spectral_equivalence(exp: &Experiment, rows: &[Result<PreparedRow, String>]) -> Check {
    const NAME: &str = "spectral_equivalence";
    let eps = exp.params.expsum_eps;
    let mut detail = Vec::new();
    let mut ok = true;
    for row in rows {
        let row = match row {
            Ok(r) => r,
            Err(e) => return Check::failed(NAME, e),
        };
        let a = match dense_system(row) {
            Ok(a) => a,
            Err(e) => return Check::failed(NAME, e),
        };
        let asym = (&a - a.transpose()).norm() / a.norm();
        let ev = ((&a + a.transpose()) * 0.5).symmetric_eigen().eigenvalues;
        let lo = (1.0 - eps).powi(2) * row.constants.gamma1;
        let hi = (1.0 + eps).powi(2) * row.constants.gamma2;
        let pass = ev.min() >= lo && ev.max() <= hi && asym < 1e-10;
        ok &= pass;
        detail.push(format!(
            "({}, {}): [{:.4}, {:.4}] in [{lo:.4}, {hi:.4}]",
            row.system.spec.j,
            row.system.spec.n,
            ev.min(),
            ev.max()
        ));
    }
    Check::new(NAME, ok, detail.join("; "))
}

fn soft_threshold_nonexpansive(rng: &mut ChaCha8Rng) -> Check {
    const NAME: &str = "soft_threshold_nonexpansive";
    let mut worst = 0.0f64;
    for _ in 0..PROPERTY_INSTANCES {
        let (m, n) = (rng.random_range(2..12), rng.random_range(2..12));
        let a = random_dense(rng, m, n);
        let b = &a + random_dense(rng, m, n) * 10f64.powf(rng.random_range(-3.0..0.5));
        let delta = rng.random_range(0.0..1.5);
        let (la, lb) = (LowRankMatrix::from_dense(&a).unwrap(), LowRankMatrix::from_dense(&b).unwrap());
        let sa = la.soft_threshold(delta).unwrap().to_dense();
        let sb = lb.soft_threshold(delta).unwrap().to_dense();
        worst = worst.max((sa - sb).norm() / (&a - &b).norm());
    }
    Check::new(NAME, worst <= 1.0 + 1e-12, format!("max ratio {worst:.12}"))
}

/// Singular values in decreasing order, from the symmetric eigenproblem of
/// `[[0, A], [A^T, 0]]`.
fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut h = DMatrix::zeros(m + n, m + n);
    h.view_mut((0, m), (m, n)).copy_from(a);
    h.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
    let mut s: Vec<f64> = h.symmetric_eigenvalues().iter().map(|x| x.max(0.0)).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s.truncate(m.min(n));
    s
}

fn tsvd_optimality(rng: &mut ChaCha8Rng) -> Check {
    const NAME: &str = "tsvd_optimality";
    let mut failures = 0;
    for _ in 0..PROPERTY_INSTANCES {
        let (m, n) = (rng.random_range(2..12), rng.random_range(2..12));
        let a = random_dense(rng, m, n);
        let tol = a.norm() * rng.random_range(0.0..1.0);
        let t = LowRankMatrix::from_dense(&a).unwrap().truncated_svd(tol).unwrap();
        let err = (t.to_dense() - &a).norm();
        // Best error with one rank fewer, from the dense singular values.
        let sorted = singular_values(&a);
        let k = t.rank();
        let tail_fewer: f64 = if k == 0 {
            0.0
        } else {
            sorted[k - 1..].iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        let minimal = k == 0 || tail_fewer > tol * (1.0 - 1e-12);
        if err > tol * (1.0 + 1e-12) + 1e-14 || !minimal {
            failures += 1;
        }
    }
    Check::new(NAME, failures == 0, format!("{failures} of {PROPERTY_INSTANCES} instances violate the bound or minimality"))
}

fn inexact_apply_contract(rows: &[Result<PreparedRow, String>], rng: &mut ChaCha8Rng) -> Check {
    const NAME: &str = "inexact_apply_contract";
    let row = match &rows[1] {
        Ok(r) => r,
        Err(e) => return Check::failed(NAME, e),
    };
    let dense = match dense_system(row) {
        Ok(a) => a,
        Err(e) => return Check::failed(NAME, e),
    };
    let op = row.operator();
    let (m, n) = op.dims();
    let mut worst = 0.0f64;
    for _ in 0..APPLY_INSTANCES {
        let rank = rng.random_range(1..=n.min(m));
        let w = random_low_rank(rng, m, n, rank);
        let eta = 10f64.powf(rng.random_range(-8.0..-1.0));
        let (approx, _) = match op.apply_inexact(&w, eta) {
            Ok(x) => x,
            Err(e) => return Check::failed(NAME, e),
        };
        let exact = &dense * vec_of(&w.to_dense());
        worst = worst.max((vec_of(&approx.to_dense()) - exact).norm() / eta);
    }
    Check::new(NAME, worst <= 0.5, format!("max error / eta = {worst:.3e} <= 0.5"))
}

/// The solver output at a small size against the dense solution.
fn final_certificate(exp: &Experiment, rows: &[Result<PreparedRow, String>]) -> Check {
    const NAME: &str = "final_certificate";
    let row = match &rows[1] {
        Ok(r) => r,
        Err(e) => return Check::failed(NAME, e),
    };
    let dense = match dense_system(row) {
        Ok(a) => a,
        Err(e) => return Check::failed(NAME, e),
    };
    let (eps, rho) = (row.constants.eps_target, row.resolved.constants.rho);
    let predicted = eps.ln() / rho.ln();
    if !(predicted <= CERTIFICATE_ITERATION_BUDGET) {
        return Check::skipped(
            NAME,
            format!("rho = {rho:.8} needs about {predicted:.3e} iterations, budget {CERTIFICATE_ITERATION_BUDGET:e}"),
        );
    }
    let op = row.operator();
    let outcome = match exp.params.variant {
        SolverVariant::StInexact => st_solve_inexact(&op, &row.rhs, &row.resolved),
        _ => st_solve(&op, &row.rhs, &row.resolved),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => return Check::failed(NAME, e),
    };
    let Some(exact) = dense.lu().solve(&vec_of(&row.rhs.to_dense())) else {
        return Check::failed(NAME, "dense system is singular");
    };
    let err = (vec_of(&outcome.w.to_dense()) - exact).norm();
    Check::new(
        NAME,
        outcome.trace.converged && err <= eps,
        format!("||W - W*|| = {err:.3e} <= {eps:e} after {} iterations", outcome.trace.iterations),
    )
}

/// Runs all suites with the experiment's parameters and seed.
pub fn run_checks(exp: &Experiment) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.seed);
    let rows = prepared(exp);
    vec![
        expsum_certificate(exp, &rows, &mut rng),
        spectral_equivalence(exp, &rows),
        soft_threshold_nonexpansive(&mut rng),
        tsvd_optimality(&mut rng),
        inexact_apply_contract(&rows, &mut rng),
        final_certificate(exp, &rows),
    ]
}
