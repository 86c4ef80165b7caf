//! Solver behaviour on small TC1 systems, checked against dense solves of
//! the preconditioned system.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slabrt_core::solver::{
    richardson_plain, st_solve, st_solve_inexact, st_solve_with, LowRankOperator, SolveTrace,
};
use slabrt_core::study::{prepare_row, PreparedRow, StudyParams};
use slabrt_core::{CaseId, LowRankMatrix, ManufacturedCase, Scheme};

fn prep(j: usize, n: usize) -> PreparedRow {
    prepare_row(
        &ManufacturedCase::new(CaseId::Tc1),
        Scheme::SN,
        j,
        n,
        &StudyParams::default(),
    )
    .unwrap()
}

fn dense_system(row: &PreparedRow) -> DMatrix<f64> {
    let p = row.preconditioner.terms.materialize().unwrap();
    let e = row.system.e_hat.materialize().unwrap();
    &p * e * &p
}

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

fn dense_solution(row: &PreparedRow) -> DMatrix<f64> {
    let a = dense_system(row);
    let f = row.rhs.to_dense();
    unvec(&a.lu().solve(&vec_of(&f)).unwrap(), f.nrows(), f.ncols())
}

/// Dense soft thresholding from the eigenpairs of `[[0, A], [A^T, 0]]`,
/// whose positive eigenvalues are the singular values of `A`.
fn soft_threshold(a: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let mut h = DMatrix::zeros(m + n, m + n);
    h.view_mut((0, m), (m, n)).copy_from(a);
    h.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
    let e = h.symmetric_eigen();
    let mut out = DMatrix::zeros(m, n);
    for (k, &lambda) in e.eigenvalues.iter().enumerate() {
        if lambda > delta {
            let x = e.eigenvectors.column(k);
            out += (x.rows(0, m) * x.rows(m, n).transpose()) * (2.0 * (lambda - delta));
        }
    }
    out
}

/// Fixed point of `W -> S_delta(W - omega (A W - F))`, iterated densely
/// until the update stalls at rounding level.
fn dense_fixed_point(a: &DMatrix<f64>, f: &DMatrix<f64>, omega: f64, delta: f64) -> DMatrix<f64> {
    let (m, n) = f.shape();
    let mut w = DMatrix::zeros(m, n);
    for _ in 0..20_000 {
        let r = unvec(&(a * vec_of(&w)), m, n) - f;
        let next = soft_threshold(&(&w - r * omega), delta);
        let change = (&next - &w).norm();
        w = next;
        if change < 1e-15 {
            break;
        }
    }
    w
}

#[test]
fn preconditioned_spectrum_lies_in_the_equivalence_band() {
    for (j, n) in [(4, 2), (8, 4), (16, 8)] {
        let row = prep(j, n);
        let a = dense_system(&row);
        assert!((&a - a.transpose()).norm() <= 1e-12 * a.norm());
        let ev = ((&a + a.transpose()) * 0.5).symmetric_eigen().eigenvalues;
        let eps = 0.1;
        let lo = (1.0 - eps) * (1.0 - eps) * row.constants.gamma1;
        let hi = (1.0 + eps) * (1.0 + eps) * row.constants.gamma2;
        assert!(
            ev.min() >= lo && ev.max() <= hi,
            "({j}, {n}): [{}, {}] not in [{lo}, {hi}]",
            ev.min(),
            ev.max()
        );
    }
}

#[test]
fn inexact_apply_stays_within_half_eta() {
    let row = prep(8, 4);
    let a = dense_system(&row);
    let op = row.operator();
    let (m, n) = op.dims();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = rng.random_range(1..=n);
        let l = DMatrix::from_fn(m, rank, |_, _| rng.random_range(-1.0..1.0));
        let r = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
        let s = DVector::from_fn(rank, |k, _| 10f64.powi(-(k as i32)));
        let w = LowRankMatrix::from_weighted_factors(l, s, r).unwrap();
        let eta = 10f64.powf(rng.random_range(-9.0..-1.0));
        let (approx, stats) = op.apply_inexact(&w, eta).unwrap();
        let err = (vec_of(&approx.to_dense()) - &a * vec_of(&w.to_dense())).norm();
        assert!(
            err <= 0.5 * eta,
            "seed {seed}: error {err:e} > eta/2 = {:e}",
            0.5 * eta
        );
        assert_eq!(stats.products, op.expanded_terms() / row.system.e_hat.len());
        assert_eq!(stats.output_rank, approx.rank());
    }
}

#[test]
fn thresholded_fixed_point_is_sandwiched() {
    let row = prep(8, 4);
    let a = dense_system(&row);
    let f = row.rhs.to_dense();
    let w_star = dense_solution(&row);
    let c = row.resolved.constants;
    for delta in [1e-2, 1e-3] {
        let w_delta = dense_fixed_point(&a, &f, c.omega, delta);
        let gap = (soft_threshold(&w_star, delta) - &w_star).norm();
        let dist = (&w_delta - &w_star).norm();
        assert!(
            gap / (1.0 + c.rho) <= dist,
            "delta {delta}: {dist} below lower bound"
        );
        assert!(
            dist <= gap / (1.0 - c.rho),
            "delta {delta}: {dist} above upper bound"
        );

        // The library iteration with the threshold held fixed contracts
        // towards the same point.
        let mut params = row.resolved.clone();
        params.params.delta0 = delta;
        let mut prev: Option<f64> = None;
        for k in 1..=40 {
            params.max_iter = k;
            let w = st_solve_with(&row.operator(), &row.rhs, &params, true)
                .unwrap()
                .w
                .to_dense();
            let e = (w - &w_delta).norm();
            if let Some(p) = prev {
                assert!(
                    e <= c.rho * p + 1e-13,
                    "delta {delta}, step {k}: {e} > rho * {p}"
                );
            }
            prev = Some(e);
        }
        params.max_iter = 2000;
        let w = st_solve_with(&row.operator(), &row.rhs, &params, true)
            .unwrap()
            .w
            .to_dense();
        assert!((w - &w_delta).norm() < 1e-11);
    }
}

#[test]
fn converged_iterates_meet_the_final_certificate() {
    for (j, n) in [(8, 4), (16, 8)] {
        let row = prep(j, n);
        let w_star = dense_solution(&row);
        let eps = row.constants.eps_target;
        let op = row.operator();
        let runs = [
            (
                "plain",
                richardson_plain(&op, &row.rhs, &row.resolved, 0.0).unwrap(),
            ),
            ("st", st_solve(&op, &row.rhs, &row.resolved).unwrap()),
            (
                "st_inexact",
                st_solve_inexact(&op, &row.rhs, &row.resolved).unwrap(),
            ),
        ];
        for (name, out) in runs {
            assert!(out.trace.converged, "{name} ({j}, {n}) did not converge");
            let err = (out.w.to_dense() - &w_star).norm();
            assert!(err <= eps, "{name} ({j}, {n}): ||W - W*|| = {err:e}");
        }
    }
}

#[test]
fn tiny_initial_tolerance_tracks_the_exact_solver() {
    let row = prep(8, 4);
    let op = row.operator();
    let exact = st_solve(&op, &row.rhs, &row.resolved).unwrap();
    let mut params = row.resolved.clone();
    params.params.eta0 = 1e-14;
    let inexact = st_solve_inexact(&op, &row.rhs, &params).unwrap();
    assert!(inexact.trace.converged);
    let d = LowRankMatrix::distance(&exact.w, &inexact.w).unwrap();
    assert!(d <= 2.0 * row.constants.eps_target, "distance {d:e}");
    assert_eq!(exact.w.rank(), inexact.w.rank());
}

fn check_trace_invariants(trace: &SolveTrace, rho: f64, inexact: bool) {
    let recs = &trace.records;
    assert_eq!(recs.len(), trace.iterations + 1);
    for pair in recs.windows(2) {
        assert!(
            pair[1].delta <= pair[0].delta,
            "threshold increased at k = {}",
            pair[1].k
        );
        assert_eq!(pair[1].k, pair[0].k + 1);
    }
    if inexact {
        assert!(recs.iter().all(|r| r.eta > 0.0));
    }
    if let Some(first) = recs.iter().position(|r| r.rank > 0) {
        assert!(recs[first..].iter().all(|r| r.rank > 0));
    }
    let bound = rho.ln() + 0.05;
    for w in recs.windows(51) {
        let slope = (w[50].res_norm.ln() - w[0].res_norm.ln()) / 50.0;
        assert!(slope <= bound, "residual slope {slope} at k = {}", w[0].k);
    }
}

#[test]
fn traces_satisfy_monotonicity_invariants() {
    let row = prep(16, 8);
    let op = row.operator();
    let rho = row.resolved.constants.rho;
    check_trace_invariants(
        &st_solve(&op, &row.rhs, &row.resolved).unwrap().trace,
        rho,
        false,
    );
    check_trace_invariants(
        &st_solve_inexact(&op, &row.rhs, &row.resolved)
            .unwrap()
            .trace,
        rho,
        true,
    );
}
