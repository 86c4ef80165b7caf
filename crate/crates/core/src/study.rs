//! Convergence studies: solving a benchmark on a ladder of meshes, mapping
//! the result back to the Galerkin basis and measuring discretization errors.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::banded::LowerBidiagonal;
use crate::cases::{ExactSolution, ManufacturedCase};
use crate::discretization::{
    assemble_load, AssembledSystem, DiscretizationSpec, Scheme, POINTS_PER_CELL,
};
use crate::error::{Error, Result};
use crate::expsum::{ExpSumApproximation, Preconditioner, DEFAULT_EPS};
use crate::fmath;
use crate::lowrank::LowRankMatrix;
use crate::solver::{
    derived_constants, inexact_constants, richardson_plain, st_solve, st_solve_inexact,
    DerivedConstants, LowRankOperator, ResolvedParams, Sandwich, SolveTrace, SolverParams,
};

/// Singular values below this fraction of the largest are not counted in
/// reported ranks of the back-transformed solution.
pub const RANK_REL_TOL: f64 = 1e-12;

/// Default factor applied to the coercivity lower bound before it enters the
/// iteration constants.
pub const DEFAULT_GAMMA1_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToleranceRule {
    /// The configured `ε` on every row.
    Fixed,
    /// `ε = 0.1 / J`.
    ScaledOverJ,
}

impl ToleranceRule {
    pub fn tolerance(self, fixed: f64, j: usize) -> f64 {
        match self {
            Self::Fixed => fixed,
            Self::ScaledOverJ => 0.1 / j as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverVariant {
    /// Richardson iteration without thresholding.
    Plain,
    /// Soft thresholding with exact residuals.
    St,
    /// Soft thresholding with inexact residuals.
    StInexact,
}

/// Angular resolution paired with `J` elements: `N = J` for SN, and for PN
/// the smallest odd integer not below `J^{2/3}`.
pub fn paired_angular_size(scheme: Scheme, j: usize) -> usize {
    match scheme {
        Scheme::SN => j,
        Scheme::PN => {
            let n = fmath::ceil(fmath::pow(j as f64, 2.0 / 3.0) - 1e-9) as usize;
            n.max(1) | 1
        }
    }
}

/// Everything fixed for a study apart from the mesh ladder.
#[derive(Debug, Clone)]
pub struct StudyParams {
    pub variant: SolverVariant,
    pub solver: SolverParams,
    pub tolerance_rule: ToleranceRule,
    /// Relative accuracy of the exponential sum.
    pub expsum_eps: f64,
    /// Factor applied to the coercivity lower bound.
    pub gamma1_scale: f64,
    /// Truncation tolerance of the plain iteration (0 keeps every term).
    pub plain_round_tol: f64,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            variant: SolverVariant::St,
            solver: SolverParams::default(),
            tolerance_rule: ToleranceRule::Fixed,
            expsum_eps: DEFAULT_EPS,
            gamma1_scale: DEFAULT_GAMMA1_SCALE,
            plain_round_tol: 0.0,
        }
    }
}

/// Constants of one row, reported alongside the results.
#[derive(Debug, Clone, PartialEq)]
pub struct RowConstants {
    /// Coercivity bounds as derived from the coefficients.
    pub gamma1: f64,
    pub gamma2: f64,
    /// Lower bound actually used (`gamma1_scale * gamma1`).
    pub gamma1_used: f64,
    pub derived: DerivedConstants,
    pub r_p: usize,
    pub i1: usize,
    pub i2: usize,
    pub lambda: f64,
    pub big_lambda: f64,
    pub expsum_max_error: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub b_const: f64,
    pub c_const: f64,
    pub eps_target: f64,
    pub max_iter: usize,
    pub f_norm: f64,
    pub load_drift: f64,
    pub load_flagged: bool,
}

/// An assembled, preconditioned problem ready to be solved.
#[derive(Debug, Clone)]
pub struct PreparedRow {
    pub system: AssembledSystem,
    pub preconditioner: Preconditioner,
    /// Preconditioned right-hand side `P f_hat`.
    pub rhs: LowRankMatrix,
    pub resolved: ResolvedParams,
    pub constants: RowConstants,
}

impl PreparedRow {
    pub fn operator(&self) -> Sandwich<'_> {
        Sandwich {
            outer: &self.preconditioner.terms,
            inner: &self.system.e_hat,
        }
    }
}

/// Assembles the discrete system for `(J, N)`, builds the preconditioner and
/// resolves the solver parameters.
pub fn prepare_row(
    case: &ManufacturedCase,
    scheme: Scheme,
    j: usize,
    n: usize,
    params: &StudyParams,
) -> Result<PreparedRow> {
    if !(params.gamma1_scale > 0.0 && params.gamma1_scale <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma1_scale = {} must lie in (0, 1]",
            params.gamma1_scale
        )));
    }
    let spec = case.discretization(scheme, j, n)?;
    let system = AssembledSystem::assemble(&spec)?;
    let load = assemble_load(case, &spec, &system.spatial)?;
    let approx = ExpSumApproximation::fit(params.expsum_eps, system.lambda, system.big_lambda)?;
    let preconditioner = Preconditioner::build(&approx, &system.j_hat_mu, &system.j_hat_z)?;
    let rhs = preconditioner.apply(&LowRankMatrix::from_dense(&load.f_hat)?, 0.0)?;
    let gamma1 = system.constants.gamma1;
    let gamma2 = system.constants.gamma2;
    let gamma1_used = params.gamma1_scale * gamma1;
    let derived = derived_constants(gamma1_used, gamma2, params.expsum_eps)?;
    let mut solver = params.solver.clone();
    solver.eps_target = params.tolerance_rule.tolerance(solver.eps_target, j);
    let resolved = solver.resolve(derived)?;
    let (b_const, c_const) = inexact_constants(&derived, solver.nu, resolved.tau1, resolved.tau2)?;
    let constants = RowConstants {
        gamma1,
        gamma2,
        gamma1_used,
        derived,
        r_p: approx.rank(),
        i1: approx.i1,
        i2: approx.i2,
        lambda: system.lambda,
        big_lambda: system.big_lambda,
        expsum_max_error: approx.max_rel_error,
        tau1: resolved.tau1,
        tau2: resolved.tau2,
        b_const,
        c_const,
        eps_target: solver.eps_target,
        max_iter: resolved.max_iter,
        f_norm: rhs.frobenius_norm(),
        load_drift: load.drift,
        load_flagged: load.flagged,
    };
    Ok(PreparedRow {
        system,
        preconditioner,
        rhs,
        resolved,
        constants,
    })
}

/// `U = T_z^{-T} (P W)`: coefficients in the hat-function by angular basis.
pub fn back_transform(
    w: &LowRankMatrix,
    p: &Preconditioner,
    t_z: &LowerBidiagonal,
) -> Result<LowRankMatrix> {
    if t_z.dim() != w.rows() {
        return Err(Error::DimensionMismatch(format!(
            "change of basis has size {}, iterate has {} rows",
            t_z.dim(),
            w.rows()
        )));
    }
    let pw = p.apply(w, 0.0)?;
    pw.map_factors(|l| t_z.solve_transpose(l), |r| r.clone(), 1.0)
        .canonicalize()
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(u: &LowRankMatrix, rel_tol: f64) -> Result<usize> {
    let c = u.canonicalize()?;
    let s = c.values();
    let Some(&top) = s.iter().next() else {
        return Ok(0);
    };
    Ok(s.iter().filter(|&&x| x > rel_tol * top).count())
}

/// `(||u - u_h||, sqrt(||u - u_h||^2 + ||mu d/dz (u - u_h)||^2))` in
/// `L^2((0, Z) x (0, 1))` for coefficients `u` in the hat-function by angular
/// basis.
///
/// Both integrals use composite Gauss rules with 8 points per spatial piece
/// and per angular cell (at least 32 cells for PN). The error on the grid is
/// formed as a low-rank matrix and its norm taken without cancellation.
pub fn error_norms(
    exact: &ExactSolution,
    u: &LowRankMatrix,
    spec: &DiscretizationSpec,
) -> Result<(f64, f64)> {
    if u.rows() != spec.spatial_dim() || u.cols() != spec.angular_dim() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {}x{}, discretization expects {}x{}",
            u.rows(),
            u.cols(),
            spec.spatial_dim(),
            spec.angular_dim()
        )));
    }
    let zr = spec.spatial_rule(POINTS_PER_CELL);
    let mr = spec.angular_rule(POINTS_PER_CELL);
    let sz: Vec<f64> = zr.weights.iter().map(|&w| fmath::sqrt(w)).collect();
    let sm: Vec<f64> = mr.weights.iter().map(|&w| fmath::sqrt(w)).collect();
    let t = exact.terms.len();
    let (nz, nm) = (zr.nodes.len(), mr.nodes.len());
    let f = DMatrix::from_fn(nz, t, |i, k| sz[i] * (exact.terms[k].f)(zr.nodes[i]));
    let df = DMatrix::from_fn(nz, t, |i, k| sz[i] * (exact.terms[k].df)(zr.nodes[i]));
    let g = DMatrix::from_fn(nm, t, |q, k| sm[q] * (exact.terms[k].g)(mr.nodes[q]));
    let mu_g = DMatrix::from_fn(nm, t, |q, k| mr.nodes[q] * g[(q, k)]);

    let basis = spec.angular_basis_values(&mr.nodes);
    let mut hr = &basis * u.right();
    for (q, mut row) in hr.row_iter_mut().enumerate() {
        row *= sm[q];
    }
    let mu_hr = DMatrix::from_fn(nm, u.rank(), |q, k| mr.nodes[q] * hr[(q, k)]);
    let mut psi_l = zr.interpolate(u.left());
    let mut dpsi_l = zr.interpolate_derivative(u.left(), spec.mesh_width());
    for i in 0..nz {
        let mut row = psi_l.row_mut(i);
        row *= sz[i];
        let mut drow = dpsi_l.row_mut(i);
        drow *= sz[i];
    }

    let ones = nalgebra::DVector::from_element(t, 1.0);
    let grid_error =
        |a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>| -> Result<f64> {
            let exact_part = LowRankMatrix::from_weighted_factors(a, ones.clone(), b)?;
            let discrete = LowRankMatrix::from_weighted_factors(c, u.values().clone(), d)?;
            Ok(
                LowRankMatrix::combine(&[(1.0, &exact_part), (-1.0, &discrete)])?
                    .frobenius_norm_stable(),
            )
        };
    let l2 = grid_error(f, g, psi_l, hr)?;
    let deriv = grid_error(df, mu_g, dpsi_l, mu_hr)?;
    Ok((l2, fmath::sqrt(l2 * l2 + deriv * deriv)))
}

/// `log2(e_prev / e_next)` for consecutive entries; `None` for the first
/// entry and wherever either error is missing or not positive.
pub fn rates(errors: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(errors.len());
    for (i, e) in errors.iter().enumerate() {
        let r = match (i.checked_sub(1).and_then(|p| errors[p]), e) {
            (Some(a), Some(b)) if a > 0.0 && *b > 0.0 => Some(fmath::log2(a / b)),
            _ => None,
        };
        out.push(r);
    }
    out
}

/// One line of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub j: usize,
    pub n: usize,
    pub n_it: usize,
    pub err_l2: Option<f64>,
    pub rate_l2: Option<f64>,
    pub err_w2g: Option<f64>,
    pub rate_w2g: Option<f64>,
    pub rank_w: usize,
    pub rank_u: usize,
    pub r_inexact: Option<usize>,
    pub r_naive: Option<usize>,
}

/// A solved row with its trace and constants.
#[derive(Debug, Clone)]
pub struct RowResult {
    pub row: ConvergenceRow,
    pub trace: SolveTrace,
    pub constants: RowConstants,
    /// Back-transformed solution.
    pub u: LowRankMatrix,
}

/// Outcome of one study row; failures are kept so the study can continue.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub j: usize,
    pub n: usize,
    pub result: Result<RowResult>,
}

impl StudyRow {
    /// `true` when the row solved and its iteration converged.
    pub fn converged(&self) -> bool {
        matches!(&self.result, Ok(r) if r.trace.converged)
    }
}

/// Solves one row of a study. Rates are left empty.
pub fn run_row(
    case: &ManufacturedCase,
    scheme: Scheme,
    j: usize,
    n: usize,
    params: &StudyParams,
) -> Result<RowResult> {
    let prepared = prepare_row(case, scheme, j, n, params)?;
    solve_prepared(case, &prepared, params)
}

/// Solves an already prepared row.
pub fn solve_prepared(
    case: &ManufacturedCase,
    prepared: &PreparedRow,
    params: &StudyParams,
) -> Result<RowResult> {
    let op = prepared.operator();
    let outcome = match params.variant {
        SolverVariant::Plain => richardson_plain(
            &op,
            &prepared.rhs,
            &prepared.resolved,
            params.plain_round_tol,
        )?,
        SolverVariant::St => st_solve(&op, &prepared.rhs, &prepared.resolved)?,
        SolverVariant::StInexact => st_solve_inexact(&op, &prepared.rhs, &prepared.resolved)?,
    };
    let spec = &prepared.system.spec;
    let u = back_transform(
        &outcome.w,
        &prepared.preconditioner,
        &prepared.system.spatial.t_z,
    )?;
    let (err_l2, err_w2g) = match &case.exact {
        Some(exact) => {
            let (a, b) = error_norms(exact, &u, spec)?;
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    let rank_w = outcome.w.rank();
    let inexact = params.variant == SolverVariant::StInexact;
    let row = ConvergenceRow {
        j: spec.j,
        n: spec.n,
        n_it: outcome.trace.iterations,
        err_l2,
        rate_l2: None,
        err_w2g,
        rate_w2g: None,
        rank_w,
        rank_u: numerical_rank(&u, RANK_REL_TOL)?,
        r_inexact: inexact.then_some(outcome.trace.max_apply_rank),
        r_naive: inexact.then(|| op.expanded_terms() * rank_w),
    };
    Ok(RowResult {
        row,
        trace: outcome.trace,
        constants: prepared.constants.clone(),
        u,
    })
}

/// Fills in the rate columns from consecutive successful rows.
pub fn fill_rates(rows: &mut [StudyRow]) {
    let l2: Vec<Option<f64>> = rows
        .iter()
        .map(|r| r.result.as_ref().ok().and_then(|x| x.row.err_l2))
        .collect();
    let w2g: Vec<Option<f64>> = rows
        .iter()
        .map(|r| r.result.as_ref().ok().and_then(|x| x.row.err_w2g))
        .collect();
    for ((row, a), b) in rows.iter_mut().zip(rates(&l2)).zip(rates(&w2g)) {
        if let Ok(res) = &mut row.result {
            res.row.rate_l2 = a;
            res.row.rate_w2g = b;
        }
    }
}

/// Runs every `(J, N)` of `sizes` in order. A failing row is recorded and
/// the remaining rows still run.
pub fn run_convergence_study(
    case: &ManufacturedCase,
    scheme: Scheme,
    sizes: &[(usize, usize)],
    params: &StudyParams,
) -> Vec<StudyRow> {
    let mut rows: Vec<StudyRow> = sizes
        .iter()
        .map(|&(j, n)| StudyRow {
            j,
            n,
            result: run_row(case, scheme, j, n, params),
        })
        .collect();
    fill_rates(&mut rows);
    rows
}
