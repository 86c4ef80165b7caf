//! Richardson iterations on low-rank matrices.
//!
//! Three solvers share one operator interface: the plain Richardson iteration
//! (optionally rounded), the soft-thresholded iteration with an a posteriori
//! threshold schedule ([`st_solve`]), and its variant with inexactly evaluated
//! residuals ([`st_solve_inexact`]).

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::kron::KronOperator;
use crate::lowrank::LowRankMatrix;

/// Upper limit on consecutive halvings of the residual tolerance.
const MAX_HALVINGS: usize = 200;

/// User-level solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// Residual tolerance `ε`; iterations stop once the residual is below `γ₁^ϵ ε`.
    pub eps_target: f64,
    /// Initial soft-threshold `δ₀`.
    pub delta0: f64,
    /// Raise `δ₀` to `ω ‖F‖` when it is smaller.
    pub enforce_delta0_bound: bool,
    /// Threshold decay `θ`.
    pub theta: f64,
    /// `ν` in the threshold-decrease tests.
    pub nu: f64,
    /// `τ₁`; `None` selects `(1-ρ)/(4(3-ρ))`.
    pub tau1: Option<f64>,
    /// `τ₂`; `None` selects `(1-ρ)/4`.
    pub tau2: Option<f64>,
    /// Initial residual tolerance `η₀` of the inexact solver.
    pub eta0: f64,
    /// Iteration cap; `None` selects `50 ⌈ln ε / ln ρ⌉`.
    pub max_iter: Option<usize>,
    /// Wall-clock limit in seconds. Only enforced when the `std` feature
    /// provides a clock; a solve that hits it reports non-convergence.
    pub max_wall_time: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            eps_target: 1e-7,
            delta0: 0.1,
            enforce_delta0_bound: false,
            theta: 0.75,
            nu: 0.5,
            tau1: None,
            tau2: None,
            eta0: 0.1,
            max_iter: None,
            max_wall_time: None,
        }
    }
}

/// Constants of the preconditioned Richardson iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub gamma1_eps: f64,
    pub gamma2_eps: f64,
    pub omega: f64,
    pub rho: f64,
}

/// `γ₁^ϵ = (1-ϵ)²γ₁`, `γ₂^ϵ = (1+ϵ)²γ₂`, `ω = 2/(γ₁^ϵ+γ₂^ϵ)`,
/// `ρ = (γ₂^ϵ-γ₁^ϵ)/(γ₂^ϵ+γ₁^ϵ)`.
pub fn derived_constants(gamma1: f64, gamma2: f64, eps_sum: f64) -> Result<DerivedConstants> {
    if !(eps_sum >= 0.0 && eps_sum < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "exponential-sum accuracy {eps_sum} must lie in [0, 1)"
        )));
    }
    if !(gamma1 > 0.0 && gamma1 <= gamma2 && gamma2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < gamma1 <= gamma2, got {gamma1}, {gamma2}"
        )));
    }
    let g1 = (1.0 - eps_sum) * (1.0 - eps_sum) * gamma1;
    let g2 = (1.0 + eps_sum) * (1.0 + eps_sum) * gamma2;
    Ok(DerivedConstants {
        gamma1_eps: g1,
        gamma2_eps: g2,
        omega: 2.0 / (g1 + g2),
        rho: (g2 - g1) / (g2 + g1),
    })
}

/// Constants `B` and `C` of the inexact solver.
pub fn inexact_constants(
    c: &DerivedConstants,
    nu: f64,
    tau1: f64,
    tau2: f64,
) -> Result<(f64, f64)> {
    let rho = c.rho;
    if !(rho >= 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "contraction factor {rho} outside [0, 1)"
        )));
    }
    if !(nu > 0.0 && nu < 1.0) || !(tau1 > 0.0 && tau1 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need nu, tau1 in (0, 1), got {nu}, {tau1}"
        )));
    }
    if !(tau2 > 0.0 && tau2 < 0.5 * (1.0 - rho)) {
        return Err(Error::InvalidArgument(format!(
            "tau2 = {tau2} must lie in (0, (1 - rho)/2) = (0, {})",
            0.5 * (1.0 - rho)
        )));
    }
    let g2 = c.gamma2_eps;
    let w = c.omega;
    let b = (1.0 - rho) * (1.0 - tau1) * nu
        / ((1.0 + tau2) * (rho + (1.0 + rho) * tau2 / (1.0 - tau2)) * g2);
    let c1 = (1.0 - tau1) * tau2 * b / ((1.0 + tau1 + g2 * b) * w);
    let c2 = rho * nu * tau2 * (1.0 - tau1) * (1.0 - tau1)
        / ((rho * (1.0 + tau1) * (1.0 + tau2) + nu * (1.0 - tau1) * (1.0 - rho)) * w);
    Ok((b, c1.min(c2)))
}

/// Parameters with all defaults resolved against the problem constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedParams {
    pub params: SolverParams,
    pub constants: DerivedConstants,
    pub tau1: f64,
    pub tau2: f64,
    pub max_iter: usize,
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.eps_target > 0.0, "eps_target must be positive"),
            (self.delta0 >= 0.0, "delta0 must be nonnegative"),
            (
                self.theta > 0.0 && self.theta < 1.0,
                "theta must lie in (0, 1)",
            ),
            (self.nu > 0.0 && self.nu < 1.0, "nu must lie in (0, 1)"),
            (
                self.eta0 > 0.0 && self.eta0 < 1.0,
                "eta0 must lie in (0, 1)",
            ),
            (
                self.max_wall_time.is_none_or(|t| t > 0.0),
                "max_wall_time must be positive",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidArgument(msg.into()));
            }
        }
        if let Some(t) = self.tau1 {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "tau1 = {t} must lie in (0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Fills in `τ₁`, `τ₂` and the iteration cap from the contraction factor.
    pub fn resolve(&self, constants: DerivedConstants) -> Result<ResolvedParams> {
        self.validate()?;
        let rho = constants.rho;
        let tau1 = self.tau1.unwrap_or((1.0 - rho) / (4.0 * (3.0 - rho)));
        let tau2 = self.tau2.unwrap_or((1.0 - rho) / 4.0);
        if !(tau2 > 0.0 && tau2 < 0.5 * (1.0 - rho)) {
            return Err(Error::InvalidArgument(format!(
                "tau2 = {tau2} must lie in (0, (1 - rho)/2) = (0, {})",
                0.5 * (1.0 - rho)
            )));
        }
        let max_iter = self
            .max_iter
            .unwrap_or_else(|| default_max_iter(self.eps_target, rho));
        Ok(ResolvedParams {
            params: self.clone(),
            constants,
            tau1,
            tau2,
            max_iter,
        })
    }
}

/// `50 ⌈ln ε / ln ρ⌉`, or 50 when `ρ = 0`.
pub fn default_max_iter(eps: f64, rho: f64) -> usize {
    if rho <= 0.0 || eps >= 1.0 {
        return 50;
    }
    50 * (fmath::ceil(fmath::ln(eps) / fmath::ln(rho)) as usize).max(1)
}

/// Diagnostics of one inexact operator application.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ApplyStats {
    /// Number of Kronecker products formed.
    pub products: usize,
    /// Products discarded as negligible.
    pub dropped: usize,
    /// Largest rank of the running sum before truncation.
    pub max_accumulator_rank: usize,
    /// Rank of the returned approximation.
    pub output_rank: usize,
}

/// An operator the solvers can apply to low-rank matrices.
pub trait LowRankOperator {
    /// `(rows, cols)` of the matrices the operator acts on.
    fn dims(&self) -> (usize, usize);

    /// Exact application up to the canonicalization floor.
    fn apply(&self, w: &LowRankMatrix) -> Result<LowRankMatrix>;

    /// Images of `w` under the individual Kronecker products whose sum is the
    /// operator.
    fn term_images(&self, w: &LowRankMatrix) -> Result<Vec<LowRankMatrix>>;

    /// Number of Kronecker products in the fully expanded operator.
    fn expanded_terms(&self) -> usize;

    /// Approximation of the image within `eta / 2` in Frobenius norm.
    fn apply_inexact(&self, w: &LowRankMatrix, eta: f64) -> Result<(LowRankMatrix, ApplyStats)> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "apply tolerance eta = {eta} must be positive"
            )));
        }
        let (rows, cols) = self.dims();
        if w.rank() == 0 {
            return Ok((LowRankMatrix::zeros(rows, cols), ApplyStats::default()));
        }
        let images = self.term_images(w)?;
        careful_sum(images, eta, rows, cols)
    }
}

impl LowRankOperator for KronOperator {
    fn dims(&self) -> (usize, usize) {
        (self.spatial_dim(), self.angular_dim())
    }

    fn apply(&self, w: &LowRankMatrix) -> Result<LowRankMatrix> {
        KronOperator::apply(self, w, 0.0)
    }

    fn term_images(&self, w: &LowRankMatrix) -> Result<Vec<LowRankMatrix>> {
        if (w.rows(), w.cols()) != LowRankOperator::dims(self) {
            return Err(Error::DimensionMismatch(format!(
                "operator acts on {:?}, argument is {}x{}",
                LowRankOperator::dims(self),
                w.rows(),
                w.cols()
            )));
        }
        Ok(self.terms().iter().map(|t| t.apply(w)).collect())
    }

    fn expanded_terms(&self) -> usize {
        self.len()
    }
}

/// `P E P` with both factors kept separate.
#[derive(Debug, Clone, Copy)]
pub struct Sandwich<'a> {
    pub outer: &'a KronOperator,
    pub inner: &'a KronOperator,
}

impl LowRankOperator for Sandwich<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.outer.spatial_dim(), self.outer.angular_dim())
    }

    /// Applied stage by stage, canonicalizing after each factor.
    fn apply(&self, w: &LowRankMatrix) -> Result<LowRankMatrix> {
        let a = self.outer.apply(w, 0.0)?;
        let b = self.inner.apply(&a, 0.0)?;
        self.outer.apply(&b, 0.0)
    }

    /// `Θ_{m0} E Θ_{m1} W` ordered by `q = r_p m1 + m0`.
    fn term_images(&self, w: &LowRankMatrix) -> Result<Vec<LowRankMatrix>> {
        let mut out = Vec::with_capacity(self.outer.len() * self.outer.len());
        for right in self.outer.terms() {
            // Left uncompressed: the outer factors amplify smooth components
            // strongly, so even a relative 1e-14 cut here can exceed small eta.
            let mid = self.inner.apply_unrounded(&right.apply(w))?;
            for left in self.outer.terms() {
                out.push(left.apply(&mid));
            }
        }
        Ok(out)
    }

    fn expanded_terms(&self) -> usize {
        self.outer.len() * self.outer.len() * self.inner.len()
    }
}

/// Sum of `terms` within `eta / 2`.
///
/// Terms are sorted by norm. The smallest ones are dropped while their norms
/// add up to at most `eta / 4`; the rest are accumulated in increasing order
/// with a truncation after every addition. Truncation budgets are
/// proportional to the norm mass accumulated so far and add up to the part of
/// `eta / 2` not used by dropping.
pub fn careful_sum(
    terms: Vec<LowRankMatrix>,
    eta: f64,
    rows: usize,
    cols: usize,
) -> Result<(LowRankMatrix, ApplyStats)> {
    let mut stats = ApplyStats {
        products: terms.len(),
        ..ApplyStats::default()
    };
    let mut keyed: Vec<(f64, usize)> = terms
        .iter()
        .enumerate()
        .map(|(q, t)| (t.frobenius_norm(), q))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = keyed.len();
    let mut dropped_mass = 0.0;
    let mut q0 = 0;
    while q0 < n && dropped_mass + keyed[q0].0 <= 0.25 * eta {
        dropped_mass += keyed[q0].0;
        q0 += 1;
    }
    stats.dropped = q0;
    if q0 == n {
        return Ok((LowRankMatrix::zeros(rows, cols), stats));
    }
    let budget = 0.5 * eta - dropped_mass;
    let weight_total: f64 = (q0..n).map(|s| (n - s) as f64 * keyed[s].0).sum();
    let mut slot: Vec<Option<LowRankMatrix>> = terms.into_iter().map(Some).collect();
    let mut partial = 0.0;
    let mut acc: Option<LowRankMatrix> = None;
    for &(tau, q) in &keyed[q0..] {
        partial += tau;
        let zeta = if weight_total > 0.0 {
            budget * partial / weight_total
        } else {
            0.0
        };
        let term = slot[q].take().expect("each term is used once");
        let sum = match acc.take() {
            None => term,
            Some(a) => LowRankMatrix::combine(&[(1.0, &a), (1.0, &term)])?,
        };
        stats.max_accumulator_rank = stats.max_accumulator_rank.max(sum.rank());
        acc = Some(sum.truncated_svd(zeta)?);
    }
    let out = acc.unwrap_or_else(|| LowRankMatrix::zeros(rows, cols));
    stats.output_rank = out.rank();
    Ok((out, stats))
}

/// One row of a solver trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub rank: usize,
    pub delta: f64,
    /// Residual tolerance; zero for exact-residual solvers.
    pub eta: f64,
    pub res_norm: f64,
    /// `‖W_k - W_{k-1}‖_F` (zero for `k = 0`).
    pub update_norm: f64,
    /// Halvings of `η` performed while producing this iterate.
    pub halvings: usize,
    /// Largest rank of an inexact operator image produced in this step.
    pub apply_rank: usize,
    /// Seconds since the solve started, when a clock is available.
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
    /// Number of updates `W_k -> W_{k+1}` performed.
    pub iterations: usize,
    /// Number of residuals evaluated, counting the initial `R_0 = -F`.
    pub residual_evaluations: usize,
    pub final_rank: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Largest rank of any iterate.
    pub max_rank: usize,
    /// Largest rank of an inexact operator image (inexact solver only).
    pub max_apply_rank: usize,
    /// Largest pre-truncation rank inside the inexact summation.
    pub max_accumulator_rank: usize,
    /// `δ₀` actually used.
    pub delta0: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub w: LowRankMatrix,
    pub trace: SolveTrace,
}

struct Clock {
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> Option<f64> {
        #[cfg(feature = "std")]
        {
            Some(self.start.elapsed().as_secs_f64())
        }
        #[cfg(not(feature = "std"))]
        {
            None
        }
    }

    fn expired(&self, limit: Option<f64>) -> bool {
        match (limit, self.elapsed()) {
            (Some(limit), Some(t)) => t >= limit,
            _ => false,
        }
    }
}

fn check_dims(op: &dyn LowRankOperator, f: &LowRankMatrix) -> Result<()> {
    let (r, c) = op.dims();
    if f.rows() != r || f.cols() != c {
        return Err(Error::DimensionMismatch(format!(
            "operator acts on {r}x{c}, right-hand side is {}x{}",
            f.rows(),
            f.cols()
        )));
    }
    Ok(())
}

/// `W - ω R` in unrounded form.
fn richardson_step(w: &LowRankMatrix, r: &LowRankMatrix, omega: f64) -> Result<LowRankMatrix> {
    LowRankMatrix::combine(&[(1.0, w), (-omega, r)])
}

/// `A W - F`, canonical.
fn exact_residual(
    op: &dyn LowRankOperator,
    w: &LowRankMatrix,
    f: &LowRankMatrix,
) -> Result<LowRankMatrix> {
    let aw = op.apply(w)?;
    LowRankMatrix::combine(&[(1.0, &aw), (-1.0, f)])?.canonicalize()
}

fn initial_delta(rp: &ResolvedParams, f_norm: f64) -> f64 {
    let bound = rp.constants.omega * f_norm;
    if rp.params.enforce_delta0_bound {
        rp.params.delta0.max(bound)
    } else {
        rp.params.delta0
    }
}

/// Plain Richardson iteration `W ← W - ω(AW - F)`, truncated at `round_tol`
/// after every step (no truncation for `round_tol = 0`).
pub fn richardson_plain(
    op: &dyn LowRankOperator,
    f: &LowRankMatrix,
    rp: &ResolvedParams,
    round_tol: f64,
) -> Result<SolveOutcome> {
    check_dims(op, f)?;
    let clock = Clock::start();
    let c = rp.constants;
    let stop = c.gamma1_eps * rp.params.eps_target;
    let (rows, cols) = op.dims();
    let mut w = LowRankMatrix::zeros(rows, cols);
    let mut r = f.scaled(-1.0).canonicalize()?;
    let mut res = r.frobenius_norm();
    let mut trace = SolveTrace {
        residual_evaluations: 1,
        ..SolveTrace::default()
    };
    trace
        .records
        .push(record(0, &w, 0.0, 0.0, res, 0.0, 0, 0, clock.elapsed()));
    while res > stop && trace.iterations < rp.max_iter && !clock.expired(rp.params.max_wall_time) {
        let w1 = richardson_step(&w, &r, c.omega)?.truncated_svd(round_tol)?;
        let r1 = exact_residual(op, &w1, f)?;
        let update = LowRankMatrix::distance(&w1, &w)?;
        w = w1;
        r = r1;
        res = r.frobenius_norm();
        trace.iterations += 1;
        trace.residual_evaluations += 1;
        trace.max_rank = trace.max_rank.max(w.rank());
        trace.records.push(record(
            trace.iterations,
            &w,
            0.0,
            0.0,
            res,
            update,
            0,
            0,
            clock.elapsed(),
        ));
    }
    finish(w, trace, res, res <= stop)
}

#[allow(clippy::too_many_arguments)]
fn record(
    k: usize,
    w: &LowRankMatrix,
    delta: f64,
    eta: f64,
    res_norm: f64,
    update_norm: f64,
    halvings: usize,
    apply_rank: usize,
    wall_time: Option<f64>,
) -> IterationRecord {
    IterationRecord {
        k,
        rank: w.rank(),
        delta,
        eta,
        res_norm,
        update_norm,
        halvings,
        apply_rank,
        wall_time,
    }
}

fn finish(
    w: LowRankMatrix,
    mut trace: SolveTrace,
    res: f64,
    converged: bool,
) -> Result<SolveOutcome> {
    trace.final_rank = w.rank();
    trace.final_residual = res;
    trace.converged = converged;
    Ok(SolveOutcome { w, trace })
}

/// Soft-thresholded Richardson iteration with exact residuals.
///
/// `W_{k+1} = S_{δ_k}(W_k - ω R_k)`; the threshold shrinks by `θ` whenever
/// `‖W_{k+1} - W_k‖ ≤ (1-ρ)ν/(γ₂^ϵ ρ) ‖R_{k+1}‖`. Stops when
/// `‖R_k‖ ≤ γ₁^ϵ ε`.
pub fn st_solve(
    op: &dyn LowRankOperator,
    f: &LowRankMatrix,
    rp: &ResolvedParams,
) -> Result<SolveOutcome> {
    st_solve_with(op, f, rp, false)
}

/// [`st_solve`] with an optional fixed threshold (`θ` ignored).
pub fn st_solve_with(
    op: &dyn LowRankOperator,
    f: &LowRankMatrix,
    rp: &ResolvedParams,
    fixed_delta: bool,
) -> Result<SolveOutcome> {
    check_dims(op, f)?;
    let clock = Clock::start();
    let c = rp.constants;
    let stop = c.gamma1_eps * rp.params.eps_target;
    let shrink_coeff = if c.rho > 0.0 {
        (1.0 - c.rho) * rp.params.nu / (c.gamma2_eps * c.rho)
    } else {
        f64::INFINITY
    };
    let (rows, cols) = op.dims();
    let mut w = LowRankMatrix::zeros(rows, cols);
    let mut r = f.scaled(-1.0).canonicalize()?;
    let mut res = r.frobenius_norm();
    let mut delta = initial_delta(rp, f.frobenius_norm());
    let mut trace = SolveTrace {
        residual_evaluations: 1,
        delta0: delta,
        ..SolveTrace::default()
    };
    trace
        .records
        .push(record(0, &w, delta, 0.0, res, 0.0, 0, 0, clock.elapsed()));
    while res > stop && trace.iterations < rp.max_iter && !clock.expired(rp.params.max_wall_time) {
        let w1 = richardson_step(&w, &r, c.omega)?.soft_threshold(delta)?;
        let r1 = exact_residual(op, &w1, f)?;
        let res1 = r1.frobenius_norm();
        let update = LowRankMatrix::distance(&w1, &w)?;
        if !fixed_delta && update <= shrink_coeff * res1 {
            delta *= rp.params.theta;
        }
        w = w1;
        r = r1;
        res = res1;
        trace.iterations += 1;
        trace.residual_evaluations += 1;
        trace.max_rank = trace.max_rank.max(w.rank());
        trace.records.push(record(
            trace.iterations,
            &w,
            delta,
            0.0,
            res,
            update,
            0,
            0,
            clock.elapsed(),
        ));
    }
    finish(w, trace, res, res <= stop)
}

/// Residual `R` with `‖R - (AW - F)‖ ≤ η`: an inexact image within `η/2`,
/// minus `F`, truncated at `η/2`.
fn inexact_residual(
    op: &dyn LowRankOperator,
    w: &LowRankMatrix,
    f: &LowRankMatrix,
    eta: f64,
    trace: &mut SolveTrace,
    step_apply_rank: &mut usize,
) -> Result<LowRankMatrix> {
    let (aw, stats) = op.apply_inexact(w, eta)?;
    trace.residual_evaluations += 1;
    trace.max_apply_rank = trace.max_apply_rank.max(stats.output_rank);
    trace.max_accumulator_rank = trace.max_accumulator_rank.max(stats.max_accumulator_rank);
    *step_apply_rank = (*step_apply_rank).max(stats.output_rank);
    LowRankMatrix::combine(&[(1.0, &aw), (-1.0, f)])?.truncated_svd(0.5 * eta)
}

/// Soft-thresholded Richardson iteration with inexact residuals, following
/// the residual-tolerance control of the adaptive algorithm line by line.
pub fn st_solve_inexact(
    op: &dyn LowRankOperator,
    f: &LowRankMatrix,
    rp: &ResolvedParams,
) -> Result<SolveOutcome> {
    check_dims(op, f)?;
    let clock = Clock::start();
    let c = rp.constants;
    let p = &rp.params;
    let (b_const, c_const) = inexact_constants(&c, p.nu, rp.tau1, rp.tau2)?;
    let stop = c.gamma1_eps * p.eps_target;
    let (rows, cols) = op.dims();
    let mut w = LowRankMatrix::zeros(rows, cols);
    let mut r = f.scaled(-1.0).canonicalize()?;
    let mut res = r.frobenius_norm();
    let mut eta = p.eta0;
    let mut delta = initial_delta(rp, f.frobenius_norm());
    let mut trace = SolveTrace {
        residual_evaluations: 1,
        delta0: delta,
        ..SolveTrace::default()
    };
    trace
        .records
        .push(record(0, &w, delta, eta, res, 0.0, 0, 0, clock.elapsed()));
    if res == 0.0 {
        return finish(w, trace, res, true);
    }
    loop {
        if res + eta <= stop {
            return finish(w, trace, res, true);
        }
        if trace.iterations >= rp.max_iter || clock.expired(rp.params.max_wall_time) {
            return finish(w, trace, res, false);
        }
        let mut step_apply_rank = 0;
        let mut halvings = 0;
        let mut w1 = richardson_step(&w, &r, c.omega)?.soft_threshold(delta)?;
        loop {
            let update = LowRankMatrix::distance(&w1, &w)?;
            if !(eta > rp.tau2 / c.omega * update && eta > c_const * res)
                || halvings >= MAX_HALVINGS
            {
                break;
            }
            eta *= 0.5;
            halvings += 1;
            r = inexact_residual(op, &w, f, eta, &mut trace, &mut step_apply_rank)?;
            res = r.frobenius_norm();
            w1 = richardson_step(&w, &r, c.omega)?.soft_threshold(delta)?;
        }
        let mut eta1 = 2.0 * eta;
        let mut r1;
        let mut res1;
        let mut inner = 0;
        loop {
            eta1 *= 0.5;
            r1 = inexact_residual(op, &w1, f, eta1, &mut trace, &mut step_apply_rank)?;
            res1 = r1.frobenius_norm();
            if res1 + eta1 <= stop {
                trace.iterations += 1;
                trace.max_rank = trace.max_rank.max(w1.rank());
                let update = LowRankMatrix::distance(&w1, &w)?;
                trace.records.push(record(
                    trace.iterations,
                    &w1,
                    delta,
                    eta1,
                    res1,
                    update,
                    halvings + inner,
                    step_apply_rank,
                    clock.elapsed(),
                ));
                return finish(w1, trace, res1, true);
            }
            if eta1 <= rp.tau1 * res1 || inner >= MAX_HALVINGS {
                break;
            }
            inner += 1;
        }
        let update = LowRankMatrix::distance(&w1, &w)?;
        if update <= b_const * res1 {
            delta *= p.theta;
            eta1 = rp.tau1 * res1;
        }
        w = w1;
        r = r1;
        res = res1;
        eta = eta1;
        trace.iterations += 1;
        trace.max_rank = trace.max_rank.max(w.rank());
        trace.records.push(record(
            trace.iterations,
            &w,
            delta,
            eta,
            res,
            update,
            halvings + inner,
            step_apply_rank,
            clock.elapsed(),
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::{KronTerm, LinearMap};
    use alloc::vec;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(rng: &mut ChaCha8Rng, n: usize, lo: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
        &a * a.transpose() + DMatrix::identity(n, n) * lo
    }

    fn small_operator(rng: &mut ChaCha8Rng) -> KronOperator {
        KronOperator::new(vec![
            KronTerm::new(
                1.0,
                LinearMap::dense(spd(rng, 4, 0.5)),
                LinearMap::Identity(6),
            ),
            KronTerm::new(
                1.0,
                LinearMap::Identity(4),
                LinearMap::dense(spd(rng, 6, 0.5)),
            ),
        ])
        .unwrap()
    }

    fn spectrum(op: &KronOperator) -> (f64, f64) {
        let m = op.materialize().unwrap().symmetric_eigen().eigenvalues;
        (m.min(), m.max())
    }

    #[test]
    fn derived_constant_examples() {
        let c = derived_constants(1.0, 1.0, 0.0).unwrap();
        assert_eq!(c.rho, 0.0);
        let c = derived_constants(1.0, 4.0, 0.0).unwrap();
        assert!((c.omega - 0.4).abs() < 1e-15);
        assert!((c.rho - 0.6).abs() < 1e-15);
        assert!(derived_constants(1.0, 4.0, 1.0).is_err());
    }

    #[test]
    fn inexact_constants_positive_and_limit() {
        let c = derived_constants(0.1, 5.0, 0.1).unwrap();
        let rho = c.rho;
        let (b, cc) = inexact_constants(
            &c,
            0.5,
            (1.0 - rho) / (4.0 * (3.0 - rho)),
            (1.0 - rho) / 4.0,
        )
        .unwrap();
        assert!(b > 0.0 && cc > 0.0);
        let (b0, _) = inexact_constants(&c, 0.5, 1e-12, 1e-12).unwrap();
        let limit = (1.0 - rho) * 0.5 / (rho * c.gamma2_eps);
        assert!((b0 - limit).abs() < 1e-9 * limit);
        assert!(inexact_constants(&c, 0.5, 0.1, 0.5 * (1.0 - rho)).is_err());
    }

    #[test]
    fn identity_operator_converges_in_one_step() {
        let op = KronOperator::identity(3, 2);
        let f = LowRankMatrix::from_dense(&DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 + 1.0))
            .unwrap();
        let c = derived_constants(1.0, 1.0, 0.0).unwrap();
        let rp = SolverParams::default().resolve(c).unwrap();
        let out = richardson_plain(&op, &f, &rp, 0.0).unwrap();
        assert_eq!(out.trace.iterations, 1);
        assert!((out.w.to_dense() - f.to_dense()).norm() < 1e-14);
    }

    #[test]
    fn scalar_system() {
        let a = 2.5;
        let op = KronOperator::new(vec![KronTerm::new(
            a,
            LinearMap::Identity(1),
            LinearMap::Identity(1),
        )])
        .unwrap();
        let f = LowRankMatrix::from_dense(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        let c = derived_constants(2.0, 3.0, 0.0).unwrap();
        let rp = SolverParams::default().resolve(c).unwrap();
        let out = richardson_plain(&op, &f, &rp, 0.0).unwrap();
        assert!(out.trace.converged);
        assert!((out.w.to_dense()[(0, 0)] - 1.0 / a).abs() < 1e-7);
    }

    #[test]
    fn zero_rhs_returns_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = small_operator(&mut rng);
        let (lo, hi) = spectrum(&op);
        let rp = SolverParams::default()
            .resolve(derived_constants(lo, hi, 0.0).unwrap())
            .unwrap();
        let f = LowRankMatrix::zeros(6, 4);
        for out in [
            st_solve(&op, &f, &rp).unwrap(),
            st_solve_inexact(&op, &f, &rp).unwrap(),
        ] {
            assert_eq!(out.trace.iterations, 0);
            assert_eq!(out.w.rank(), 0);
            assert!(out.trace.converged);
        }
    }

    #[test]
    fn solvers_match_dense_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let op = small_operator(&mut rng);
        let (lo, hi) = spectrum(&op);
        let fd = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let f = LowRankMatrix::from_dense(&fd).unwrap();
        let x = op
            .materialize()
            .unwrap()
            .lu()
            .solve(&DVector::from_column_slice(fd.as_slice()))
            .unwrap();
        let exact = DMatrix::from_column_slice(6, 4, x.as_slice());
        let params = SolverParams {
            eps_target: 1e-8,
            ..SolverParams::default()
        };
        let rp = params
            .resolve(derived_constants(lo, hi, 0.0).unwrap())
            .unwrap();
        for out in [
            richardson_plain(&op, &f, &rp, 0.0).unwrap(),
            st_solve(&op, &f, &rp).unwrap(),
            st_solve_inexact(&op, &f, &rp).unwrap(),
        ] {
            assert!(out.trace.converged);
            let err = (out.w.to_dense() - &exact).norm();
            assert!(err <= 1e-8, "error {err}");
            let deltas: Vec<f64> = out.trace.records.iter().map(|r| r.delta).collect();
            assert!(deltas.windows(2).all(|d| d[1] <= d[0]));
        }
    }

    #[test]
    fn careful_sum_respects_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let terms: Vec<LowRankMatrix> = (0..12)
            .map(|k| {
                let l = DMatrix::from_fn(9, 2, |_, _| rng.random_range(-1.0..1.0));
                let r = DMatrix::from_fn(7, 2, |_, _| rng.random_range(-1.0..1.0));
                LowRankMatrix::from_factors(l, r)
                    .unwrap()
                    .scaled(10f64.powi(-(k as i32) / 2))
            })
            .collect();
        let exact = terms
            .iter()
            .fold(DMatrix::zeros(9, 7), |a, t| a + t.to_dense());
        for eta in [1e-1, 1e-3, 1e-6] {
            let (s, stats) = careful_sum(terms.clone(), eta, 9, 7).unwrap();
            assert!((s.to_dense() - &exact).norm() <= 0.5 * eta);
            assert_eq!(stats.products, 12);
        }
    }
}
