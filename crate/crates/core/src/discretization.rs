//! Galerkin discretization of the even-parity slab problem.
//!
//! Space uses nodal hat functions on an equispaced mesh of `[0, Z]`; angle
//! uses either normalized even Legendre polynomials on `(0, 1)` (PN) or
//! normalized indicator functions of equal cells (SN). Both angular bases are
//! orthonormal, so only the spatial basis needs the Cholesky change of basis
//! `T_z T_z^T = D + M_z`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::banded::{LowerBidiagonal, SymTridiagonal};
use crate::cases::ManufacturedCase;
use crate::coeff::CoefficientFunction;
use crate::error::{Error, Result};
use crate::fmath;
use crate::kron::{KronOperator, KronTerm, LinearMap};
use crate::quadrature::{legendre_values, QuadratureRule};

/// Gauss points per spatial element piece and per angular cell.
pub const POINTS_PER_CELL: usize = 8;
/// Higher order used to estimate the quadrature error of the load.
const CHECK_POINTS_PER_CELL: usize = 12;
/// Relative load drift between the two orders above which the load is flagged.
pub const LOAD_DRIFT_LIMIT: f64 = 1e-10;
/// Blocks up to this size keep their matrix functions as dense matrices.
pub const DENSE_BLOCK_LIMIT: usize = 512;
/// Relative level below which `sigma_t` counts as touching zero.
const SIGMA_T_FLOOR: f64 = 1e-10;
/// Minimum number of composite cells used for PN angular integrals of data.
const PN_MIN_CELLS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    PN,
    SN,
}

#[derive(Debug, Clone)]
pub struct DiscretizationSpec {
    pub scheme: Scheme,
    /// Number of spatial elements.
    pub j: usize,
    /// PN: odd truncation order. SN: number of angular cells.
    pub n: usize,
    pub z_max: f64,
    pub sigma_t: CoefficientFunction,
    pub sigma_s: CoefficientFunction,
}

impl DiscretizationSpec {
    pub fn new(
        scheme: Scheme,
        j: usize,
        n: usize,
        z_max: f64,
        sigma_t: CoefficientFunction,
        sigma_s: CoefficientFunction,
    ) -> Result<Self> {
        let spec = Self {
            scheme,
            j,
            n,
            z_max,
            sigma_t,
            sigma_s,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.j < 1 {
            return Err(Error::InvalidArgument(
                "need at least one spatial element".into(),
            ));
        }
        if self.n < 1 {
            return Err(Error::InvalidArgument(
                "angular resolution must be positive".into(),
            ));
        }
        if self.scheme == Scheme::PN && self.n % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "PN needs an odd truncation order, got {}",
                self.n
            )));
        }
        if !(self.z_max > 0.0 && self.z_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "slab thickness {} must be positive",
                self.z_max
            )));
        }
        Ok(())
    }

    pub fn spatial_dim(&self) -> usize {
        self.j + 1
    }

    /// Number of angular basis functions: `(N+1)/2` for PN, `N` for SN.
    pub fn angular_dim(&self) -> usize {
        match self.scheme {
            Scheme::PN => (self.n + 1) / 2,
            Scheme::SN => self.n,
        }
    }

    pub fn mesh_width(&self) -> f64 {
        self.z_max / self.j as f64
    }

    /// Quadrature pieces of `[0, Z]`: mesh elements split at coefficient
    /// discontinuities. Each entry is `(element, a, b)`.
    pub fn spatial_pieces(&self) -> Vec<(usize, f64, f64)> {
        let h = self.mesh_width();
        let mut jumps = self.sigma_t.breakpoints_in(self.z_max);
        jumps.extend(self.sigma_s.breakpoints_in(self.z_max));
        jumps.sort_by(f64::total_cmp);
        jumps.dedup();
        let mut out = Vec::with_capacity(self.j + jumps.len());
        for e in 0..self.j {
            let a = e as f64 * h;
            let b = if e + 1 == self.j {
                self.z_max
            } else {
                (e + 1) as f64 * h
            };
            let mut start = a;
            for &p in jumps.iter().filter(|&&p| p > a && p < b) {
                out.push((e, start, p));
                start = p;
            }
            out.push((e, start, b));
        }
        out
    }

    /// Composite spatial rule with element indices for each node.
    pub fn spatial_rule(&self, per_cell: usize) -> SpatialRule {
        let reference = QuadratureRule::gauss_legendre(per_cell);
        let pieces = self.spatial_pieces();
        let mut rule = SpatialRule {
            nodes: Vec::with_capacity(pieces.len() * per_cell),
            weights: Vec::with_capacity(pieces.len() * per_cell),
            element: Vec::with_capacity(pieces.len() * per_cell),
            local: Vec::with_capacity(pieces.len() * per_cell),
        };
        let h = self.mesh_width();
        for (e, a, b) in pieces {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in reference.nodes.iter().zip(&reference.weights) {
                let z = mid + half * x;
                rule.nodes.push(z);
                rule.weights.push(half * w);
                rule.element.push(e);
                rule.local.push((z - e as f64 * h) / h);
            }
        }
        rule
    }

    /// Composite angular rule on `(0, 1)` suited to the basis: the SN cells,
    /// or at least 32 equal cells for PN.
    pub fn angular_rule(&self, per_cell: usize) -> QuadratureRule {
        let cells = match self.scheme {
            Scheme::SN => self.n,
            Scheme::PN => self.n.max(PN_MIN_CELLS),
        };
        QuadratureRule::composite_uniform(0.0, 1.0, cells, per_cell)
    }

    /// Values of the angular basis at `mu`: a `mu.len() x angular_dim` matrix.
    pub fn angular_basis_values(&self, mu: &[f64]) -> DMatrix<f64> {
        let m = self.angular_dim();
        let mut out = DMatrix::zeros(mu.len(), m);
        match self.scheme {
            Scheme::PN => {
                for (i, &x) in mu.iter().enumerate() {
                    let p = legendre_values(2 * (m - 1), x);
                    for n in 0..m {
                        out[(i, n)] = fmath::sqrt((4 * n + 1) as f64) * p[2 * n];
                    }
                }
            }
            Scheme::SN => {
                let h = 1.0 / self.n as f64;
                let height = 1.0 / fmath::sqrt(h);
                for (i, &x) in mu.iter().enumerate() {
                    let cell = ((x / h) as usize).min(self.n - 1);
                    out[(i, cell)] = height;
                }
            }
        }
        out
    }
}

/// Composite Gauss rule on `[0, Z]` that remembers which element each node
/// lies in and its local coordinate `t in [0, 1]` within that element.
#[derive(Debug, Clone)]
pub struct SpatialRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub element: Vec<usize>,
    pub local: Vec<f64>,
}

impl SpatialRule {
    /// Evaluates `sum_j c[j, :] psi_j(z)` at every node (rows of the result).
    pub fn interpolate(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nodes.len(), coeffs.ncols());
        for (i, (&e, &t)) in self.element.iter().zip(&self.local).enumerate() {
            for c in 0..coeffs.ncols() {
                out[(i, c)] = (1.0 - t) * coeffs[(e, c)] + t * coeffs[(e + 1, c)];
            }
        }
        out
    }

    /// Evaluates `sum_j c[j, :] psi_j'(z)` at every node.
    pub fn interpolate_derivative(&self, coeffs: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nodes.len(), coeffs.ncols());
        for (i, &e) in self.element.iter().enumerate() {
            for c in 0..coeffs.ncols() {
                out[(i, c)] = (coeffs[(e + 1, c)] - coeffs[(e, c)]) / h;
            }
        }
        out
    }

    /// Load vector `(integral of f psi_j)_j` for nodal values `f` at the nodes.
    pub fn project(&self, values: &[f64], n_nodes: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n_nodes);
        for (i, (&e, &t)) in self.element.iter().zip(&self.local).enumerate() {
            let wf = self.weights[i] * values[i];
            out[e] += wf * (1.0 - t);
            out[e + 1] += wf * t;
        }
        out
    }
}

/// Tridiagonal spatial Galerkin matrices and the Cholesky factor of the
/// `H^1` Gram matrix.
#[derive(Debug, Clone)]
pub struct SpatialMatrices {
    pub d_inv_sigma_t: SymTridiagonal,
    pub m_z_sigma_t: SymTridiagonal,
    pub m_z_sigma_s: SymTridiagonal,
    pub m_z: SymTridiagonal,
    pub d: SymTridiagonal,
    pub b: SymTridiagonal,
    pub t_z: LowerBidiagonal,
}

/// Angular Galerkin matrices; all are symmetric.
#[derive(Debug, Clone)]
pub struct AngularMatrices {
    pub m_mu_mu2: LinearMap,
    pub m_mu_mu: LinearMap,
    pub m_mu: LinearMap,
    pub s_scatter: LinearMap,
}

/// Coercivity and continuity constants of the even-parity form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityConstants {
    pub gamma1: f64,
    pub gamma2: f64,
    pub c_tr: f64,
    pub c0: f64,
    pub sigma_t_inf: f64,
    pub sigma_t_sup: f64,
}

/// A symmetric positive definite block with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct SymmetricBlock {
    /// `None` when the block is diagonal (eigenvectors are the identity).
    pub eigenvectors: Option<Arc<DMatrix<f64>>>,
    pub eigenvalues: DVector<f64>,
    pub matrix: LinearMap,
}

impl SymmetricBlock {
    pub fn from_diagonal(d: DVector<f64>) -> Result<Self> {
        Self::check_positive(&d)?;
        Ok(Self {
            eigenvectors: None,
            eigenvalues: d.clone(),
            matrix: LinearMap::Diagonal(d),
        })
    }

    pub fn from_dense(m: DMatrix<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("symmetric block"));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        Self::check_positive(&eig.eigenvalues)?;
        Ok(Self {
            eigenvectors: Some(Arc::new(eig.eigenvectors)),
            eigenvalues: eig.eigenvalues,
            matrix: LinearMap::dense(sym),
        })
    }

    fn check_positive(values: &DVector<f64>) -> Result<()> {
        let min = values.min();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {min:e}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.max()
    }

    /// `f(block)` by spectral calculus. Diagonal blocks stay diagonal; small
    /// blocks become dense; larger ones keep the eigenvector form.
    pub fn function(&self, f: impl Fn(f64) -> f64) -> LinearMap {
        let values = self.eigenvalues.map(f);
        match &self.eigenvectors {
            None => LinearMap::Diagonal(values),
            Some(q) if self.dim() <= DENSE_BLOCK_LIMIT => {
                let mut scaled = q.as_ref().clone();
                for (k, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= values[k];
                }
                LinearMap::dense(scaled * q.transpose())
            }
            Some(q) => LinearMap::Spectral {
                q: q.clone(),
                values,
            },
        }
    }
}

/// Everything needed to set up and solve the transformed system.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub spec: DiscretizationSpec,
    pub spatial: SpatialMatrices,
    pub angular: AngularMatrices,
    /// Transformed system operator with exactly four terms.
    pub e_hat: KronOperator,
    pub j_hat_mu: SymmetricBlock,
    pub j_hat_z: SymmetricBlock,
    pub lambda: f64,
    pub big_lambda: f64,
    pub constants: CoercivityConstants,
}

impl AssembledSystem {
    pub fn assemble(spec: &DiscretizationSpec) -> Result<Self> {
        spec.validate()?;
        let constants = coercivity_constants(spec)?;
        let spatial = assemble_spatial(spec)?;
        let angular = assemble_angular(spec)?;
        let (e_hat, j_hat_mu, j_hat_z) = transform_system(&spatial, &angular)?;
        let (lambda, big_lambda) = spectral_bounds(&j_hat_mu, &j_hat_z)?;
        Ok(Self {
            spec: spec.clone(),
            spatial,
            angular,
            e_hat,
            j_hat_mu,
            j_hat_z,
            lambda,
            big_lambda,
            constants,
        })
    }

    /// The transformed Riesz operator `J_mu ⊗ I + I ⊗ J_z`.
    pub fn j_hat(&self) -> Result<KronOperator> {
        KronOperator::new(vec![
            KronTerm::new(
                1.0,
                self.j_hat_mu.matrix.clone(),
                LinearMap::Identity(self.spec.spatial_dim()),
            ),
            KronTerm::new(
                1.0,
                LinearMap::Identity(self.spec.angular_dim()),
                self.j_hat_z.matrix.clone(),
            ),
        ])
    }
}

/// Local 2x2 element contributions integrated on `[a, b]` inside element `e`.
struct ElementIntegrals {
    stiff_inv_st: f64,
    mass_st: [f64; 3],
    mass_ss: [f64; 3],
}

fn element_integrals(
    spec: &DiscretizationSpec,
    rule: &QuadratureRule,
    e: usize,
    a: f64,
    b: f64,
) -> Result<ElementIntegrals> {
    let h = spec.mesh_width();
    let z0 = e as f64 * h;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut out = ElementIntegrals {
        stiff_inv_st: 0.0,
        mass_st: [0.0; 3],
        mass_ss: [0.0; 3],
    };
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let z = mid + half * x;
        let wt = half * w;
        let t = (z - z0) / h;
        let (p0, p1) = (1.0 - t, t);
        let st = spec.sigma_t.eval(z);
        let ss = spec.sigma_s.eval(z);
        if !(st > 0.0) || !st.is_finite() || !ss.is_finite() {
            return Err(Error::Coefficient(format!(
                "sigma_t = {st}, sigma_s = {ss} at z = {z}"
            )));
        }
        out.stiff_inv_st += wt / st;
        out.mass_st[0] += wt * st * p0 * p0;
        out.mass_st[1] += wt * st * p0 * p1;
        out.mass_st[2] += wt * st * p1 * p1;
        out.mass_ss[0] += wt * ss * p0 * p0;
        out.mass_ss[1] += wt * ss * p0 * p1;
        out.mass_ss[2] += wt * ss * p1 * p1;
    }
    out.stiff_inv_st /= h * h;
    Ok(out)
}

fn add_local(m: &mut SymTridiagonal, e: usize, local: [f64; 3]) {
    m.diag[e] += local[0];
    m.off[e] += local[1];
    m.diag[e + 1] += local[2];
}

/// Tridiagonal spatial matrices on the hat-function basis and `T_z`.
pub fn assemble_spatial(spec: &DiscretizationSpec) -> Result<SpatialMatrices> {
    spec.validate()?;
    let (st_inf, st_sup) = spec.sigma_t.ess_range(spec.z_max);
    if !(st_inf > SIGMA_T_FLOOR * st_sup.max(1.0)) {
        return Err(Error::Coefficient(format!(
            "sigma_t must be bounded away from zero, essential infimum is {st_inf}"
        )));
    }
    let n = spec.spatial_dim();
    let h = spec.mesh_width();
    let rule = QuadratureRule::gauss_legendre(POINTS_PER_CELL);
    let mut d_inv_sigma_t = SymTridiagonal::zeros(n);
    let mut m_z_sigma_t = SymTridiagonal::zeros(n);
    let mut m_z_sigma_s = SymTridiagonal::zeros(n);
    let mut m_z = SymTridiagonal::zeros(n);
    let mut d = SymTridiagonal::zeros(n);
    for e in 0..spec.j {
        add_local(&mut m_z, e, [h / 3.0, h / 6.0, h / 3.0]);
        add_local(&mut d, e, [1.0 / h, -1.0 / h, 1.0 / h]);
    }
    for (e, a, b) in spec.spatial_pieces() {
        let loc = element_integrals(spec, &rule, e, a, b)?;
        let k = loc.stiff_inv_st;
        add_local(&mut d_inv_sigma_t, e, [k, -k, k]);
        add_local(&mut m_z_sigma_t, e, loc.mass_st);
        add_local(&mut m_z_sigma_s, e, loc.mass_ss);
    }
    let mut b = SymTridiagonal::zeros(n);
    b.diag[0] += 1.0;
    b.diag[n - 1] += 1.0;
    let t_z = d.add(&m_z).cholesky()?;
    Ok(SpatialMatrices {
        d_inv_sigma_t,
        m_z_sigma_t,
        m_z_sigma_s,
        m_z,
        d,
        b,
        t_z,
    })
}

/// Angular matrices for the orthonormal PN or SN basis.
pub fn assemble_angular(spec: &DiscretizationSpec) -> Result<AngularMatrices> {
    spec.validate()?;
    let m = spec.angular_dim();
    match spec.scheme {
        Scheme::SN => {
            let h = 1.0 / spec.n as f64;
            let mu2 = DVector::from_fn(m, |i, _| {
                let a = i as f64 * h;
                (3.0 * a * a + 3.0 * a * h + h * h) / 3.0
            });
            let mu1 = DVector::from_fn(m, |i, _| i as f64 * h + 0.5 * h);
            let ones = DVector::from_element(m, fmath::sqrt(h));
            Ok(AngularMatrices {
                m_mu_mu2: LinearMap::Diagonal(mu2),
                m_mu_mu: LinearMap::Diagonal(mu1),
                m_mu: LinearMap::Identity(m),
                s_scatter: LinearMap::Outer {
                    u: ones.clone(),
                    v: ones,
                },
            })
        }
        Scheme::PN => {
            let rule = QuadratureRule::gauss_on(spec.n + 5, 0.0, 1.0);
            let values = spec.angular_basis_values(&rule.nodes);
            let mut mu2 = DMatrix::zeros(m, m);
            let mut mu1 = DMatrix::zeros(m, m);
            for (q, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
                let row = values.row(q);
                let outer = row.transpose() * row;
                mu2 += &outer * (w * x * x);
                mu1 += &outer * (w * x);
            }
            let mut e0 = DVector::zeros(m);
            e0[0] = 1.0;
            Ok(AngularMatrices {
                m_mu_mu2: LinearMap::dense(mu2),
                m_mu_mu: LinearMap::dense(mu1),
                m_mu: LinearMap::Identity(m),
                s_scatter: LinearMap::Outer {
                    u: e0.clone(),
                    v: e0,
                },
            })
        }
    }
}

fn conjugate(t_z: &Arc<LowerBidiagonal>, a: &SymTridiagonal) -> LinearMap {
    LinearMap::Conjugated {
        factor: t_z.clone(),
        inner: Arc::new(LinearMap::Tridiagonal(Arc::new(a.clone()))),
    }
}

/// Transformed system operator and the two blocks of the transformed Riesz
/// operator.
pub fn transform_system(
    spatial: &SpatialMatrices,
    angular: &AngularMatrices,
) -> Result<(KronOperator, SymmetricBlock, SymmetricBlock)> {
    if spatial.t_z.diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::NotPositiveDefinite("singular T_z".into()));
    }
    let t = Arc::new(spatial.t_z.clone());
    let e_hat = KronOperator::new(vec![
        KronTerm::new(
            1.0,
            angular.m_mu_mu2.clone(),
            conjugate(&t, &spatial.d_inv_sigma_t),
        ),
        KronTerm::new(
            1.0,
            angular.m_mu.clone(),
            conjugate(&t, &spatial.m_z_sigma_t),
        ),
        KronTerm::new(
            -1.0,
            angular.s_scatter.clone(),
            conjugate(&t, &spatial.m_z_sigma_s),
        ),
        KronTerm::new(1.0, angular.m_mu_mu.clone(), conjugate(&t, &spatial.b)),
    ])?;
    let j_hat_mu = match &angular.m_mu_mu2 {
        LinearMap::Diagonal(d) => SymmetricBlock::from_diagonal(d.clone())?,
        other => SymmetricBlock::from_dense(other.to_dense())?,
    };
    let j_hat_z = SymmetricBlock::from_dense(conjugate(&t, &spatial.m_z).to_dense())?;
    Ok((e_hat, j_hat_mu, j_hat_z))
}

/// `(lambda, Lambda)`: sums of the extreme eigenvalues of the two blocks.
pub fn spectral_bounds(j_hat_mu: &SymmetricBlock, j_hat_z: &SymmetricBlock) -> Result<(f64, f64)> {
    let lambda = j_hat_mu.min_eigenvalue() + j_hat_z.min_eigenvalue();
    let big = j_hat_mu.max_eigenvalue() + j_hat_z.max_eigenvalue();
    if !(lambda > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("lambda = {lambda:e}")));
    }
    Ok((lambda, big))
}

/// Trace constant `2 / sqrt(1 - exp(-2Z))`.
pub fn trace_constant(z_max: f64) -> f64 {
    2.0 / fmath::sqrt(1.0 - fmath::exp(-2.0 * z_max))
}

/// `gamma1 = min(1/|sigma_t|_inf, c0/2)`,
/// `gamma2 = max(|1/sigma_t|_inf, |sigma_t|_inf, C_tr^2)`, `c0 = ess inf (sigma_t - sigma_s)`.
pub fn coercivity_constants(spec: &DiscretizationSpec) -> Result<CoercivityConstants> {
    let z = spec.z_max;
    let (st_inf, st_sup) = spec.sigma_t.ess_range(z);
    let (ss_inf, _) = spec.sigma_s.ess_range(z);
    if !(st_inf > 0.0) || ss_inf < 0.0 {
        return Err(Error::Coefficient(format!(
            "cross sections must satisfy sigma_t > 0 and sigma_s >= 0 (got inf sigma_t = {st_inf}, inf sigma_s = {ss_inf})"
        )));
    }
    let (c0, _) = CoefficientFunction::ess_range_of(&spec.sigma_t, &spec.sigma_s, z, |t, s| t - s);
    if !(c0 > 0.0) {
        return Err(Error::Coefficient(format!(
            "absorption gap c0 = {c0} is not positive"
        )));
    }
    let c_tr = trace_constant(z);
    Ok(CoercivityConstants {
        gamma1: (1.0 / st_sup).min(0.5 * c0),
        gamma2: (1.0 / st_inf).max(st_sup).max(c_tr * c_tr),
        c_tr,
        c0,
        sigma_t_inf: st_inf,
        sigma_t_sup: st_sup,
    })
}

/// Right-hand side in transformed coordinates and its quadrature check.
#[derive(Debug, Clone)]
pub struct LoadVector {
    /// `(J+1) x N_ang` matrix `T_z^{-1} b`.
    pub f_hat: DMatrix<f64>,
    /// Relative change when the quadrature order is raised.
    pub drift: f64,
    /// `true` when the drift exceeds [`LOAD_DRIFT_LIMIT`].
    pub flagged: bool,
}

fn untransformed_load(
    case: &ManufacturedCase,
    spec: &DiscretizationSpec,
    per_cell: usize,
) -> DMatrix<f64> {
    let zr = spec.spatial_rule(per_cell);
    let mr = spec.angular_rule(per_cell);
    let h_vals = spec.angular_basis_values(&mr.nodes);
    let n_sp = spec.spatial_dim();
    let n_ang = spec.angular_dim();
    let mut b = DMatrix::zeros(n_sp, n_ang);
    for term in &case.source.terms {
        let zv: Vec<f64> = zr.nodes.iter().map(|&z| (term.z)(z)).collect();
        let spatial = zr.project(&zv, n_sp);
        let mut angular = DVector::zeros(n_ang);
        for (q, (&mu, &w)) in mr.nodes.iter().zip(&mr.weights).enumerate() {
            let f = w * (term.mu)(mu);
            angular += h_vals.row(q).transpose() * f;
        }
        b += spatial * angular.transpose();
    }
    let mut left = DVector::zeros(n_ang);
    let mut right = DVector::zeros(n_ang);
    for (q, (&mu, &w)) in mr.nodes.iter().zip(&mr.weights).enumerate() {
        left += h_vals.row(q).transpose() * (w * mu * (case.inflow_left)(mu));
        right += h_vals.row(q).transpose() * (w * mu * (case.inflow_right)(mu));
    }
    let mut row0 = b.row_mut(0);
    row0 += left.transpose();
    let mut last = b.row_mut(n_sp - 1);
    last += right.transpose();
    b
}

/// Galerkin load `b` with the spatial index mapped by `T_z^{-1}`.
pub fn assemble_load(
    case: &ManufacturedCase,
    spec: &DiscretizationSpec,
    spatial: &SpatialMatrices,
) -> Result<LoadVector> {
    spec.validate()?;
    let b = untransformed_load(case, spec, POINTS_PER_CELL);
    if !b.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("load vector"));
    }
    let check = untransformed_load(case, spec, CHECK_POINTS_PER_CELL);
    let scale = check.norm();
    let drift = if scale > 0.0 {
        (&b - &check).norm() / scale
    } else {
        0.0
    };
    Ok(LoadVector {
        f_hat: spatial.t_z.solve(&b),
        drift,
        flagged: drift > LOAD_DRIFT_LIMIT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn tc1_like(scheme: Scheme, j: usize, n: usize) -> DiscretizationSpec {
        DiscretizationSpec::new(
            scheme,
            j,
            n,
            1.0,
            CoefficientFunction::analytic(|z| 4.0 + 0.5 * fmath::sin(PI * z)),
            CoefficientFunction::analytic(|z| 1.0 + 0.5 * fmath::sin(PI * z)),
        )
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(DiscretizationSpec::new(
            Scheme::PN,
            4,
            4,
            1.0,
            CoefficientFunction::constant(1.0),
            CoefficientFunction::constant(0.0)
        )
        .is_err());
        assert!(DiscretizationSpec::new(
            Scheme::SN,
            0,
            4,
            1.0,
            CoefficientFunction::constant(1.0),
            CoefficientFunction::constant(0.0)
        )
        .is_err());
    }

    #[test]
    fn hat_matrices_for_two_elements() {
        let spec = tc1_like(Scheme::SN, 2, 2);
        let s = assemble_spatial(&spec).unwrap();
        // Element integrals of hat products: h/3 on the diagonal, h/6 off it.
        let h = 0.5;
        assert!((s.m_z.diag[0] - h / 3.0).abs() < 1e-15);
        assert!((s.m_z.diag[1] - 2.0 * h / 3.0).abs() < 1e-15);
        assert!((s.m_z.off[0] - h / 6.0).abs() < 1e-15);
        assert_eq!(s.d.diag, vec![2.0, 4.0, 2.0]);
        assert_eq!(s.d.off, vec![-2.0, -2.0]);
        assert_eq!(s.b.diag, vec![1.0, 0.0, 1.0]);
        assert_eq!(s.b.off, vec![0.0, 0.0]);
        let t = s.t_z.to_dense();
        let g = s.d.add(&s.m_z).to_dense();
        assert!((&t * t.transpose() - &g).norm() <= 1e-12 * g.norm());
    }

    #[test]
    fn sn_angular_examples() {
        let spec = tc1_like(Scheme::SN, 2, 2);
        let a = assemble_angular(&spec).unwrap();
        let mu2 = a.m_mu_mu2.to_dense();
        assert!((mu2[(0, 0)] - 1.0 / 12.0).abs() < 1e-15);
        assert!((mu2[(1, 1)] - 7.0 / 12.0).abs() < 1e-15);
        let s = a.s_scatter.to_dense();
        assert!(s.iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn pn_basis_is_orthonormal() {
        for n in [1usize, 3, 7, 27] {
            let spec = tc1_like(Scheme::PN, 2, n);
            let m = spec.angular_dim();
            let rule = QuadratureRule::gauss_on(2 * n + 2, 0.0, 1.0);
            let v = spec.angular_basis_values(&rule.nodes);
            let mut gram = DMatrix::zeros(m, m);
            for (q, &w) in rule.weights.iter().enumerate() {
                gram += v.row(q).transpose() * v.row(q) * w;
            }
            assert!((gram - DMatrix::identity(m, m)).norm() < 1e-12);
            let a = assemble_angular(&spec).unwrap();
            let mu2 = a.m_mu_mu2.to_dense();
            for i in 0..m {
                for j in 0..m {
                    if i.abs_diff(j) > 1 {
                        assert!(mu2[(i, j)].abs() < 1e-13);
                    }
                }
            }
            let s = a.s_scatter.to_dense();
            assert_eq!(s[(0, 0)], 1.0);
            assert_eq!(s.iter().filter(|&&x| x != 0.0).count(), 1);
        }
    }

    #[test]
    fn scalar_transformed_system() {
        // J = N = 1 with SN: every block is 2x2 in space, 1x1 in angle.
        let spec = DiscretizationSpec::new(
            Scheme::SN,
            1,
            1,
            1.0,
            CoefficientFunction::constant(2.0),
            CoefficientFunction::constant(0.5),
        )
        .unwrap();
        let sys = AssembledSystem::assemble(&spec).unwrap();
        let s = &sys.spatial;
        let l = s.t_z.to_dense();
        let li = l.clone().try_inverse().unwrap();
        let conj = |a: &SymTridiagonal| &li * a.to_dense() * li.transpose();
        let by_hand = conj(&s.d_inv_sigma_t) * (1.0 / 3.0) + conj(&s.m_z_sigma_t)
            - conj(&s.m_z_sigma_s) * 1.0
            + conj(&s.b) * 0.5;
        assert!((sys.e_hat.materialize().unwrap() - by_hand).norm() < 1e-13);
        assert_eq!(sys.e_hat.len(), 4);
    }

    #[test]
    fn load_of_zero_data_is_zero() {
        let spec = tc1_like(Scheme::SN, 4, 2);
        let s = assemble_spatial(&spec).unwrap();
        let case = ManufacturedCase::zero_data(&spec);
        let load = assemble_load(&case, &spec, &s).unwrap();
        assert_eq!(load.f_hat.norm(), 0.0);
        assert!(!load.flagged);
    }

    #[test]
    fn unit_source_sn_load_matches_closed_form() {
        let spec = tc1_like(Scheme::SN, 4, 4);
        let s = assemble_spatial(&spec).unwrap();
        let case = ManufacturedCase::constant_source(&spec, 1.0);
        let b = untransformed_load(&case, &spec, POINTS_PER_CELL);
        let h = 0.25;
        let hm: f64 = 0.25;
        for n in 0..4 {
            assert!((b[(0, n)] - 0.5 * h * hm.sqrt()).abs() < 1e-15);
            assert!((b[(2, n)] - h * hm.sqrt()).abs() < 1e-15);
        }
        let load = assemble_load(&case, &spec, &s).unwrap();
        assert!((s.t_z.to_dense() * &load.f_hat - b).norm() < 1e-14);
    }

    #[test]
    fn constants_for_tc1_like_coefficients() {
        let spec = DiscretizationSpec::new(
            Scheme::SN,
            4,
            2,
            1.0,
            CoefficientFunction::constant(4.0),
            CoefficientFunction::analytic(|z| 1.0 + 0.5 * fmath::sin(PI * z)),
        )
        .unwrap();
        let c = coercivity_constants(&spec).unwrap();
        assert!((c.c0 - 2.5).abs() < 1e-9);
        assert!((c.gamma1 - 0.25).abs() < 1e-12);
        assert!((trace_constant(60.0) - 2.0).abs() < 1e-15);
        let bad = DiscretizationSpec::new(
            Scheme::SN,
            4,
            2,
            1.0,
            CoefficientFunction::constant(1.0),
            CoefficientFunction::constant(1.0),
        )
        .unwrap();
        assert!(coercivity_constants(&bad).is_err());
    }

    #[test]
    fn zero_sigma_t_is_rejected() {
        let spec = DiscretizationSpec::new(
            Scheme::SN,
            4,
            2,
            1.0,
            CoefficientFunction::analytic(|z| z),
            CoefficientFunction::constant(0.0),
        )
        .unwrap();
        assert!(matches!(
            assemble_spatial(&spec),
            Err(Error::Coefficient(_))
        ));
    }

    #[test]
    fn sn_mu_block_bounds() {
        let spec = tc1_like(Scheme::SN, 4, 2);
        let sys = AssembledSystem::assemble(&spec).unwrap();
        assert!((sys.j_hat_mu.min_eigenvalue() - 1.0 / 12.0).abs() < 1e-15);
        assert!((sys.j_hat_mu.max_eigenvalue() - 7.0 / 12.0).abs() < 1e-15);
        let one = SymmetricBlock::from_diagonal(DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(spectral_bounds(&one, &one).unwrap(), (2.0, 2.0));
        assert!(SymmetricBlock::from_diagonal(DVector::from_element(1, -1.0)).is_err());
    }
}
