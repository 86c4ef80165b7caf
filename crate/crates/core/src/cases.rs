//! Benchmark problems: manufactured solutions and a layered physical slab.
//!
//! Data are stored as separable sums `sum_k a_k(z) b_k(mu)` so that loads and
//! error integrals reduce to products of one-dimensional quadratures.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::coeff::CoefficientFunction;
use crate::discretization::DiscretizationSpec;
use crate::fmath;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Number of series terms kept for the infinite-rank solutions.
pub const SERIES_CUTOFF: usize = 200;

fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

/// One product `z(z) * mu(mu)`.
#[derive(Clone)]
pub struct SeparableTerm {
    pub z: ScalarFn,
    pub mu: ScalarFn,
}

#[derive(Clone, Default)]
pub struct SeparableField {
    pub terms: Vec<SeparableTerm>,
}

impl SeparableField {
    pub fn eval(&self, z: f64, mu: f64) -> f64 {
        self.terms.iter().map(|t| (t.z)(z) * (t.mu)(mu)).sum()
    }
}

/// A product `f(z) g(mu)` of an exact solution together with `f'`.
#[derive(Clone)]
pub struct ExactTerm {
    pub f: ScalarFn,
    pub df: ScalarFn,
    pub g: ScalarFn,
}

#[derive(Clone, Default)]
pub struct ExactSolution {
    pub terms: Vec<ExactTerm>,
}

impl ExactSolution {
    pub fn eval(&self, z: f64, mu: f64) -> f64 {
        self.terms.iter().map(|t| (t.f)(z) * (t.g)(mu)).sum()
    }

    pub fn dz(&self, z: f64, mu: f64) -> f64 {
        self.terms.iter().map(|t| (t.df)(z) * (t.g)(mu)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    /// Rank-one solution `mu cosh(mu) exp(-z(1-z))`.
    Tc1,
    /// Sine-cosine series with singular values `k^-3`.
    Tc2Alg,
    /// Sine-cosine series with singular values `exp(-k^2)`.
    Tc2Exp,
    /// Three-layer slab with a forward-peaked inflow on the left.
    Tc3,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [CaseId::Tc1, CaseId::Tc2Alg, CaseId::Tc2Exp, CaseId::Tc3];

    pub fn name(self) -> &'static str {
        match self {
            CaseId::Tc1 => "TC1",
            CaseId::Tc2Alg => "TC2_ALG",
            CaseId::Tc2Exp => "TC2_EXP",
            CaseId::Tc3 => "TC3",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
    }

    /// Residual tolerance used for this case in the reference experiments.
    pub fn default_tolerance(self) -> f64 {
        match self {
            CaseId::Tc3 => 1e-4,
            _ => 1e-7,
        }
    }
}

#[derive(Clone)]
pub struct ManufacturedCase {
    pub id: Option<CaseId>,
    pub z_max: f64,
    pub sigma_t: CoefficientFunction,
    pub sigma_s: CoefficientFunction,
    /// Interior source `q`.
    pub source: SeparableField,
    /// `g(0, mu)`.
    pub inflow_left: ScalarFn,
    /// `g(Z, mu)`.
    pub inflow_right: ScalarFn,
    pub exact: Option<ExactSolution>,
    pub series_cutoff: Option<usize>,
}

impl fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("id", &self.id)
            .field("z_max", &self.z_max)
            .field("source_terms", &self.source.terms.len())
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

/// Spatial factor of an exact term with its first two derivatives.
struct SpatialProfile {
    f: ScalarFn,
    df: ScalarFn,
    d2f: ScalarFn,
}

/// Angular factor with its mean over `(0, 1)`.
struct AngularProfile {
    g: ScalarFn,
    mean: f64,
}

impl ManufacturedCase {
    /// Builds source and boundary data for `u = sum_k f_k(z) g_k(mu)` by
    /// substituting into the second-order equation
    /// `-d/dz(mu^2/sigma_t du/dz) + sigma_t u - sigma_s (mean of u over mu) = q`
    /// and the Robin condition `u + (mu/sigma_t) du/dn = g`.
    fn from_separable_solution(
        id: CaseId,
        z_max: f64,
        sigma_t: ScalarFn,
        dsigma_t: ScalarFn,
        sigma_s: ScalarFn,
        terms: Vec<(SpatialProfile, AngularProfile)>,
    ) -> Self {
        let mut source = SeparableField::default();
        let mut exact = ExactSolution::default();
        for (sp, ang) in terms {
            let (f, df, d2f) = (sp.f.clone(), sp.df.clone(), sp.d2f.clone());
            let (st, dst) = (sigma_t.clone(), dsigma_t.clone());
            let g = ang.g.clone();
            source.terms.push(SeparableTerm {
                z: scalar(move |z| {
                    let s = st(z);
                    -(d2f(z) / s - dst(z) * df(z) / (s * s))
                }),
                mu: scalar(move |mu| mu * mu * g(mu)),
            });
            let (st, f2) = (sigma_t.clone(), f.clone());
            source.terms.push(SeparableTerm {
                z: scalar(move |z| st(z) * f2(z)),
                mu: ang.g.clone(),
            });
            if ang.mean != 0.0 {
                let (ss, f3, mean) = (sigma_s.clone(), f.clone(), ang.mean);
                source.terms.push(SeparableTerm {
                    z: scalar(move |z| -ss(z) * f3(z) * mean),
                    mu: scalar(|_| 1.0),
                });
            }
            exact.terms.push(ExactTerm {
                f: sp.f,
                df: sp.df,
                g: ang.g,
            });
        }
        let left_exact = exact.clone();
        let st0 = sigma_t(0.0);
        let inflow_left =
            scalar(move |mu| left_exact.eval(0.0, mu) - mu / st0 * left_exact.dz(0.0, mu));
        let right_exact = exact.clone();
        let st1 = sigma_t(z_max);
        let inflow_right =
            scalar(move |mu| right_exact.eval(z_max, mu) + mu / st1 * right_exact.dz(z_max, mu));
        let st_coeff = sigma_t.clone();
        let ss_coeff = sigma_s.clone();
        Self {
            id: Some(id),
            z_max,
            sigma_t: CoefficientFunction::Analytic(Arc::new(move |z| st_coeff(z))),
            sigma_s: CoefficientFunction::Analytic(Arc::new(move |z| ss_coeff(z))),
            source,
            inflow_left,
            inflow_right,
            exact: Some(exact),
            series_cutoff: None,
        }
    }

    /// The benchmark identified by `id`.
    pub fn new(id: CaseId) -> Self {
        match id {
            CaseId::Tc1 => tc1(),
            CaseId::Tc2Alg => tc2(id, |k| fmath::powi(k as f64, -3)),
            CaseId::Tc2Exp => tc2(id, |k| fmath::exp(-((k * k) as f64))),
            CaseId::Tc3 => tc3(),
        }
    }

    /// Homogeneous data on the coefficients of `spec`.
    pub fn zero_data(spec: &DiscretizationSpec) -> Self {
        Self {
            id: None,
            z_max: spec.z_max,
            sigma_t: spec.sigma_t.clone(),
            sigma_s: spec.sigma_s.clone(),
            source: SeparableField::default(),
            inflow_left: scalar(|_| 0.0),
            inflow_right: scalar(|_| 0.0),
            exact: None,
            series_cutoff: None,
        }
    }

    /// Constant interior source `c` and zero inflow on the coefficients of `spec`.
    pub fn constant_source(spec: &DiscretizationSpec, c: f64) -> Self {
        let mut case = Self::zero_data(spec);
        case.source.terms.push(SeparableTerm {
            z: scalar(move |_| c),
            mu: scalar(|_| 1.0),
        });
        case
    }

    /// A discretization of this case's slab and coefficients.
    pub fn discretization(
        &self,
        scheme: crate::discretization::Scheme,
        j: usize,
        n: usize,
    ) -> crate::error::Result<DiscretizationSpec> {
        DiscretizationSpec::new(
            scheme,
            j,
            n,
            self.z_max,
            self.sigma_t.clone(),
            self.sigma_s.clone(),
        )
    }
}

fn tc1_sigma_s(z: f64) -> f64 {
    1.0 + 0.5 * fmath::sin(PI * z)
}

fn tc1_sigma_t(z: f64) -> f64 {
    3.0 + tc1_sigma_s(z)
}

fn tc1_dsigma_t(z: f64) -> f64 {
    0.5 * PI * fmath::cos(PI * z)
}

fn tc1() -> ManufacturedCase {
    let p = |z: f64| fmath::exp(z * z - z);
    let profile = SpatialProfile {
        f: scalar(p),
        df: scalar(move |z| (2.0 * z - 1.0) * p(z)),
        d2f: scalar(move |z| (2.0 + (2.0 * z - 1.0) * (2.0 * z - 1.0)) * p(z)),
    };
    // Mean of mu cosh(mu) over (0, 1): [mu sinh(mu) - cosh(mu)] from 0 to 1.
    let mean = fmath::sinh(1.0) - fmath::cosh(1.0) + 1.0;
    let angular = AngularProfile {
        g: scalar(|mu| mu * fmath::cosh(mu)),
        mean,
    };
    ManufacturedCase::from_separable_solution(
        CaseId::Tc1,
        1.0,
        scalar(tc1_sigma_t),
        scalar(tc1_dsigma_t),
        scalar(tc1_sigma_s),
        vec![(profile, angular)],
    )
}

fn tc2(id: CaseId, sigma_k: fn(usize) -> f64) -> ManufacturedCase {
    let mut terms = Vec::new();
    for k in 1..=SERIES_CUTOFF {
        let s = sigma_k(k);
        if s == 0.0 {
            break;
        }
        let w = k as f64 * PI;
        let profile = SpatialProfile {
            f: scalar(move |z| fmath::sin(w * z)),
            df: scalar(move |z| w * fmath::cos(w * z)),
            d2f: scalar(move |z| -w * w * fmath::sin(w * z)),
        };
        // cos(k pi mu) has zero mean over (0, 1) for every k >= 1.
        let angular = AngularProfile {
            g: scalar(move |mu| 2.0 * s * fmath::cos(w * mu)),
            mean: 0.0,
        };
        terms.push((profile, angular));
    }
    let mut case = ManufacturedCase::from_separable_solution(
        id,
        1.0,
        scalar(tc1_sigma_t),
        scalar(tc1_dsigma_t),
        scalar(tc1_sigma_s),
        terms,
    );
    case.series_cutoff = Some(SERIES_CUTOFF);
    case
}

/// Layer interfaces of the three-layer slab.
pub const TC3_BREAKPOINTS: [f64; 2] = [0.75, 0.875];
pub const TC3_SIGMA_S: [f64; 3] = [36.52, 32.27, 5.20];
pub const TC3_SIGMA_A: [f64; 3] = [0.52, 8.31, 0.60];
pub const TC3_ALPHA: f64 = 2.4;
pub const TC3_BETA: f64 = 2500.0;

fn tc3() -> ManufacturedCase {
    let sigma_t: Vec<f64> = TC3_SIGMA_S
        .iter()
        .zip(&TC3_SIGMA_A)
        .map(|(s, a)| s + a)
        .collect();
    ManufacturedCase {
        id: Some(CaseId::Tc3),
        z_max: 1.0,
        sigma_t: CoefficientFunction::piecewise(TC3_BREAKPOINTS.to_vec(), sigma_t)
            .expect("static layer data"),
        sigma_s: CoefficientFunction::piecewise(TC3_BREAKPOINTS.to_vec(), TC3_SIGMA_S.to_vec())
            .expect("static layer data"),
        source: SeparableField::default(),
        inflow_left: scalar(|mu| TC3_ALPHA * fmath::exp(-(1.0 - mu) * (1.0 - mu) / TC3_BETA)),
        inflow_right: scalar(|_| 0.0),
        exact: None,
        series_cutoff: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadratureRule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Strong-form residual `q - L u` at `(z, mu)` using centred differences
    /// of the flux and a Gauss rule for the angular mean.
    fn strong_residual(case: &ManufacturedCase, z: f64, mu: f64) -> f64 {
        let u = case.exact.as_ref().unwrap();
        let st = |z: f64| case.sigma_t.eval(z);
        let flux = |z: f64| mu * mu / st(z) * u.dz(z, mu);
        let h = 1e-6;
        let dflux = (flux(z + h) - flux(z - h)) / (2.0 * h);
        let rule = QuadratureRule::composite_uniform(0.0, 1.0, 256, 8);
        let mean = rule.integrate(|m| u.eval(z, m));
        let lu = -dflux + st(z) * u.eval(z, mu) - case.sigma_s.eval(z) * mean;
        case.source.eval(z, mu) - lu
    }

    #[test]
    fn tc1_point_values() {
        let c = ManufacturedCase::new(CaseId::Tc1);
        let u = c.exact.as_ref().unwrap();
        assert!((u.eval(0.0, 1.0) - 1.5430806348152437).abs() < 1e-15);
        let rule = QuadratureRule::gauss_on(30, 0.0, 1.0);
        let z = 0.3;
        let mean = rule.integrate(|m| u.eval(z, m));
        let closed = fmath::exp(-z * (1.0 - z)) * (fmath::sinh(1.0) - fmath::cosh(1.0) + 1.0);
        assert!((mean - closed).abs() < 1e-14);
    }

    #[test]
    fn manufactured_data_satisfy_the_strong_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for id in [CaseId::Tc1, CaseId::Tc2Alg, CaseId::Tc2Exp] {
            let case = ManufacturedCase::new(id);
            let u = case.exact.as_ref().unwrap();
            for _ in 0..100 {
                let z = rng.random_range(0.01..0.99);
                let mu = rng.random_range(0.0..1.0);
                let r = strong_residual(&case, z, mu);
                // Relative to the size of the individual source terms, which
                // bounds the cancellation the differencing has to resolve.
                let scale = 1.0
                    + case
                        .source
                        .terms
                        .iter()
                        .map(|t| ((t.z)(z) * (t.mu)(mu)).abs())
                        .sum::<f64>();
                assert!(r.abs() < 1e-8 * scale, "{id:?} residual {r} at ({z}, {mu})");
            }
            for mu in [0.0, 0.3, 1.0] {
                let st0 = case.sigma_t.eval(0.0);
                let g0 = u.eval(0.0, mu) - mu / st0 * u.dz(0.0, mu);
                assert!(((case.inflow_left)(mu) - g0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cosine_modes_have_zero_mean() {
        let rule = QuadratureRule::composite_uniform(0.0, 1.0, 256, 8);
        for k in 1..=SERIES_CUTOFF {
            let m = rule.integrate(|mu| fmath::cos(k as f64 * PI * mu));
            assert!(m.abs() < 1e-13, "k = {k}: {m}");
        }
    }

    #[test]
    fn algebraic_cutoff_arithmetic() {
        // Smallest k with k^-3 <= 1e-14.
        let k = (1..100_000usize)
            .find(|&k| fmath::powi(k as f64, -3) <= 1e-14)
            .unwrap();
        assert_eq!(k, 46416);
        assert_eq!(
            ManufacturedCase::new(CaseId::Tc2Alg).series_cutoff,
            Some(SERIES_CUTOFF)
        );
    }

    #[test]
    fn layered_slab_data() {
        let c = ManufacturedCase::new(CaseId::Tc3);
        assert!(c.exact.is_none());
        assert!(c.source.terms.is_empty());
        assert!(((c.inflow_left)(1.0) - 2.4).abs() < 1e-15);
        assert_eq!((c.inflow_right)(0.5), 0.0);
        assert!((c.sigma_t.eval(0.8) - 40.58).abs() < 1e-12);
        assert_eq!(CaseId::from_name("tc2_alg"), Some(CaseId::Tc2Alg));
    }
}
