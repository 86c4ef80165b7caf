//! Cross-section coefficients `sigma(z)` on the slab `[0, Z]`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

type Closure = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Sample count per smooth segment when estimating essential extrema.
const EXTREMA_SAMPLES: usize = 4000;

#[derive(Clone)]
pub enum CoefficientFunction {
    Constant(f64),
    /// Smooth function given by a closure.
    Analytic(Closure),
    /// Value `values[i]` on `[breakpoints[i-1], breakpoints[i])`, with the
    /// outer pieces extending to the slab boundary. `values.len()` is one more
    /// than `breakpoints.len()`.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

impl fmt::Debug for CoefficientFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Analytic(_) => f.write_str("Analytic(..)"),
            Self::PiecewiseConstant {
                breakpoints,
                values,
            } => f
                .debug_struct("PiecewiseConstant")
                .field("breakpoints", breakpoints)
                .field("values", values)
                .finish(),
        }
    }
}

impl CoefficientFunction {
    pub fn constant(v: f64) -> Self {
        Self::Constant(v)
    }

    pub fn analytic(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Analytic(Arc::new(f))
    }

    pub fn piecewise(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::Coefficient(format!(
                "{} pieces need {} breakpoints, got {}",
                values.len(),
                values.len().saturating_sub(1),
                breakpoints.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Coefficient(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if breakpoints.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("piecewise coefficient"));
        }
        Ok(Self::PiecewiseConstant {
            breakpoints,
            values,
        })
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Analytic(f) => f(z),
            Self::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                let piece = breakpoints.partition_point(|&b| b <= z);
                values[piece]
            }
        }
    }

    /// Interior discontinuities inside `(0, z_max)`.
    pub fn breakpoints_in(&self, z_max: f64) -> Vec<f64> {
        match self {
            Self::PiecewiseConstant { breakpoints, .. } => breakpoints
                .iter()
                .copied()
                .filter(|&b| b > 0.0 && b < z_max)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Essential infimum and supremum of `combine(a(z), b(z))` over `[0, z_max]`.
    ///
    /// Piecewise parts are evaluated segment by segment; smooth parts are
    /// sampled densely within each segment.
    pub fn ess_range_of(
        a: &Self,
        b: &Self,
        z_max: f64,
        combine: impl Fn(f64, f64) -> f64,
    ) -> (f64, f64) {
        let mut breaks = a.breakpoints_in(z_max);
        breaks.extend(b.breakpoints_in(z_max));
        breaks.push(0.0);
        breaks.push(z_max);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let smooth = a.is_analytic() || b.is_analytic();
        let samples = if smooth { EXTREMA_SAMPLES } else { 1 };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for w in breaks.windows(2) {
            let (s, e) = (w[0], w[1]);
            let inset = 1e-12 * (e - s);
            let mut visit = |z: f64| {
                let v = combine(a.eval(z), b.eval(z));
                lo = lo.min(v);
                hi = hi.max(v);
            };
            visit(s + inset);
            visit(e - inset);
            for k in 1..samples {
                visit(s + (e - s) * k as f64 / samples as f64);
            }
        }
        (lo, hi)
    }

    /// Essential infimum and supremum over `[0, z_max]`.
    pub fn ess_range(&self, z_max: f64) -> (f64, f64) {
        Self::ess_range_of(self, &Self::Constant(0.0), z_max, |x, _| x)
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, Self::Analytic(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmath;
    use alloc::vec;

    #[test]
    fn piecewise_lookup_uses_half_open_pieces() {
        let c = CoefficientFunction::piecewise(vec![0.75, 0.875], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.eval(0.0), 1.0);
        assert_eq!(c.eval(0.75), 2.0);
        assert_eq!(c.eval(0.9), 3.0);
        assert_eq!(c.breakpoints_in(1.0), vec![0.75, 0.875]);
        assert_eq!(c.ess_range(1.0), (1.0, 3.0));
    }

    #[test]
    fn invalid_piecewise_is_rejected() {
        assert!(CoefficientFunction::piecewise(vec![0.5, 0.5], vec![1.0, 2.0, 3.0]).is_err());
        assert!(CoefficientFunction::piecewise(vec![0.5], vec![1.0]).is_err());
    }

    #[test]
    fn analytic_extrema_of_difference() {
        let st = CoefficientFunction::constant(4.0);
        let ss =
            CoefficientFunction::analytic(|z| 1.0 + 0.5 * fmath::sin(core::f64::consts::PI * z));
        let (c0, _) = CoefficientFunction::ess_range_of(&st, &ss, 1.0, |t, s| t - s);
        assert!((c0 - 2.5).abs() < 1e-9);
    }
}
