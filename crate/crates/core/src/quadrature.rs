//! Gauss–Legendre rules and Legendre polynomial evaluation.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::fmath;

/// Nodes and weights of a quadrature rule on some interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `n`-point Gauss–Legendre rule on `[-1, 1]`, exact for degree `2n - 1`.
    ///
    /// Nodes are found by Newton's method from the Chebyshev-like initial
    /// guesses and returned in increasing order.
    pub fn gauss_legendre(n: usize) -> Self {
        assert!(n >= 1, "a Gauss rule needs at least one point");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let half = (n + 1) / 2;
        for i in 0..half {
            let mut x = fmath::cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// The `n`-point Gauss rule mapped to `[a, b]`.
    pub fn gauss_on(n: usize, a: f64, b: f64) -> Self {
        let mut rule = Self::gauss_legendre(n);
        rule.map_from_reference(a, b);
        rule
    }

    /// Composite rule: `per_cell` Gauss points on each interval
    /// `[breaks[i], breaks[i+1]]`. Zero-length intervals are skipped.
    pub fn composite(breaks: &[f64], per_cell: usize) -> Self {
        let reference = Self::gauss_legendre(per_cell);
        let mut nodes = Vec::with_capacity(breaks.len().saturating_sub(1) * per_cell);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, wt) in reference.nodes.iter().zip(&reference.weights) {
                nodes.push(mid + half * x);
                weights.push(half * wt);
            }
        }
        Self { nodes, weights }
    }

    /// Composite rule on `n_cells` equal cells of `[a, b]`.
    pub fn composite_uniform(a: f64, b: f64, n_cells: usize, per_cell: usize) -> Self {
        let breaks: Vec<f64> = (0..=n_cells)
            .map(|i| a + (b - a) * i as f64 / n_cells as f64)
            .collect();
        Self::composite(&breaks, per_cell)
    }

    fn map_from_reference(&mut self, a: f64, b: f64) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for x in &mut self.nodes {
            *x = mid + half * *x;
        }
        for w in &mut self.weights {
            *w *= half;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // Derivative from the standard identity; avoid the endpoint singularity.
    let d = if (1.0 - x * x).abs() < 1e-300 {
        let s = if x > 0.0 || n % 2 == 0 { 1.0 } else { -1.0 };
        s * (n * (n + 1)) as f64 / 2.0
    } else {
        n as f64 * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, d)
}

/// Values `P_0(x), ..., P_n(x)`.
pub fn legendre_values(n: usize, x: f64) -> Vec<f64> {
    let mut out = vec![1.0; n + 1];
    if n >= 1 {
        out[1] = x;
    }
    for k in 2..=n {
        let kf = k as f64;
        out[k] = ((2.0 * kf - 1.0) * x * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
    }
    out
}

/// Values and derivatives of `P_0..P_n` at `x`.
pub fn legendre_values_and_derivatives(n: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let p = legendre_values(n, x);
    let mut d = vec![0.0; n + 1];
    // P'_{k} = P'_{k-2} + (2k-1) P_{k-1}
    for k in 1..=n {
        let prev = if k >= 2 { d[k - 2] } else { 0.0 };
        d[k] = prev + (2 * k - 1) as f64 * p[k - 1];
    }
    (p, d)
}
