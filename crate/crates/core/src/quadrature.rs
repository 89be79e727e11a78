//! Quadrature rules shared by the spectral, subordination and asymptotics
//! modules: double-exponential (tanh-sinh) for endpoint singularities,
//! composite Gauss-Legendre for smooth oscillatory integrands and
//! Gauss-Hermite for Gaussian expectations.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Result of an adaptive quadrature together with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

const TANH_SINH_TMAX: f64 = 3.5;
const TANH_SINH_MAX_LEVEL: usize = 14;

/// Tanh-sinh quadrature of `f` over the finite interval `[a, b]`.
///
/// Algebraic endpoint singularities are integrated at full rate. Nodes that
/// round onto an endpoint are skipped, so `f` is never evaluated at `a` or `b`.
pub fn tanh_sinh<F>(f: F, a: f64, b: f64, tol: f64) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    if b < a {
        let e = tanh_sinh(f, b, a, tol)?;
        return Ok(Estimate {
            value: -e.value,
            error: e.error,
        });
    }
    let half = 0.5 * (b - a);
    // Node at parameter t, contributing weight * f(x); distances measured
    // from the nearer endpoint to avoid cancellation.
    let node = |t: f64| -> f64 {
        let u = FRAC_PI_2 * t.sinh();
        let cu = u.cosh();
        let w = half * FRAC_PI_2 * t.cosh() / (cu * cu);
        if w == 0.0 || !w.is_finite() {
            return 0.0;
        }
        let dist = half * 2.0 / ((2.0 * u.abs()).exp() + 1.0);
        let x = if u < 0.0 { a + dist } else { b - dist };
        if x <= a || x >= b {
            return 0.0;
        }
        w * f(x)
    };

    let mut h = 1.0;
    let mut sum = node(0.0);
    let mut k = 1;
    while (k as f64) * h <= TANH_SINH_TMAX {
        let t = k as f64 * h;
        sum += node(t) + node(-t);
        k += 1;
    }
    let mut estimate = h * sum;
    let mut last_error = f64::INFINITY;
    for _level in 1..=TANH_SINH_MAX_LEVEL {
        h *= 0.5;
        let mut k = 1;
        let mut added = 0.0;
        while (k as f64) * h <= TANH_SINH_TMAX {
            let t = k as f64 * h;
            added += node(t) + node(-t);
            k += 2;
        }
        sum += added;
        let next = h * sum;
        last_error = (next - estimate).abs();
        estimate = next;
        if last_error <= tol * estimate.abs().max(1.0) {
            return Ok(Estimate {
                value: estimate,
                error: last_error,
            });
        }
    }
    if !estimate.is_finite() {
        return Err(Error::Quadrature(format!("non-finite tanh-sinh sum on [{a}, {b}]")));
    }
    Ok(Estimate {
        value: estimate,
        error: last_error,
    })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integral of `f` over `[a, b]` split into `panels` equal panels.
    pub fn composite<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64, panels: usize) -> f64 {
        let panels = panels.max(1);
        let width = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + width * p as f64;
            total += self.panel(&f, lo, lo + width);
        }
        total
    }

    #[inline]
    pub fn panel<F: Fn(f64) -> f64>(&self, f: &F, lo: f64, hi: f64) -> f64 {
        let c = 0.5 * (lo + hi);
        let r = 0.5 * (hi - lo);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + r * x);
        }
        s * r
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Hermite rule for expectations under the standard normal density:
/// `E[f(Z)] ~ sum_i w_i f(x_i)` with `sum_i w_i = 1`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        // Golub-Welsch for starting values, then Newton polish on the
        // orthonormal recurrence so the outer weights keep relative accuracy.
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            jacobi[(k, k - 1)] = b;
            jacobi[(k - 1, k)] = b;
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..20 {
                let (pn, pn1) = orthonormal_hermite_pair(n, *x);
                let deriv = (n as f64).sqrt() * pn1;
                let dx = pn / deriv;
                *x -= dx;
                if dx.abs() <= 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, pn1) = orthonormal_hermite_pair(n, *x);
            weights.push(1.0 / (n as f64 * pn1 * pn1));
        }
        Self { nodes, weights }
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Returns (p_n(x), p_{n-1}(x)) for the orthonormal probabilists' Hermite
/// polynomials p_k = He_k / sqrt(k!).
fn orthonormal_hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let k = k as f64;
        let next = (x * cur - k.sqrt() * prev) / (k + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}
