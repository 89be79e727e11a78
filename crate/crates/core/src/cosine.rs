//! Cosine transforms of powers of the covariance,
//! `f^(*k)(lambda) = (1/2pi) int_R B(t)^k cos(lambda t) dt`.
//!
//! The integral is split at `t = L`. On `[0, L]` composite Gauss-Legendre
//! panels are sized to the fastest oscillation present. Beyond `L` the
//! covariance is replaced by its convergent expansion
//! `sum_i w_i t^(-gamma_i) cos(omega_i t)` and each term is integrated by the
//! incomplete-gamma asymptotic series (or numerically, for slow oscillation).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::quadrature::{tanh_sinh, Estimate, GaussLegendre};
use crate::spectral::NoiseSpec;

/// One `w t^(-gamma) cos(omega t)` term of the large-`t` expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TailTerm {
    weight: f64,
    gamma: f64,
    omega: f64,
}

const TAIL_DROP: f64 = 1e-18;

/// Large-`t` expansion of `B(t)^k`, valid for `t >= split`.
#[derive(Debug, Clone)]
pub struct TailSeries {
    split: f64,
    terms: Vec<TailTerm>,
}

fn split_point(spec: &NoiseSpec) -> f64 {
    let rho_min = spec.components().iter().map(|c| c.shape).fold(2.0, f64::min);
    // t^-rho must be small for the binomial series to converge quickly
    64f64.max(8f64.powf(1.0 / rho_min))
}

impl TailSeries {
    pub fn new(spec: &NoiseSpec, power: u32) -> Self {
        let split = split_point(spec);
        let mut base = Vec::new();
        for c in spec.components() {
            if c.weight == 0.0 {
                continue;
            }
            // (1 + t^rho)^(-a) = sum_n binom(-a, n) t^(-rho (a + n))
            let a = 0.5 * c.decay;
            let mut coef = 1.0;
            for n in 0..200 {
                let gamma = c.shape * (a + n as f64);
                if n > 0 && (coef * split.powf(-gamma)).abs() < TAIL_DROP {
                    break;
                }
                base.push(TailTerm {
                    weight: c.weight * coef,
                    gamma,
                    omega: c.carrier,
                });
                coef *= -(a + n as f64) / (n as f64 + 1.0);
            }
        }
        let mut terms = vec![TailTerm {
            weight: 1.0,
            gamma: 0.0,
            omega: 0.0,
        }];
        for _ in 0..power {
            terms = multiply(&terms, &base, split);
        }
        Self { split, terms }
    }

    pub fn split(&self) -> f64 {
        self.split
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Evaluates the expansion; used to check it against `B(t)^k` directly.
    pub fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|s| s.weight * t.powf(-s.gamma) * (s.omega * t).cos())
            .sum()
    }

    /// `int_split^inf (expansion)(t) cos(lambda t) dt`.
    fn integrate(&self, lambda: f64) -> Result<f64> {
        let mut total = 0.0;
        for s in &self.terms {
            let lo = power_cos_tail(s.gamma, (s.omega - lambda).abs(), self.split)?;
            let hi = power_cos_tail(s.gamma, s.omega + lambda.abs(), self.split)?;
            total += 0.5 * s.weight * (lo + hi);
        }
        Ok(total)
    }
}

fn key(t: &TailTerm) -> (i64, i64) {
    ((t.gamma * 1e9).round() as i64, (t.omega * 1e9).round() as i64)
}

fn multiply(a: &[TailTerm], b: &[TailTerm], split: f64) -> Vec<TailTerm> {
    let mut acc: HashMap<(i64, i64), TailTerm> = HashMap::new();
    let mut push = |t: TailTerm| {
        if (t.weight * split.powf(-t.gamma)).abs() < TAIL_DROP {
            return;
        }
        acc.entry(key(&t)).and_modify(|e| e.weight += t.weight).or_insert(t);
    };
    for x in a {
        for y in b {
            let gamma = x.gamma + y.gamma;
            let w = x.weight * y.weight;
            if x.omega == 0.0 || y.omega == 0.0 {
                push(TailTerm {
                    weight: w,
                    gamma,
                    omega: x.omega + y.omega,
                });
            } else {
                push(TailTerm {
                    weight: 0.5 * w,
                    gamma,
                    omega: x.omega + y.omega,
                });
                push(TailTerm {
                    weight: 0.5 * w,
                    gamma,
                    omega: (x.omega - y.omega).abs(),
                });
            }
        }
    }
    let mut out: Vec<TailTerm> = acc.into_values().collect();
    // deterministic order for reproducible summation
    out.sort_by(|p, q| p.gamma.total_cmp(&q.gamma).then(p.omega.total_cmp(&q.omega)));
    out
}

/// `int_split^inf t^(-gamma) cos(nu t) dt` for `nu >= 0`.
fn power_cos_tail(gamma: f64, nu: f64, split: f64) -> Result<f64> {
    if nu < 1e-12 {
        if gamma <= 1.0 {
            return Err(Error::NotIntegrable { product: gamma });
        }
        return Ok(split.powf(1.0 - gamma) / (gamma - 1.0));
    }
    // t = u / nu
    Ok(nu.powf(gamma - 1.0) * unit_power_cos_tail(gamma, nu * split))
}

/// `E(gamma, a) = int_a^inf u^(-gamma) cos(u) du` for `a > 0`.
fn unit_power_cos_tail(gamma: f64, a: f64) -> f64 {
    let far = 40.0 + 2.0 * gamma;
    if a >= far {
        return asymptotic_tail(gamma, a);
    }
    let f = |u: f64| u.powf(-gamma) * u.cos();
    let gl = GaussLegendre::new(16);
    let mut total = 0.0;
    let mut lo = a;
    // geometric panels while the power law is steep
    while lo < 1.0 && lo < far {
        let hi = (2.0 * lo).min(1.0);
        total += gl.panel(&f, lo, hi);
        lo = hi;
    }
    let panels = ((far - lo) / 0.5).ceil().max(1.0) as usize;
    total += gl.composite(f, lo, far, panels);
    total + asymptotic_tail(gamma, far)
}

/// Re of `int_a^inf u^(-gamma) e^{iu} du` by repeated integration by parts.
fn asymptotic_tail(gamma: f64, a: f64) -> f64 {
    // term_0 = i e^{ia} a^-gamma, term_{n+1} = term_n (gamma + n) / (i a)
    let (s, c) = a.sin_cos();
    let scale = a.powf(-gamma);
    // track the coefficient multiplying i e^{ia} a^-gamma as a complex number
    let (mut re, mut im) = (1.0f64, 0.0f64);
    let (mut sum_re, mut sum_im) = (0.0, 0.0);
    for n in 0..200 {
        sum_re += re;
        sum_im += im;
        let r = (gamma + n as f64) / a;
        if r >= 0.5 || (re.abs() + im.abs()) < 1e-18 {
            break;
        }
        // multiply by r / i = -i r
        let (nre, nim) = (im * r, -re * r);
        re = nre;
        im = nim;
    }
    // i e^{ia} (sum_re + i sum_im) = (i c - s)(sum_re + i sum_im)
    let real = -s * sum_re - c * sum_im;
    scale * real
}

/// Evaluates `(1/2pi) int_R B(t)^k cos(lambda t) dt` with an error estimate.
pub fn cosine_transform(spec: &NoiseSpec, power: u32, lambda: f64) -> Result<Estimate> {
    CosineTransform::new(spec.clone(), power).eval(lambda)
}

/// Reusable transform for a fixed `(spec, k)`; holds the tail expansion.
#[derive(Debug, Clone)]
pub struct CosineTransform {
    spec: NoiseSpec,
    power: u32,
    tail: TailSeries,
    low: GaussLegendre,
    high: GaussLegendre,
}

impl CosineTransform {
    pub fn new(spec: NoiseSpec, power: u32) -> Self {
        let tail = TailSeries::new(&spec, power);
        Self {
            spec,
            power,
            tail,
            low: GaussLegendre::new(16),
            high: GaussLegendre::new(24),
        }
    }

    pub fn power(&self) -> u32 {
        self.power
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn tail_series(&self) -> &TailSeries {
        &self.tail
    }

    pub fn eval(&self, lambda: f64) -> Result<Estimate> {
        let k = self.power as i32;
        let spec = &self.spec;
        let integrand = |t: f64| spec.covariance(t).powi(k) * (lambda * t).cos();
        let split = self.tail.split();
        let omega_max = lambda.abs() + self.power as f64 * spec.carrier_max();
        let width = 0.5f64.min(std::f64::consts::FRAC_PI_2 / omega_max.max(1e-12));

        let mut start = 0.0;
        let mut body = 0.0;
        let mut error = 0.0;
        if !spec.is_closed_form() {
            // |t|^rho is not smooth at the origin
            let e = tanh_sinh(integrand, 0.0, 1.0, 1e-12)?;
            body += e.value;
            error += e.error;
            start = 1.0;
        }
        let panels = ((split - start) / width).ceil() as usize;
        let h = (split - start) / panels as f64;
        for p in 0..panels {
            let lo = start + h * p as f64;
            let a = self.low.panel(&integrand, lo, lo + h);
            let b = self.high.panel(&integrand, lo, lo + h);
            body += b;
            error += (a - b).abs();
        }
        let tail = self.tail.integrate(lambda)?;
        let value = (body + tail) / std::f64::consts::PI;
        Ok(Estimate {
            value,
            error: (error + 1e-15 * tail.abs()) / std::f64::consts::PI,
        })
    }
}
