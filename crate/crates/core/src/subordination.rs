//! Hermite machinery for the subordinated noise `eps(t) = G(xi(t))`.
//!
//! Probabilists' Hermite polynomials `H_k` are used throughout, with
//! `G = sum_k C_k / k! H_k` and `C_k = E[G(Z) H_k(Z)]`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quadrature::{GaussHermite, GaussLegendre};
use crate::spectral::NoiseSpec;

/// Largest Hermite order supported by [`hermite`].
pub const MAX_HERMITE_ORDER: usize = 60;
pub const DEFAULT_K_MAX: usize = 20;
/// Rank tolerance applied to `|C_k| / sqrt(k!)`.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
const MEAN_TOL: f64 = 1e-8;
const CONVERGENCE_TOL: f64 = 1e-9;

/// `H_k(x)` from `H_{k+1} = x H_k - k H_{k-1}`.
pub fn hermite(k: usize, x: f64) -> Result<f64> {
    if k > MAX_HERMITE_ORDER {
        return Err(Error::OrderOverflow {
            order: k,
            max: MAX_HERMITE_ORDER,
        });
    }
    Ok(hermite_unchecked(k, x))
}

pub(crate) fn hermite_unchecked(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for j in 0..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `H_0(x) / sqrt(0!), ..., H_n(x) / sqrt(n!)` into `out`.
fn orthonormal_hermite_all(x: f64, out: &mut [f64]) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = cur;
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
}

pub(crate) fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// The transform `G`.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformKind {
    Identity,
    /// `G = sum_k C_k / k! H_k` from an explicit coefficient list `C_0, C_1, ...`.
    Hermite(Vec<f64>),
    /// `|x| - sqrt(2/pi)`.
    CenteredAbs,
    /// `x^3`.
    Cube,
    /// Piecewise-linear interpolation of `(x, G(x))` pairs, extrapolated linearly.
    Table(Vec<(f64, f64)>),
}

impl TransformKind {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TransformKind::Identity => x,
            TransformKind::Hermite(c) => c
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(k, c)| c / factorial(k) * hermite_unchecked(k, x))
                .sum(),
            TransformKind::CenteredAbs => x.abs() - (2.0 / std::f64::consts::PI).sqrt(),
            TransformKind::Cube => x * x * x,
            TransformKind::Table(points) => interpolate(points, x),
        }
    }

    /// Points where `G` is not smooth.
    fn kinks(&self) -> Vec<f64> {
        match self {
            TransformKind::CenteredAbs => vec![0.0],
            TransformKind::Table(points) => points.iter().map(|p| p.0).collect(),
            _ => Vec::new(),
        }
    }

    fn is_smooth(&self) -> bool {
        matches!(
            self,
            TransformKind::Identity | TransformKind::Hermite(_) | TransformKind::Cube
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Hermite(_) => "hermite",
            TransformKind::CenteredAbs => "abs",
            TransformKind::Cube => "cube",
            TransformKind::Table(_) => "table",
        }
    }
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let n = points.len();
    let idx = match points.binary_search_by(|p| p.0.total_cmp(&x)) {
        Ok(i) => return points[i].1,
        Err(i) => i.clamp(1, n - 1),
    };
    let (x0, y0) = points[idx - 1];
    let (x1, y1) = points[idx];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Expectation `E[h(Z)]` for the standard normal, choosing the rule by smoothness.
struct GaussianIntegrator {
    smooth: bool,
    kinks: Vec<f64>,
    range: f64,
}

impl GaussianIntegrator {
    /// Vector-valued expectation of `h(x) * phi(x)` accumulated into `out`,
    /// using `level` as the refinement index (doubling per level).
    fn expect_into<F: Fn(f64, &mut [f64])>(&self, level: usize, h: &F, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = vec![0.0; out.len()];
        let add = |x: f64, w: f64, buf: &mut [f64], out: &mut [f64]| {
            h(x, buf);
            for (o, b) in out.iter_mut().zip(buf.iter()) {
                *o += w * b;
            }
        };
        if self.smooth {
            let gh = GaussHermite::new(32 << level);
            for (x, w) in gh.nodes.iter().zip(&gh.weights) {
                add(*x, *w, &mut buf, out);
            }
        } else {
            let mut cuts: Vec<f64> = self
                .kinks
                .iter()
                .copied()
                .filter(|k| k.abs() < self.range)
                .chain([-self.range, self.range])
                .collect();
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let gl = GaussLegendre::new(20);
            let norm = (2.0 * std::f64::consts::PI).sqrt().recip();
            for seg in cuts.windows(2) {
                let panels = (((seg[1] - seg[0]) / 0.5).ceil() as usize).max(1) << level;
                let width = (seg[1] - seg[0]) / panels as f64;
                for p in 0..panels {
                    let lo = seg[0] + width * p as f64;
                    let c = lo + 0.5 * width;
                    let r = 0.5 * width;
                    for (node, weight) in gl.nodes().iter().zip(gl.weights()) {
                        let x = c + r * node;
                        add(x, weight * r * norm * (-0.5 * x * x).exp(), &mut buf, out);
                    }
                }
            }
        }
    }
}

/// Hermite coefficients `C_0..C_{k_max}` of `G`, refined by doubling the
/// quadrature until no normalised coefficient moves by more than `1e-9`.
///
/// Smooth transforms use Gauss-Hermite; transforms with kinks use composite
/// Gauss-Legendre split at the kinks.
pub fn hermite_coefficients(kind: &TransformKind, k_max: usize) -> Result<Vec<f64>> {
    if k_max > MAX_HERMITE_ORDER {
        return Err(Error::OrderOverflow {
            order: k_max,
            max: MAX_HERMITE_ORDER,
        });
    }
    let integrator = GaussianIntegrator {
        smooth: kind.is_smooth(),
        kinks: kind.kinks(),
        range: 12f64.max(2.0 * (k_max as f64).sqrt() + 10.0),
    };
    let h = |x: f64, out: &mut [f64]| {
        orthonormal_hermite_all(x, out);
        let g = kind.eval(x);
        out.iter_mut().for_each(|v| *v *= g);
    };
    let mut prev = vec![0.0; k_max + 1];
    let mut cur = vec![0.0; k_max + 1];
    integrator.expect_into(0, &h, &mut prev);
    let mut converged = false;
    for level in 1..=6 {
        integrator.expect_into(level, &h, &mut cur);
        let change = prev.iter().zip(&cur).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut prev, &mut cur);
        if change <= CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Quadrature("Hermite coefficients did not stabilise".into()));
    }
    // normalised -> C_k
    Ok(prev
        .iter()
        .enumerate()
        .map(|(k, v)| v * (0.5 * ln_factorial(k)).exp())
        .collect())
}

/// Smallest `k >= 1` with `|C_k| / sqrt(k!) > tol`.
pub fn hermite_rank(coeffs: &[f64], tol: f64) -> Result<usize> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .find(|(k, c)| c.abs() * (-0.5 * ln_factorial(*k)).exp() > tol)
        .map(|(k, _)| k)
        .ok_or(Error::DegenerateTransform)
}

/// `E[G(Z)^p]` by the same rule used for the coefficients.
fn moment(kind: &TransformKind, p: i32, k_max: usize) -> f64 {
    let integrator = GaussianIntegrator {
        smooth: kind.is_smooth(),
        kinks: kind.kinks(),
        range: 12f64.max(2.0 * (k_max as f64).sqrt() + 10.0),
    };
    let mut out = [0.0];
    integrator.expect_into(2, &|x: f64, o: &mut [f64]| o[0] = kind.eval(x).powi(p), &mut out);
    out[0]
}

/// A validated transform together with its Hermite expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// `C_0..C_{k_max}`.
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub k_max: usize,
    /// `E G^2` by direct quadrature.
    pub second_moment: f64,
    /// `E G^2 - sum_{k <= k_max} C_k^2 / k!`, the truncation tail.
    pub truncation_tail: f64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, k_max: usize) -> Result<Self> {
        if let TransformKind::Table(points) = &kind {
            if points.len() < 2 || points.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidTransform(
                    "table abscissae must be strictly increasing".into(),
                ));
            }
        }
        let k_max = match &kind {
            TransformKind::Hermite(c) => k_max.max(c.len().saturating_sub(1)),
            _ => k_max,
        };
        let coefficients = match &kind {
            TransformKind::Hermite(c) => {
                let mut c = c.clone();
                c.resize(k_max + 1, 0.0);
                c
            }
            other => hermite_coefficients(other, k_max)?,
        };
        if coefficients[0].abs() > MEAN_TOL {
            return Err(Error::NonzeroMean(coefficients[0]));
        }
        let rank = hermite_rank(&coefficients, DEFAULT_RANK_TOL)?;
        let fourth = moment(&kind, 4, k_max);
        if !fourth.is_finite() {
            return Err(Error::InvalidTransform("E G^4 is not finite".into()));
        }
        let second_moment = moment(&kind, 2, k_max);
        let partial = parseval_sum(&coefficients);
        Ok(Self {
            kind,
            coefficients,
            rank,
            k_max,
            second_moment,
            truncation_tail: (second_moment - partial).max(0.0),
        })
    }

    pub fn identity() -> Self {
        Self::new(TransformKind::Identity, DEFAULT_K_MAX).expect("identity transform is valid")
    }

    /// `H_2 = x^2 - 1`.
    pub fn second_hermite() -> Self {
        Self::new(TransformKind::Hermite(vec![0.0, 0.0, 2.0]), DEFAULT_K_MAX).expect("H_2 is valid")
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.kind.eval(x)
    }

    /// `C_k^2 / k!` for every retained order.
    pub fn spectral_weights(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if c.abs() == 0.0 {
                    0.0
                } else {
                    (2.0 * c.abs().ln() - ln_factorial(k)).exp()
                }
            })
            .collect()
    }

    pub fn from_config(raw: &TransformConfig, base: &Path) -> Result<Self> {
        let k_max = raw.k_max.unwrap_or(DEFAULT_K_MAX);
        let kind = match raw.kind.as_str() {
            "identity" => TransformKind::Identity,
            "hermite" => TransformKind::Hermite(
                raw.coeffs
                    .clone()
                    .ok_or_else(|| Error::Config("hermite transform needs `coeffs`".into()))?,
            ),
            "abs" => TransformKind::CenteredAbs,
            "cube" => TransformKind::Cube,
            "table" => {
                let rel = raw
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::Config("table transform needs `table`".into()))?;
                let mut points = read_table(&base.join(rel))?;
                if raw.center.unwrap_or(false) {
                    let probe = TransformKind::Table(points.clone());
                    let mean = moment(&probe, 1, k_max);
                    points.iter_mut().for_each(|p| p.1 -= mean);
                }
                TransformKind::Table(points)
            }
            other => return Err(Error::Config(format!("unknown transform kind `{other}`"))),
        };
        Self::new(kind, k_max)
    }

    pub fn to_config(&self) -> TransformConfig {
        TransformConfig {
            kind: self.kind.name().to_string(),
            coeffs: match &self.kind {
                TransformKind::Hermite(c) => Some(c.clone()),
                _ => None,
            },
            table: None,
            center: None,
            k_max: Some(self.k_max),
        }
    }
}

fn read_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad table row in {}", path.display())))
        };
        points.push((parse(0)?, parse(1)?));
    }
    Ok(points)
}

/// Transform section of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
}

/// `sum_k C_k^2 / k!` over `k >= 1`.
pub fn parseval_sum(coeffs: &[f64]) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| c * c / factorial(k))
        .sum()
}

/// `sum_{k=m}^{k_max} (C_k^2 / k!) r^k` for a correlation `r`.
pub fn covariance_from_correlation(coeffs: &[f64], r: f64) -> f64 {
    let mut total = 0.0;
    let mut power = 1.0;
    for (k, c) in coeffs.iter().enumerate() {
        if k > 0 {
            power *= r;
            if *c != 0.0 {
                total += c * c / factorial(k) * power;
            }
        }
    }
    total
}

/// Covariance of `G(xi(s)) G(xi(s + t))`.
pub fn subordinated_covariance(coeffs: &[f64], spec: &NoiseSpec, t: f64) -> f64 {
    covariance_from_correlation(coeffs, spec.covariance(t))
}
