//! Covariance and spectral density of the underlying Gaussian process.
//!
//! The covariance is a mixture of damped cosines
//! `B(t) = sum_j D_j cos(kappa_j t) / (1 + |t|^rho_j)^(alpha_j / 2)`.
//! For `rho_j = 2` every component has a closed-form spectral density in
//! terms of the Macdonald function; other shapes are transformed numerically.

mod bessel;

pub use bessel::{bessel_k, log_bessel_k, MAX_ORDER as BESSEL_MAX_ORDER};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};
use std::f64::consts::PI;

use crate::cosine;
use crate::error::{Error, Result};
use crate::quadrature::{self, Estimate};

/// One damped-cosine term of the covariance mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseComponent {
    #[serde(rename = "D")]
    pub weight: f64,
    #[serde(rename = "alpha")]
    pub decay: f64,
    #[serde(rename = "kappa")]
    pub carrier: f64,
    #[serde(rename = "rho", default = "default_shape")]
    pub shape: f64,
}

fn default_shape() -> f64 {
    2.0
}

impl NoiseComponent {
    pub fn new(weight: f64, decay: f64, carrier: f64) -> Self {
        Self {
            weight,
            decay,
            carrier,
            shape: 2.0,
        }
    }

    pub fn with_shape(mut self, shape: f64) -> Self {
        self.shape = shape;
        self
    }

    /// True when the density has the Bessel-K closed form.
    pub fn is_closed_form(&self) -> bool {
        self.shape == 2.0
    }

    /// Power-law exponent of `|t|` in the envelope; equals `alpha` for `rho = 2`.
    pub fn tail_exponent(&self) -> f64 {
        0.5 * self.shape * self.decay
    }

    /// Unweighted covariance `cos(kappa t) / (1 + |t|^rho)^(alpha/2)`.
    pub fn covariance(&self, t: f64) -> f64 {
        (self.carrier * t).cos() * self.envelope(t)
    }

    pub fn envelope(&self, t: f64) -> f64 {
        let t = t.abs();
        if self.shape == 2.0 {
            (1.0 + t * t).powf(-0.5 * self.decay)
        } else {
            (1.0 + t.powf(self.shape)).powf(-0.5 * self.decay)
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.weight >= 0.0
            && self.weight.is_finite()
            && self.decay > 0.0
            && self.decay.is_finite()
            && self.carrier >= 0.0
            && self.carrier.is_finite()
            && self.shape > 0.0
            && self.shape <= 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidNoise(format!("component out of range: {self:?}")))
        }
    }
}

/// Validated covariance mixture with unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNoiseSpec", into = "RawNoiseSpec")]
pub struct NoiseSpec {
    components: Vec<NoiseComponent>,
}

#[derive(Serialize, Deserialize)]
struct RawNoiseSpec {
    #[serde(rename = "component")]
    components: Vec<NoiseComponent>,
}

impl TryFrom<RawNoiseSpec> for NoiseSpec {
    type Error = Error;
    fn try_from(raw: RawNoiseSpec) -> Result<Self> {
        NoiseSpec::new(raw.components)
    }
}

impl From<NoiseSpec> for RawNoiseSpec {
    fn from(spec: NoiseSpec) -> Self {
        RawNoiseSpec {
            components: spec.components,
        }
    }
}

impl NoiseSpec {
    pub fn new(components: Vec<NoiseComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidNoise("no components".into()));
        }
        for c in &components {
            c.validate()?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidNoise(format!("weights sum to {total}, expected 1")));
        }
        if components.windows(2).any(|w| w[1].carrier <= w[0].carrier) {
            return Err(Error::InvalidNoise("carriers must be strictly increasing".into()));
        }
        Ok(Self { components })
    }

    /// Single closed-form component with unit weight.
    pub fn single(decay: f64, carrier: f64) -> Result<Self> {
        Self::new(vec![NoiseComponent::new(1.0, decay, carrier)])
    }

    pub fn components(&self) -> &[NoiseComponent] {
        &self.components
    }

    pub fn alpha_min(&self) -> f64 {
        self.components.iter().map(|c| c.decay).fold(f64::INFINITY, f64::min)
    }

    /// Smallest power-law exponent of the covariance envelope.
    pub fn tail_exponent_min(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.tail_exponent())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn carrier_max(&self) -> f64 {
        self.components.iter().map(|c| c.carrier).fold(0.0, f64::max)
    }

    pub fn is_closed_form(&self) -> bool {
        self.components.iter().all(NoiseComponent::is_closed_form)
    }

    pub fn covariance(&self, t: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.covariance(t)).sum()
    }

    /// Covariance with every cosine replaced by one.
    pub fn envelope(&self, t: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.envelope(t)).sum()
    }

    pub fn spectral_density(&self, lambda: f64) -> Result<f64> {
        spectral_density(self, lambda)
    }
}

/// `B(t)`; even in `t` with `B(0) = 1`.
pub fn covariance(spec: &NoiseSpec, t: f64) -> f64 {
    spec.covariance(t)
}

/// `c_1(alpha) = 2^((1 - alpha)/2) / (sqrt(pi) Gamma(alpha/2))`.
pub fn c1(alpha: f64) -> f64 {
    (0.5 * (1.0 - alpha) * std::f64::consts::LN_2 - 0.5 * PI.ln() - ln_gamma(0.5 * alpha)).exp()
}

/// `c_2(alpha) = [2 Gamma(alpha) cos(alpha pi / 2)]^-1`, the coefficient of
/// `|lambda|^(alpha - 1)` in the density of a zero-carrier component near the
/// origin, for `0 < alpha < 1`.
pub fn c2(alpha: f64) -> f64 {
    1.0 / (2.0 * gamma(alpha) * (0.5 * alpha * PI).cos())
}

/// Value at the origin of the zero-carrier density for `alpha > 1`.
pub fn density_at_origin(alpha: f64) -> f64 {
    (ln_gamma(0.5 * (alpha - 1.0)) - ln_gamma(0.5 * alpha)).exp() / (2.0 * PI.sqrt())
}

/// `|d|^nu K_nu(|d|)` with `nu = (alpha - 1)/2`, extended continuously to
/// `d = 0` when `alpha > 1`.
fn bessel_kernel(alpha: f64, d: f64) -> Option<f64> {
    let nu = 0.5 * (alpha - 1.0);
    let d = d.abs();
    if d == 0.0 {
        if alpha > 1.0 {
            // lim d^nu K_nu(d) = Gamma(nu) 2^(nu - 1)
            return Some((ln_gamma(nu) + (nu - 1.0) * std::f64::consts::LN_2).exp());
        }
        return None;
    }
    let log = log_bessel_k(nu, d).ok()?;
    Some((nu * d.ln() + log).exp())
}

/// Closed-form density of the unit-weight component `cos(kappa t)(1+t^2)^(-alpha/2)`.
pub fn component_density(alpha: f64, carrier: f64, lambda: f64) -> Result<f64> {
    let singular = || Error::Singularity {
        frequency: lambda,
        alpha,
    };
    let plus = bessel_kernel(alpha, lambda + carrier).ok_or_else(singular)?;
    let minus = bessel_kernel(alpha, lambda - carrier).ok_or_else(singular)?;
    Ok(0.5 * c1(alpha) * (plus + minus))
}

/// Spectral density `f(lambda)` with `B(t) = int e^{i lambda t} f(lambda) d lambda`.
pub fn spectral_density(spec: &NoiseSpec, lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for c in spec.components() {
        if c.weight == 0.0 {
            continue;
        }
        let value = if c.is_closed_form() {
            component_density(c.decay, c.carrier, lambda)?
        } else {
            let single = NoiseSpec {
                components: vec![NoiseComponent { weight: 1.0, ..*c }],
            };
            cosine::cosine_transform(&single, 1, lambda)
                .map_err(|e| match e {
                    Error::NotIntegrable { .. } => Error::Singularity {
                        frequency: lambda,
                        alpha: c.decay,
                    },
                    other => other,
                })?
                .value
        };
        total += c.weight * value;
    }
    Ok(total)
}

/// A frequency at which the density is unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPoint {
    pub frequency: f64,
    /// Decay exponent of the owning component; the density behaves like
    /// `|lambda - frequency|^(alpha - 1)` (logarithmically when `alpha = 1`).
    pub alpha: f64,
}

/// Singular points `+-kappa_j` of every component with tail exponent at most one,
/// sorted ascending.
pub fn singular_points(spec: &NoiseSpec) -> Vec<SingularPoint> {
    let mut points = Vec::new();
    for c in spec.components() {
        if c.weight == 0.0 || c.tail_exponent() > 1.0 {
            continue;
        }
        let alpha = c.tail_exponent();
        points.push(SingularPoint {
            frequency: c.carrier,
            alpha,
        });
        if c.carrier != 0.0 {
            points.push(SingularPoint {
                frequency: -c.carrier,
                alpha,
            });
        }
    }
    points.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    points
}

/// `int_R f(lambda) d lambda`, split at every carrier so that tanh-sinh
/// absorbs the power-law singularities at panel endpoints.
pub fn integrate_density(spec: &NoiseSpec, tol: f64) -> Result<Estimate> {
    let mut cuts: Vec<f64> = vec![0.0];
    for c in spec.components() {
        if c.carrier > 0.0 {
            cuts.push(c.carrier);
        }
    }
    let mut far = spec.carrier_max() + 8.0;
    cuts.push(far);
    // the density decays like exp(-lambda) beyond the carriers for rho = 2
    if spec.is_closed_form() {
        far = spec.carrier_max() + 60.0;
        cuts.push(far);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let f = |x: f64| spectral_density(spec, x).unwrap_or(0.0);
    let mut value = 0.0;
    let mut error = 0.0;
    for w in cuts.windows(2) {
        let e = quadrature::tanh_sinh(f, w[0], w[1], tol)?;
        value += e.value;
        error += e.error;
    }
    if !spec.is_closed_form() {
        let last = *cuts.last().unwrap();
        let e = quadrature::tanh_sinh(
            |s| {
                let x = last + s / (1.0 - s);
                f(x) / ((1.0 - s) * (1.0 - s))
            },
            0.0,
            1.0,
            tol,
        )?;
        value += e.value;
        error += e.error;
    }
    Ok(Estimate {
        value: 2.0 * value,
        error: 2.0 * error,
    })
}
