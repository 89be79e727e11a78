//! Modified Bessel function of the third kind (Macdonald function).

use crate::error::{Error, Result};

/// Largest order accepted by [`bessel_k`].
pub const MAX_ORDER: f64 = 50.0;

/// `K_nu(z)` for `z > 0` and `|nu| <= 50`.
///
/// Evaluated from the integral `1/2 int_0^inf s^(nu-1) exp(-(s + 1/s) z / 2) ds`.
/// With `s = e^u` this becomes `int_0^inf cosh(nu u) exp(-z cosh u) du`, whose
/// integrand decays double-exponentially, so the trapezoidal rule with step
/// halving converges geometrically. Sums are kept in log space; a result that
/// does not fit in an `f64` is reported as [`Error::Overflow`].
pub fn bessel_k(nu: f64, z: f64) -> Result<f64> {
    let log_k = log_bessel_k(nu, z)?;
    if log_k > f64::MAX.ln() {
        return Err(Error::Overflow(format!("K_{nu}({z}) exceeds f64 range")));
    }
    Ok(log_k.exp())
}

/// Natural logarithm of `K_nu(z)`; never overflows within the documented range.
pub fn log_bessel_k(nu: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("bessel_k requires z > 0, got {z}")));
    }
    if !nu.is_finite() || nu.abs() > MAX_ORDER {
        return Err(Error::Domain(format!(
            "bessel_k order {nu} outside |nu| <= {MAX_ORDER}"
        )));
    }
    let nu = nu.abs();
    let g = |u: f64| ln_cosh(nu * u) - z * u.cosh();

    // Locate the peak and the point where the integrand has dropped by e^-50.
    let mut peak = g(0.0);
    let mut upper = 0.0;
    loop {
        upper += 0.25;
        let v = g(upper);
        peak = peak.max(v);
        if v < peak - 50.0 || upper > 60.0 {
            break;
        }
    }

    let term = |u: f64| (g(u) - peak).exp();
    let mut h = (upper / 16.0).min(0.25);
    let mut n = (upper / h).ceil() as usize;
    let mut sum = 0.5 * term(0.0) + (1..=n).map(|k| term(k as f64 * h)).sum::<f64>();
    let mut estimate = h * sum;
    for _ in 0..14 {
        h *= 0.5;
        n *= 2;
        sum += (1..=n).step_by(2).map(|k| term(k as f64 * h)).sum::<f64>();
        let next = h * sum;
        let converged = (next - estimate).abs() <= 1e-15 * next;
        estimate = next;
        if converged {
            break;
        }
    }
    Ok(peak + estimate.ln())
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}
