//! Zero-padded discrete Fourier sums `sum_i x_i exp(-i lambda t_i)` on a
//! uniform frequency grid.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Fourier sums of `values` at `lambda_j = 2 pi j / (size * step)`,
/// `j = 0..=size/2`, relative to the first sample time.
///
/// `size` is rounded up to a power of two no smaller than `values.len()`.
pub fn padded_sums(values: &[f64], size: usize) -> Vec<Complex64> {
    let size = size.max(values.len()).next_power_of_two();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(size, Complex64::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    buf.truncate(size / 2 + 1);
    buf
}

/// Grid spacing (radians per unit time) of [`padded_sums`].
pub fn grid_spacing(len: usize, size: usize, step: f64) -> f64 {
    let size = size.max(len).next_power_of_two();
    2.0 * std::f64::consts::PI / (size as f64 * step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_sum() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 7 % 11) as f64).sin()).collect();
        let sums = padded_sums(&x, 128);
        let step = 0.5;
        let d = grid_spacing(x.len(), 128, step);
        for (j, s) in sums.iter().enumerate().step_by(5) {
            let lambda = j as f64 * d;
            let direct: Complex64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * Complex64::from_polar(1.0, -lambda * i as f64 * step))
                .sum();
            assert!((direct - s).norm() < 1e-12);
        }
    }
}
