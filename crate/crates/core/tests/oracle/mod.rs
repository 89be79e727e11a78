//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the library.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn bessel_i_series(mu: f64, z: f64) -> f64 {
    let q = z * z / 4.0;
    let mut sum = 0.0;
    let mut k = 0;
    loop {
        let term = (z / 2.0).powf(mu) * q.powi(k) / (gamma(k as f64 + 1.0) * gamma(k as f64 + mu + 1.0));
        sum += term;
        if k > 5 && term.abs() < 1e-18 * sum.abs() {
            return sum;
        }
        k += 1;
        assert!(k < 300, "I series did not converge");
    }
}

/// `K_nu(z)` from the ascending power series: the reflection formula for
/// non-integer order, the logarithmic series for integer order.
pub fn bessel_k_series(nu: f64, z: f64) -> f64 {
    let nu = nu.abs();
    let n = nu.round();
    if (nu - n).abs() > 1e-12 {
        let pi = std::f64::consts::PI;
        return pi / (2.0 * (nu * pi).sin()) * (bessel_i_series(-nu, z) - bessel_i_series(nu, z));
    }
    let n = n as usize;
    let half = z / 2.0;
    let q = half * half;
    let fact = |m: usize| (1..=m).map(|i| i as f64).product::<f64>();
    let mut finite = 0.0;
    for k in 0..n {
        finite += fact(n - k - 1) / fact(k) * (-q).powi(k as i32);
    }
    finite *= 0.5 * half.powi(-(n as i32));
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let log_part = -sign * half.ln() * bessel_i_series(n as f64, z);
    // psi(k + 1) = -gamma + H_k
    let psi = |m: usize| -EULER_GAMMA + (1..=m).map(|i| 1.0 / i as f64).sum::<f64>();
    let mut tail = 0.0;
    let mut k = 0;
    loop {
        let term = (psi(k) + psi(n + k)) * q.powi(k as i32) / (fact(k) * fact(n + k));
        tail += term;
        if k > 5 && term.abs() < 1e-18 * tail.abs().max(1e-300) {
            break;
        }
        k += 1;
        assert!(k < 170, "K series did not converge");
    }
    finite + log_part + sign * 0.5 * half.powi(n as i32) * tail
}

/// Monomial coefficients of the probabilists' Hermite polynomial `H_n`.
pub fn hermite_monomials(n: usize) -> Vec<f64> {
    let fact = |m: usize| (1..=m).map(|i| i as f64).product::<f64>();
    let mut c = vec![0.0; n + 1];
    for k in 0..=n / 2 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        c[n - 2 * k] = sign * fact(n) / (fact(k) * fact(n - 2 * k) * 2f64.powi(k as i32));
    }
    c
}

/// `E[prod zeta_{v}]` over a list of variable indices by summing over all
/// pairings (Isserlis).
pub fn isserlis(vars: &[usize], corr: &[Vec<f64>]) -> f64 {
    if vars.is_empty() {
        return 1.0;
    }
    if vars.len() % 2 == 1 {
        return 0.0;
    }
    let first = vars[0];
    let rest = &vars[1..];
    let mut total = 0.0;
    for i in 0..rest.len() {
        let r = corr[first][rest[i]];
        if r == 0.0 {
            continue;
        }
        let remaining: Vec<usize> = rest
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .collect();
        total += r * isserlis(&remaining, corr);
    }
    total
}

/// `E[prod_j H_{l_j}(zeta_j)]` by expanding every factor into monomials.
pub fn brute_force_moment(orders: &[usize], corr: &[Vec<f64>]) -> f64 {
    let polys: Vec<Vec<f64>> = orders.iter().map(|&l| hermite_monomials(l)).collect();
    let mut total = 0.0;
    let mut powers = vec![0usize; orders.len()];
    loop {
        let coeff: f64 = powers.iter().zip(&polys).map(|(&p, c)| c[p]).product();
        if coeff != 0.0 {
            let vars: Vec<usize> = powers
                .iter()
                .enumerate()
                .flat_map(|(j, &p)| std::iter::repeat_n(j, p))
                .collect();
            total += coeff * isserlis(&vars, corr);
        }
        let mut j = 0;
        loop {
            if j == powers.len() {
                return total;
            }
            powers[j] += 1;
            if powers[j] <= orders[j] {
                break;
            }
            powers[j] = 0;
            j += 1;
        }
    }
}

/// Random unit-diagonal PSD matrix `V V^T` with normalized Gaussian rows.
pub fn random_correlation<R: Rng>(dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = (0..dim)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum()
                    }
                })
                .collect()
        })
        .collect()
}

/// Every tuple of orders `l_j >= 1` with `1 <= p <= max_len` and sum at most `max_sum`.
pub fn order_tuples(max_len: usize, max_sum: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn extend(prefix: &mut Vec<usize>, left: usize, max_len: usize, out: &mut Vec<Vec<usize>>) {
        if !prefix.is_empty() {
            out.push(prefix.clone());
        }
        if prefix.len() == max_len {
            return;
        }
        for l in 1..=left {
            prefix.push(l);
            extend(prefix, left - l, max_len, out);
            prefix.pop();
        }
    }
    extend(&mut Vec::new(), max_sum, max_len, &mut out);
    out
}

/// Distinct orderings of a multiset of orders.
pub fn distinct_arrangements(orders: &[usize]) -> Vec<Vec<usize>> {
    let mut current = orders.to_vec();
    current.sort_unstable();
    let mut out = vec![current.clone()];
    // next lexicographic permutation until exhausted
    loop {
        let Some(i) = (0..current.len().saturating_sub(1))
            .rev()
            .find(|&i| current[i] < current[i + 1])
        else {
            return out;
        };
        let j = (i + 1..current.len()).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
        out.push(current.clone());
    }
}

/// One row of the quadrature reference for the spectral density.
pub struct SpectralReference {
    pub preset: String,
    pub lambda: f64,
    pub density: f64,
}

pub fn spectral_reference() -> Vec<SpectralReference> {
    include_str!("../data/spectral_reference.csv")
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            SpectralReference {
                preset: f[0].to_string(),
                lambda: f[1].parse().unwrap(),
                density: f[2].parse().unwrap(),
            }
        })
        .collect()
}

/// The preset noises of the reference file as `(D, alpha, kappa)` lists.
pub fn preset_components(name: &str) -> Vec<(f64, f64, f64)> {
    match name {
        "single_seasonal" => vec![(1.0, 0.5, 2.0)],
        "single_plain" => vec![(1.0, 1.5, 0.0)],
        "mixed" => vec![(0.6, 1.2, 0.0), (0.4, 0.7, 1.5)],
        other => panic!("unknown preset {other}"),
    }
}
