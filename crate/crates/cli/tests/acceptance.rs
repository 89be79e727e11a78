//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`).

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use harmonic_lse::diagrams::{
    count_regular, enumerate_regular, hermite_product_moment, level_groups, CorrelationMatrix,
};
use harmonic_lse::harness::{
    consistency_sweep, lemma2_decay, run_replications, Experiment, ExperimentConfig, HarmonicSummary,
};
use harmonic_lse::simulate::{gaussian_path, sample_autocovariance, subordinate, SamplingGrid};
use harmonic_lse::spectral::{bessel_k, integrate_density, NoiseComponent, NoiseSpec};
use harmonic_lse::subordination::{subordinated_covariance, TransformKind, TransformSpec, DEFAULT_K_MAX};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

const SINGLE: &str = r#"
replications = 500
seed = 7

[noise]
[[noise.component]]
D = 1.0
alpha = 1.5
kappa = 0.0

[transform]
kind = "identity"

[model]
band = [0.1, 3.0]
[[model.harmonic]]
A = 1.0
B = 0.5
phi = 1.3

[[grid]]
T = 4096.0
step = 0.25
"#;

fn experiment(text: &str) -> Experiment {
    ExperimentConfig::from_toml(text)
        .unwrap()
        .resolve(Path::new("."))
        .unwrap()
}

fn preset(name: &str) -> NoiseSpec {
    NoiseSpec::new(
        oracle::preset_components(name)
            .into_iter()
            .map(|(d, a, k)| NoiseComponent::new(d, a, k))
            .collect(),
    )
    .unwrap()
}

fn spectral_duality() -> Outcome {
    let mut worst_mass: f64 = 0.0;
    for name in ["single_seasonal", "single_plain", "mixed"] {
        let mass = integrate_density(&preset(name), 1e-7).unwrap().value;
        worst_mass = worst_mass.max((mass - 1.0).abs());
    }
    let rows = oracle::spectral_reference();
    let mut worst: f64 = 0.0;
    for r in &rows {
        let f = preset(&r.preset).spectral_density(r.lambda).unwrap();
        worst = worst.max((f - r.density).abs() / r.density.abs());
    }
    (
        worst_mass < 1e-4 && worst < 1e-4 && rows.len() == 150,
        format!(
            "max |mass-1| {worst_mass:.1e}, max rel err {worst:.1e} over {} points",
            rows.len()
        ),
    )
}

fn bessel() -> Outcome {
    let mut closed: f64 = 0.0;
    for i in 0..200 {
        let z = 0.01 * 2000f64.powf(i as f64 / 199.0);
        let exact = (std::f64::consts::PI / (2.0 * z)).sqrt() * (-z).exp();
        closed = closed.max((bessel_k(0.5, z).unwrap() - exact).abs() / exact);
    }
    let mut series: f64 = 0.0;
    for nu in [0.0, 0.3, 1.0, 1.7] {
        // the power series oracle cancels badly beyond z = 5
        for i in 0..40 {
            let z = 0.01 * 500f64.powf(i as f64 / 39.0);
            let s = oracle::bessel_k_series(nu, z);
            series = series.max((bessel_k(nu, z).unwrap() - s).abs() / s.abs());
        }
    }
    (
        closed <= 1e-10 && series <= 1e-8,
        format!("K_1/2 max rel err {closed:.1e} on [0.01, 20]; series vs integral {series:.1e} on [0.01, 5]"),
    )
}

fn diagrams() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let all_orders = oracle::order_tuples(4, 8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let corr = oracle::random_correlation(4, &mut rng);
        for orders in &all_orders {
            let p = orders.len();
            let sub: Vec<Vec<f64>> = corr[..p].iter().map(|r| r[..p].to_vec()).collect();
            let expected = oracle::brute_force_moment(orders, &sub);
            let got = hermite_product_moment(orders, &CorrelationMatrix::new(sub).unwrap()).unwrap();
            worst = worst.max((got - expected).abs() / expected.abs().max(1.0));
        }
    }
    let fact = |m: usize| (1..=m).map(|i| i as f64).product::<f64>();
    let mut pair_exact = true;
    for r in [-0.7, 0.25, 0.5] {
        let corr = CorrelationMatrix::uniform(2, r).unwrap();
        for k in 1..=6 {
            for l in 1..=6 {
                let m = hermite_product_moment(&[k, l], &corr).unwrap();
                let exact = if k == l { fact(k) * r.powi(k as i32) } else { 0.0 };
                pair_exact &= (m - exact).abs() <= 1e-14 * exact.abs();
            }
        }
    }
    let tuples: [&[usize]; 10] = [
        &[1, 1],
        &[2, 2],
        &[3, 3],
        &[1, 1, 1, 1],
        &[1, 1, 2, 2],
        &[2, 2, 2, 2],
        &[2, 2, 3, 3],
        &[1, 1, 3, 3],
        &[1, 1, 1, 1, 2, 2],
        &[2, 2, 2, 2, 2, 2],
    ];
    let census = tuples.iter().all(|orders| {
        let groups = level_groups(orders).unwrap();
        let enumerated: u128 = oracle::distinct_arrangements(orders)
            .iter()
            .map(|a| enumerate_regular(a).unwrap())
            .sum();
        count_regular(orders, &groups).unwrap() == enumerated
    });
    (
        worst <= 1e-10 && pair_exact && census,
        format!(
            "{} order tuples x 50 matrices, max rel err {worst:.1e}; two-factor exact: {pair_exact}; census of {} tuples: {census}",
            all_orders.len(),
            tuples.len()
        ),
    )
}

fn mean_and_se(rows: &[Vec<f64>], h: usize) -> (f64, f64) {
    let r = rows.len() as f64;
    let mean = rows.iter().map(|v| v[h]).sum::<f64>() / r;
    let var = rows.iter().map(|v| (v[h] - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

fn simulator() -> Outcome {
    let spec = NoiseSpec::new(vec![NoiseComponent::new(1.0, 1.2, 0.8)]).unwrap();
    let cube = TransformSpec::new(TransformKind::Cube, DEFAULT_K_MAX).unwrap();
    let grid = SamplingGrid::new(2048.0, 0.5).unwrap();
    let (mut xi_rows, mut eps_rows) = (Vec::new(), Vec::new());
    for r in 0..200 {
        let xi = gaussian_path(&spec, &grid, 9_000 + r).unwrap();
        eps_rows.push(sample_autocovariance(&subordinate(&xi, &cube), 20));
        xi_rows.push(sample_autocovariance(&xi, 20));
    }
    let mut worst: f64 = 0.0;
    for h in 0..=20 {
        let t = h as f64 * grid.step();
        let (mx, sx) = mean_and_se(&xi_rows, h);
        let (me, se) = mean_and_se(&eps_rows, h);
        worst = worst.max((mx - spec.covariance(t)).abs() / sx);
        worst = worst.max((me - subordinated_covariance(&cube.coefficients, &spec, t)).abs() / se);
    }
    (
        worst <= 3.0,
        format!(
            "n = {}, R = 200, max |mean - closed form| = {worst:.2} SE",
            grid.count()
        ),
    )
}

fn consistency() -> Outcome {
    let text = SINGLE.replace("replications = 500", "replications = 200").replace(
        "T = 4096.0",
        "T = 256.0\nstep = 0.25\n[[grid]]\nT = 1024.0\nstep = 0.25\n[[grid]]\nT = 4096.0",
    );
    let slopes = consistency_sweep(&experiment(&text), 1).unwrap();
    let ok = slopes
        .iter()
        .all(|s| s.slope.is_some_and(|v| (v - s.expected).abs() <= 0.15));
    let detail = slopes
        .iter()
        .map(|s| {
            format!(
                "{} {:.3} (want {})",
                s.parameter,
                s.slope.unwrap_or(f64::NAN),
                s.expected
            )
        })
        .collect::<Vec<_>>();
    (ok, detail.join(", "))
}

fn max_significant(m: &[[f64; 3]; 3], entries: &[(usize, usize)]) -> f64 {
    entries
        .iter()
        .map(|&(i, j)| m[i][j])
        .filter(|v| !v.is_nan())
        .fold(0.0, f64::max)
}

const ALL: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
const SHARED: [(usize, usize); 4] = [(0, 1), (0, 2), (1, 2), (2, 2)];

fn clt(single: &HarmonicSummary, rank2: &HarmonicSummary) -> Outcome {
    let dev = max_significant(&single.deviation_derived, &ALL);
    let cov = single.coverage95;
    let coverage_ok = cov.iter().all(|c| (0.90..=0.98).contains(c));
    let dev2 = max_significant(&rank2.deviation_derived, &ALL);
    (
        dev <= 0.20 && coverage_ok && dev2 <= 0.25,
        format!(
            "max deviation {:.1}% (<= 20%), coverage95 ({:.3}, {:.3}, {:.3}); rank 2: max deviation {:.1}% (<= 25%)",
            100.0 * dev,
            cov[0],
            cov[1],
            cov[2],
            100.0 * dev2
        ),
    )
}

fn mode_adjudication(single: &HarmonicSummary) -> Outcome {
    let shared = max_significant(&single.deviation_as_printed, &SHARED);
    let (d, p, c) = (single.gamma_derived, single.gamma_as_printed, single.covariance);
    (
        shared <= 0.20,
        format!(
            "as-printed shared entries max deviation {:.1}%; (1,1): empirical {:.3}, derived {:.3}, as-printed {:.3} ({:.0}% off); (2,2): empirical {:.3}, derived {:.3}, as-printed {:.3} ({:.0}% off)",
            100.0 * shared,
            c[0][0],
            d[0][0],
            p[0][0],
            100.0 * single.deviation_as_printed[0][0],
            c[1][1],
            d[1][1],
            p[1][1],
            100.0 * single.deviation_as_printed[1][1]
        ),
    )
}

fn plug_in(single: &HarmonicSummary, violations: usize, included: usize) -> Outcome {
    let worst = max_significant(&single.plug_in_median_deviation, &ALL);
    (
        worst < 0.10 && violations == 0,
        format!(
            "max median deviation {:.2}%, bound violations {violations} of {included}",
            100.0 * worst
        ),
    )
}

fn lemma2() -> Outcome {
    let noise = NoiseSpec::single(1.5, 0.0).unwrap();
    let r = lemma2_decay(
        &noise,
        &TransformSpec::identity(),
        &[512.0, 2048.0, 8192.0],
        0.25,
        100,
        7,
        1,
    )
    .unwrap();
    (
        r.strictly_decreasing,
        format!(
            "mean eta^2 {:?}",
            r.mean_eta2.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn run_binary(dir: &Path, workers: &str) -> bool {
    Command::new(env!("CARGO_BIN_EXE_harmonic-lse"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args([
            "--seed",
            "99",
            "--workers",
            workers,
            "--out",
            workers,
            "montecarlo",
            "--config",
            "mc.toml",
        ])
        .status()
        .is_ok_and(|s| s.success())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = SINGLE
        .replace("replications = 500", "replications = 60")
        .replace("T = 4096.0", "T = 512.0\nstep = 0.25\n[[grid]]\nT = 1024.0");
    std::fs::write(dir.path().join("mc.toml"), text).unwrap();
    if !(run_binary(dir.path(), "1") && run_binary(dir.path(), "8")) {
        return (false, "montecarlo run failed".into());
    }
    let mut compared = 0;
    for name in ["report.toml", "samples_T512.csv", "samples_T1024.csv"] {
        let a = std::fs::read(dir.path().join("1").join(name)).unwrap_or_default();
        let b = std::fs::read(dir.path().join("8").join(name)).unwrap_or_default();
        if a.is_empty() || a != b {
            return (false, format!("{name} differs between 1 and 8 workers"));
        }
        compared += 1;
    }
    (true, format!("{compared} files byte-identical at 1 and 8 workers"))
}

fn report(n: usize, started: Instant, (ok, detail): Outcome) -> bool {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!(
        "criterion {n:>2}: {verdict} [{:.1}s] {detail}",
        started.elapsed().as_secs_f64()
    );
    ok
}

fn main() -> ExitCode {
    let mut ok = true;
    let t = Instant::now();
    ok &= report(1, t, spectral_duality());
    let t = Instant::now();
    ok &= report(2, t, bessel());
    let t = Instant::now();
    ok &= report(3, t, diagrams());
    let t = Instant::now();
    ok &= report(4, t, simulator());
    let t = Instant::now();
    ok &= report(5, t, consistency());

    let t = Instant::now();
    let single = run_replications(&experiment(SINGLE), 1).unwrap();
    let rank2_text = SINGLE
        .replace("alpha = 1.5", "alpha = 0.8")
        .replace("kind = \"identity\"", "kind = \"hermite\"\ncoeffs = [0.0, 0.0, 1.0]");
    let rank2 = run_replications(&experiment(&rank2_text), 1).unwrap();
    let h = &single.horizons[0];
    let summary = &h.harmonics[0];
    ok &= report(6, t, clt(summary, &rank2.horizons[0].harmonics[0]));
    let t = Instant::now();
    ok &= report(7, t, mode_adjudication(summary));
    ok &= report(8, t, plug_in(summary, h.perturbation_bound_violations, h.included));
    let t = Instant::now();
    ok &= report(9, t, lemma2());
    let t = Instant::now();
    ok &= report(10, t, determinism());

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
