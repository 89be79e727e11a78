//! Monte Carlo replication of simulate -> estimate -> normalized errors, with
//! the empirical covariance compared against the theoretical `Gamma`.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::asymptotics::{plug_in_gamma, to_array, GammaMode, GammaReport, SelfConvolution, DEFAULT_J_MAX};
use crate::error::{Error, Result};
use crate::estimator::{estimate, SeparationPolicy};
use crate::simulate::{
    check_rank_condition, replication_seed, sup_fourier_modulus, HarmonicModel, ObserveOptions, PathGenerator,
    SamplingGrid,
};
use crate::spectral::NoiseSpec;
use crate::subordination::{TransformConfig, TransformSpec};

/// Largest tolerated share of failed or non-converged replications.
pub const MAX_FAILURE_SHARE: f64 = 0.2;
/// Entries of `Gamma` below this share of its spectral norm are not compared.
pub const SIGNIFICANCE: f64 = 0.05;

fn default_j_max() -> usize {
    DEFAULT_J_MAX
}

fn default_scale() -> f64 {
    1.0
}

/// One `(T, Delta)` of the horizon schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub step: f64,
}

/// Optional pure-noise decay check of `sup_lambda |Fourier sum| / T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Config {
    pub replications: usize,
    pub horizons: Vec<f64>,
    pub step: f64,
}

/// Experiment description as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: GammaMode,
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    #[serde(default)]
    pub allow_rank_violation: bool,
    /// Start of the observation window.
    #[serde(default)]
    pub origin: f64,
    /// Multiplier of the noise; 0 gives noiseless data.
    #[serde(default = "default_scale")]
    pub noise_scale: f64,
    #[serde(default)]
    pub separation: SeparationPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub noise: NoiseSpec,
    pub transform: TransformConfig,
    pub model: HarmonicModel,
    #[serde(rename = "grid")]
    pub grids: Vec<GridEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma2: Option<Lemma2Config>,
}

/// A validated experiment with its transform expanded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub transform: TransformSpec,
    pub grids: Vec<SamplingGrid>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a configuration; table transforms resolve
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Experiment> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text)?.resolve(base)
    }

    pub fn resolve(self, base: &Path) -> Result<Experiment> {
        let transform = TransformSpec::from_config(&self.transform, base)?;
        Experiment::new(self, transform)
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig, transform: TransformSpec) -> Result<Self> {
        if config.replications < 2 {
            return Err(Error::Config(format!(
                "{} replications; at least 2 are needed",
                config.replications
            )));
        }
        if config.grids.is_empty() {
            return Err(Error::Config("empty grid schedule".into()));
        }
        if config.model.is_empty() {
            return Err(Error::Config("the model has no harmonics to estimate".into()));
        }
        if !(config.noise_scale >= 0.0 && config.noise_scale.is_finite()) {
            return Err(Error::Config(format!(
                "noise_scale {} must be finite and nonnegative",
                config.noise_scale
            )));
        }
        if config.j_max < transform.rank {
            return Err(Error::Config(format!(
                "j_max {} below the Hermite rank {}",
                config.j_max, transform.rank
            )));
        }
        check_rank_condition(&config.noise, &transform, config.allow_rank_violation)?;
        let grids = config
            .grids
            .iter()
            .map(|g| {
                let grid = SamplingGrid::new(g.horizon, g.step)?.with_origin(config.origin);
                config.model.check_nyquist(&grid)?;
                if !config.separation.admits(config.model.harmonics(), grid.horizon()) {
                    return Err(Error::Config(format!(
                        "true frequencies violate the separation policy at T = {}",
                        grid.horizon()
                    )));
                }
                Ok(grid)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            transform,
            grids,
        })
    }
}

/// Result of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub noise_warning: bool,
    /// Normalized errors per harmonic.
    pub errors: Vec<[f64; 3]>,
    /// Raw absolute errors `|dA|, |dB|, |dphi|` per harmonic.
    pub abs_errors: Vec<[f64; 3]>,
    /// Derived-mode plug-in `Gamma_k` per harmonic.
    pub plug_in: Vec<[[f64; 3]; 3]>,
    /// Whether the frequency perturbation bound held for every order and harmonic.
    pub perturbation_bound_holds: bool,
}

/// Aggregates for one harmonic at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSummary {
    pub harmonic: usize,
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
    pub gamma_derived: [[f64; 3]; 3],
    pub gamma_as_printed: [[f64; 3]; 3],
    /// `|emp - Gamma| / |Gamma|`, NaN where the entry is not significant.
    pub deviation_derived: [[f64; 3]; 3],
    pub deviation_as_printed: [[f64; 3]; 3],
    /// Share of `|e_i| <= 1.96 sqrt(Gamma_ii)` under the derived mode.
    pub coverage95: [f64; 3],
    /// Per-entry median of `|Gamma_hat - Gamma| / |Gamma|`, NaN where not significant.
    pub plug_in_median_deviation: [[f64; 3]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normality: Option<NormalitySummary>,
}

/// One horizon of a [`MonteCarloReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub step: f64,
    pub replications: usize,
    pub included: usize,
    pub failed: usize,
    pub non_converged: usize,
    pub noise_warnings: usize,
    pub perturbation_bound_violations: usize,
    /// Median raw absolute errors `(|dA|, |dB|, |dphi|)` pooled over harmonics.
    pub median_abs_error: [f64; 3],
    pub spectral_factor: Vec<f64>,
    pub tail_bound: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
    #[serde(rename = "harmonic")]
    pub harmonics: Vec<HarmonicSummary>,
}

/// Log-log slope of a median absolute error against `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub parameter: String,
    /// `None` when every median sits at the numerical floor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    pub expected: f64,
    pub floor_limited: bool,
}

/// Mean `eta^2(T)` of pure-noise paths along a horizon schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub horizons: Vec<f64>,
    pub mean_eta2: Vec<f64>,
    pub strictly_decreasing: bool,
}

/// Everything a Monte Carlo run reports. Contains no timing or scheduling
/// data so that equal configurations give byte-identical output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub version: String,
    pub seed: u64,
    pub mode: GammaMode,
    pub j_max: usize,
    pub rank: usize,
    pub noise_scale: f64,
    #[serde(rename = "horizon")]
    pub horizons: Vec<HorizonSummary>,
    #[serde(default, rename = "slope", skip_serializing_if = "Vec::is_empty")]
    pub slopes: Vec<Slope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma2: Option<Lemma2Report>,
    /// Per-horizon replication tables; written as CSV, not in the summary.
    #[serde(skip)]
    pub samples: Vec<Vec<Replication>>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Experiment(format!("worker pool: {e}")))
}

fn horizon_seed(master: u64, horizon_index: usize) -> u64 {
    replication_seed(master ^ 0x5EED_0000_0000_0000, horizon_index as u64)
}

/// Runs every horizon of the experiment on `workers` threads.
///
/// The outcome depends only on the configuration and master seed: each
/// replication draws from its own derived seed and results are folded in
/// replication order.
pub fn run_replications(exp: &Experiment, workers: usize) -> Result<MonteCarloReport> {
    let cfg = &exp.config;
    let pool = pool(workers)?;
    let conv = SelfConvolution::new(cfg.noise.clone());
    let truth = cfg.model.harmonics();
    let derived = plug_in_gamma(truth, &exp.transform, &conv, cfg.j_max, GammaMode::Derived)?;
    let printed = plug_in_gamma(truth, &exp.transform, &conv, cfg.j_max, GammaMode::AsPrinted)?;
    let noise_var = cfg.noise_scale * cfg.noise_scale;

    let mut horizons = Vec::with_capacity(exp.grids.len());
    let mut samples = Vec::with_capacity(exp.grids.len());
    for (gi, grid) in exp.grids.iter().enumerate() {
        let options = ObserveOptions {
            keep_components: false,
            allow_rank_violation: cfg.allow_rank_violation,
        };
        let generator = PathGenerator::new(&cfg.model, &cfg.noise, &exp.transform, grid, options)?
            .with_noise_scale(cfg.noise_scale);
        let base = horizon_seed(cfg.seed, gi);
        let outcomes: Vec<std::result::Result<Replication, String>> = pool.install(|| {
            (0..cfg.replications)
                .into_par_iter()
                .map(|r| replicate(exp, &generator, &conv, r, replication_seed(base, r as u64)))
                .collect()
        });
        let summary = summarise(exp, grid, &outcomes, &derived, &printed, noise_var)?;
        horizons.push(summary);
        samples.push(outcomes.into_iter().filter_map(|o| o.ok()).collect());
    }

    let slopes = if exp.grids.len() >= 3 {
        fit_slopes(&horizons)
    } else {
        Vec::new()
    };
    let lemma2 = match &cfg.lemma2 {
        Some(l) => Some(lemma2_decay(
            &cfg.noise,
            &exp.transform,
            &l.horizons,
            l.step,
            l.replications,
            cfg.seed,
            workers,
        )?),
        None => None,
    };
    Ok(MonteCarloReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        mode: cfg.mode,
        j_max: cfg.j_max,
        rank: exp.transform.rank,
        noise_scale: cfg.noise_scale,
        horizons,
        slopes,
        lemma2,
        samples,
    })
}

fn replicate(
    exp: &Experiment,
    generator: &PathGenerator,
    conv: &SelfConvolution,
    index: usize,
    seed: u64,
) -> std::result::Result<Replication, String> {
    let cfg = &exp.config;
    let path = generator.observe(seed);
    let truth = cfg.model.harmonics();
    let horizon = path.grid.horizon();
    let fit = estimate(&path, truth.len(), cfg.model.band(), &cfg.separation)
        .and_then(|r| r.with_truth(truth))
        .map_err(|e| format!("replication {index}: {e}"))?;
    let errors = fit.normalized_errors.clone().unwrap_or_default();
    let abs_errors = fit
        .estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| [(e.a - t.a).abs(), (e.b - t.b).abs(), (e.phi - t.phi).abs()])
        .collect();
    let noise_var = cfg.noise_scale * cfg.noise_scale;
    let (plug_in, holds) = if noise_var > 0.0 {
        let report = plug_in_gamma(&fit.estimate, &exp.transform, conv, cfg.j_max, GammaMode::Derived)
            .map_err(|e| format!("replication {index}: plug-in: {e}"))?;
        let plug_in = report
            .blocks
            .iter()
            .map(|b| scale_array(&b.matrix, noise_var))
            .collect();
        let holds = perturbation_bound_holds(exp, conv, &fit.estimate, horizon)
            .map_err(|e| format!("replication {index}: bound: {e}"))?;
        (plug_in, holds)
    } else {
        (vec![[[0.0; 3]; 3]; truth.len()], true)
    };
    Ok(Replication {
        index,
        seed,
        converged: fit.converged,
        iterations: fit.iterations,
        noise_warning: fit.noise_warning,
        errors,
        abs_errors,
        plug_in,
        perturbation_bound_holds: holds,
    })
}

fn perturbation_bound_holds(
    exp: &Experiment,
    conv: &SelfConvolution,
    estimate: &[crate::simulate::Harmonic],
    horizon: f64,
) -> Result<bool> {
    let weights = exp.transform.spectral_weights();
    let m = exp.transform.rank as u32;
    let top = exp.config.j_max.min(weights.len() - 1);
    for (e, t) in estimate.iter().zip(exp.config.model.harmonics()) {
        let bound = conv.perturbation_bound(m, horizon, e.phi, t.phi)?;
        for (j, w) in weights.iter().enumerate().take(top + 1).skip(exp.transform.rank) {
            if *w == 0.0 {
                continue;
            }
            let diff = (conv.eval(j as u32, e.phi)?.value - conv.eval(j as u32, t.phi)?.value).abs();
            if diff > bound {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn scale_array(m: &[[f64; 3]; 3], s: f64) -> [[f64; 3]; 3] {
    m.map(|row| row.map(|v| v * s))
}

fn spectral_norm(m: &Matrix3<f64>) -> f64 {
    m.singular_values().max()
}

/// `|emp - theory| / |theory|` on entries above [`SIGNIFICANCE`] of the norm.
pub fn relative_deviation(empirical: &Matrix3<f64>, theory: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let cut = SIGNIFICANCE * spectral_norm(theory);
    let mut out = [[f64::NAN; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            if theory[(i, j)].abs() > cut {
                out[i][j] = (empirical[(i, j)] - theory[(i, j)]).abs() / theory[(i, j)].abs();
            }
        }
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Sample mean and unbiased covariance of 3-vectors.
pub fn mean_and_covariance(samples: &[[f64; 3]]) -> ([f64; 3], Matrix3<f64>) {
    let n = samples.len() as f64;
    let mut mean = [0.0; 3];
    for s in samples {
        for i in 0..3 {
            mean[i] += s[i] / n;
        }
    }
    let mut cov = Matrix3::zeros();
    for s in samples {
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    (mean, cov / (n - 1.0).max(1.0))
}

fn summarise(
    exp: &Experiment,
    grid: &SamplingGrid,
    outcomes: &[std::result::Result<Replication, String>],
    derived: &GammaReport,
    printed: &GammaReport,
    noise_var: f64,
) -> Result<HorizonSummary> {
    let total = outcomes.len();
    let failures: Vec<String> = outcomes.iter().filter_map(|o| o.as_ref().err().cloned()).collect();
    let done: Vec<&Replication> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let included: Vec<&Replication> = done.iter().copied().filter(|r| r.converged).collect();
    let non_converged = done.len() - included.len();
    let lost = failures.len() + non_converged;
    if lost as f64 > MAX_FAILURE_SHARE * total as f64 {
        return Err(Error::Experiment(format!(
            "T = {}: {} failed and {} non-converged of {} replications (first failure: {})",
            grid.horizon(),
            failures.len(),
            non_converged,
            total,
            failures.first().map(String::as_str).unwrap_or("none")
        )));
    }
    if included.len() < 2 {
        return Err(Error::Experiment(format!(
            "T = {}: fewer than two usable replications",
            grid.horizon()
        )));
    }

    let n_harm = exp.config.model.len();
    let mut pooled: [Vec<f64>; 3] = Default::default();
    for r in &included {
        for e in &r.abs_errors {
            for i in 0..3 {
                pooled[i].push(e[i]);
            }
        }
    }
    let median_abs_error = [median(&mut pooled[0]), median(&mut pooled[1]), median(&mut pooled[2])];

    let z95 = Normal::standard().inverse_cdf(0.975);
    let mut harmonics = Vec::with_capacity(n_harm);
    for k in 0..n_harm {
        let errs: Vec<[f64; 3]> = included.iter().map(|r| r.errors[k]).collect();
        let (mean, cov) = mean_and_covariance(&errs);
        let gd = derived.matrix(k) * noise_var;
        let gp = printed.matrix(k) * noise_var;
        let mut coverage95 = [0.0; 3];
        for i in 0..3 {
            let half = z95 * gd[(i, i)].sqrt();
            coverage95[i] = errs.iter().filter(|e| e[i].abs() <= half).count() as f64 / errs.len() as f64;
        }
        let cut = SIGNIFICANCE * spectral_norm(&gd);
        let mut plug = [[f64::NAN; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                if gd[(i, j)].abs() > cut {
                    let mut devs: Vec<f64> = included
                        .iter()
                        .map(|r| (r.plug_in[k][i][j] - gd[(i, j)]).abs() / gd[(i, j)].abs())
                        .collect();
                    plug[i][j] = median(&mut devs);
                }
            }
        }
        let normality = if errs.len() >= MIN_NORMALITY_SAMPLES && noise_var > 0.0 {
            let rows: Vec<Vec<f64>> = errs.iter().map(|e| e.to_vec()).collect();
            let variances = [gd[(0, 0)], gd[(1, 1)], gd[(2, 2)]];
            normality_diagnostics(&rows, &variances).ok()
        } else {
            None
        };
        harmonics.push(HarmonicSummary {
            harmonic: k,
            mean,
            covariance: to_array(&cov),
            gamma_derived: to_array(&gd),
            gamma_as_printed: to_array(&gp),
            deviation_derived: relative_deviation(&cov, &gd),
            deviation_as_printed: relative_deviation(&cov, &gp),
            coverage95,
            plug_in_median_deviation: plug,
            normality,
        });
    }
    Ok(HorizonSummary {
        horizon: grid.horizon(),
        step: grid.step(),
        replications: total,
        included: included.len(),
        failed: failures.len(),
        non_converged,
        noise_warnings: done.iter().filter(|r| r.noise_warning).count(),
        perturbation_bound_violations: done.iter().filter(|r| !r.perturbation_bound_holds).count(),
        median_abs_error,
        spectral_factor: derived.blocks.iter().map(|b| b.spectral_factor * noise_var).collect(),
        tail_bound: derived.tail_bound * noise_var,
        failures,
        harmonics,
    })
}

/// Medians below this are treated as the numerical floor.
const FLOOR: f64 = 1e-9;

fn fit_slopes(horizons: &[HorizonSummary]) -> Vec<Slope> {
    let names = [("amplitude_A", -0.5), ("amplitude_B", -0.5), ("frequency", -1.5)];
    names
        .iter()
        .enumerate()
        .map(|(i, &(name, expected))| {
            let points: Vec<(f64, f64)> = horizons.iter().map(|h| (h.horizon, h.median_abs_error[i])).collect();
            let floor_limited = points.iter().all(|p| p.1 < FLOOR);
            Slope {
                parameter: name.to_string(),
                slope: if floor_limited {
                    None
                } else {
                    Some(log_log_slope(&points))
                },
                expected,
                floor_limited,
            }
        })
        .collect()
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs the schedule (at least three horizons) and returns the slope table.
pub fn consistency_sweep(exp: &Experiment, workers: usize) -> Result<Vec<Slope>> {
    if exp.grids.len() < 3 {
        return Err(Error::Config(format!(
            "consistency sweep needs three horizons, got {}",
            exp.grids.len()
        )));
    }
    Ok(run_replications(exp, workers)?.slopes)
}

pub const MIN_NORMALITY_SAMPLES: usize = 100;

/// Skewness, excess kurtosis and interval coverage of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentNormality {
    pub skewness: f64,
    pub skewness_se: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_se: f64,
    /// Coverage of the nominal 90, 95 and 99% intervals `+- z sqrt(var)`.
    pub coverage: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalitySummary {
    pub samples: usize,
    pub components: Vec<ComponentNormality>,
}

pub const NOMINAL_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

/// Moment and coverage diagnostics of centred Gaussian-limit samples with the
/// given theoretical variances.
pub fn normality_diagnostics(samples: &[Vec<f64>], variances: &[f64]) -> Result<NormalitySummary> {
    let n = samples.len();
    if n < MIN_NORMALITY_SAMPLES {
        return Err(Error::InsufficientSamples {
            found: n,
            needed: MIN_NORMALITY_SAMPLES,
        });
    }
    let nf = n as f64;
    let normal = Normal::standard();
    let quantiles: Vec<f64> = NOMINAL_LEVELS
        .iter()
        .map(|p| normal.inverse_cdf(0.5 + p / 2.0))
        .collect();
    let mut components = Vec::with_capacity(variances.len());
    for (c, var) in variances.iter().enumerate() {
        let xs: Vec<f64> = samples.iter().map(|s| s[c]).collect();
        let mean = xs.iter().sum::<f64>() / nf;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
        if !(m2 > 0.0) {
            return Err(Error::DegenerateVariance(c));
        }
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
        let sd = var.sqrt();
        let coverage = [0, 1, 2].map(|i| xs.iter().filter(|x| x.abs() <= quantiles[i] * sd).count() as f64 / nf);
        components.push(ComponentNormality {
            skewness: m3 / m2.powf(1.5),
            skewness_se: (6.0 / nf).sqrt(),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
            kurtosis_se: (24.0 / nf).sqrt(),
            coverage,
        });
    }
    Ok(NormalitySummary { samples: n, components })
}

/// Mean `eta^2(T)` over pure-noise replications for each horizon.
pub fn lemma2_decay(
    noise: &NoiseSpec,
    transform: &TransformSpec,
    horizons: &[f64],
    step: f64,
    replications: usize,
    seed: u64,
    workers: usize,
) -> Result<Lemma2Report> {
    if replications < 2 || horizons.is_empty() {
        return Err(Error::Config(
            "lemma2 check needs two replications and one horizon".into(),
        ));
    }
    let pool = pool(workers)?;
    let mut mean_eta2 = Vec::with_capacity(horizons.len());
    for (hi, &horizon) in horizons.iter().enumerate() {
        let grid = SamplingGrid::new(horizon, step)?;
        let empty = HarmonicModel::empty((0.0, grid.nyquist() * 0.5))?;
        let options = ObserveOptions {
            keep_components: false,
            allow_rank_violation: true,
        };
        let generator = PathGenerator::new(&empty, noise, transform, &grid, options)?;
        let base = horizon_seed(seed ^ 0x1E77A, hi);
        let values: Vec<f64> = pool.install(|| {
            (0..replications)
                .into_par_iter()
                .map(|r| {
                    let e = generator.noise(replication_seed(base, r as u64));
                    sup_fourier_modulus(&e, &grid).powi(2)
                })
                .collect()
        });
        mean_eta2.push(values.iter().sum::<f64>() / replications as f64);
    }
    let strictly_decreasing = mean_eta2.windows(2).all(|w| w[1] < w[0]);
    Ok(Lemma2Report {
        horizons: horizons.to_vec(),
        mean_eta2,
        strictly_decreasing,
    })
}

impl MonteCarloReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes `report.toml` and one `samples_T<T>.csv` per horizon.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.toml"), self.to_toml()?)?;
        for (h, reps) in self.horizons.iter().zip(&self.samples) {
            let file = std::fs::File::create(dir.join(format!("samples_T{}.csv", h.horizon)))?;
            write_samples(file, reps)?;
        }
        Ok(())
    }
}

/// CSV of normalized errors: one row per replication and harmonic.
pub fn write_samples<W: Write>(writer: W, reps: &[Replication]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "replication",
        "seed",
        "harmonic",
        "converged",
        "iterations",
        "err_A",
        "err_B",
        "err_phi",
    ])?;
    for r in reps {
        for (k, e) in r.errors.iter().enumerate() {
            w.write_record([
                r.index.to_string(),
                r.seed.to_string(),
                k.to_string(),
                r.converged.to_string(),
                r.iterations.to_string(),
                e[0].to_string(),
                e[1].to_string(),
                e[2].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
