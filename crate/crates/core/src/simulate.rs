//! Sample paths `x(t) = g(t, theta) + G(xi(t))` on a uniform grid.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier;
use crate::spectral::NoiseSpec;
use crate::subordination::TransformSpec;

/// Uniform sampling grid `t_i = origin + i * step`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    horizon: f64,
    step: f64,
    count: usize,
    #[serde(default)]
    origin: f64,
}

impl SamplingGrid {
    pub fn new(horizon: f64, step: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "horizon {horizon} and step {step} must be positive"
            )));
        }
        let count = (horizon / step).round() as usize;
        if count < 2 {
            return Err(Error::InvalidGrid(format!(
                "horizon {horizon} holds fewer than two steps of {step}"
            )));
        }
        if (count as f64 * step - horizon).abs() > 1e-12 * horizon.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon {horizon} is not a multiple of step {step}"
            )));
        }
        Ok(Self {
            horizon,
            step,
            count,
            origin: 0.0,
        })
    }

    /// Same grid shifted to start at `origin`.
    pub fn with_origin(mut self, origin: f64) -> Self {
        self.origin = origin;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn nyquist(&self) -> f64 {
        PI / self.step
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.time(i))
    }
}

/// One term `A cos(phi t) + B sin(phi t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub phi: f64,
}

impl Harmonic {
    pub fn new(a: f64, b: f64, phi: f64) -> Self {
        Self { a, b, phi }
    }

    /// `A^2 + B^2`.
    pub fn power(&self) -> f64 {
        self.a * self.a + self.b * self.b
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let (s, c) = (self.phi * t).sin_cos();
        self.a * c + self.b * s
    }
}

/// Harmonic parameters together with the admissible frequency band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct HarmonicModel {
    harmonics: Vec<Harmonic>,
    band: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    band: [f64; 2],
    #[serde(default, rename = "harmonic")]
    harmonics: Vec<Harmonic>,
}

impl TryFrom<RawModel> for HarmonicModel {
    type Error = Error;
    fn try_from(raw: RawModel) -> Result<Self> {
        HarmonicModel::new(raw.harmonics, (raw.band[0], raw.band[1]))
    }
}

impl From<HarmonicModel> for RawModel {
    fn from(m: HarmonicModel) -> Self {
        RawModel {
            band: [m.band.0, m.band.1],
            harmonics: m.harmonics,
        }
    }
}

impl HarmonicModel {
    pub fn new(harmonics: Vec<Harmonic>, band: (f64, f64)) -> Result<Self> {
        let (lo, hi) = band;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "band ({lo}, {hi}) is not an interval in [0, inf)"
            )));
        }
        for h in &harmonics {
            if !(h.power() > 0.0) {
                return Err(Error::InvalidModel(format!("harmonic at {} has zero amplitude", h.phi)));
            }
            if !(h.phi > lo && h.phi < hi) {
                return Err(Error::OutOfBand(h.phi));
            }
        }
        if harmonics.windows(2).any(|w| w[1].phi <= w[0].phi) {
            return Err(Error::InvalidModel("frequencies must be strictly increasing".into()));
        }
        Ok(Self { harmonics, band })
    }

    /// A model with no harmonics: the observations are pure noise.
    pub fn empty(band: (f64, f64)) -> Result<Self> {
        Self::new(Vec::new(), band)
    }

    pub fn harmonics(&self) -> &[Harmonic] {
        &self.harmonics
    }

    pub fn len(&self) -> usize {
        self.harmonics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.harmonics.is_empty()
    }

    pub fn band(&self) -> (f64, f64) {
        self.band
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.harmonics.iter().map(|h| h.eval(t)).sum()
    }

    pub fn check_nyquist(&self, grid: &SamplingGrid) -> Result<()> {
        if self.band.1 >= grid.nyquist() {
            return Err(Error::Nyquist {
                frequency: self.band.1,
                nyquist: grid.nyquist(),
            });
        }
        Ok(())
    }
}

/// Observed values on a grid, optionally with the signal and noise parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub grid: SamplingGrid,
    pub values: Vec<f64>,
    pub signal: Option<Vec<f64>>,
    pub noise: Option<Vec<f64>>,
}

impl SamplePath {
    pub fn new(grid: SamplingGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.count() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a grid of {}",
                values.len(),
                grid.count()
            )));
        }
        Ok(Self {
            grid,
            values,
            signal: None,
            noise: None,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let full = self.signal.is_some() && self.noise.is_some();
        if full {
            w.write_record(["t", "x", "signal", "noise"])?;
        } else {
            w.write_record(["t", "x"])?;
        }
        for (i, x) in self.values.iter().enumerate() {
            let t = self.grid.time(i).to_string();
            match (&self.signal, &self.noise) {
                (Some(s), Some(e)) if full => w.write_record([t, x.to_string(), s[i].to_string(), e[i].to_string()])?,
                _ => w.write_record([t, x.to_string()])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers()?.clone();
        let column = |name: &str| headers.iter().position(|h| h == name);
        let (ti, xi) = match (column("t"), column("x")) {
            (Some(t), Some(x)) => (t, x),
            _ => return Err(Error::Config("path CSV needs `t` and `x` columns".into())),
        };
        let (si, ni) = (column("signal"), column("noise"));
        let mut t = Vec::new();
        let mut x = Vec::new();
        let mut s = Vec::new();
        let mut e = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let get = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Config(format!("row {}: unparsable value", row + 2)))
            };
            t.push(get(ti)?);
            x.push(get(xi)?);
            if let (Some(si), Some(ni)) = (si, ni) {
                s.push(get(si)?);
                e.push(get(ni)?);
            }
        }
        if t.len() < 2 {
            return Err(Error::InvalidGrid("path needs at least two rows".into()));
        }
        let step = t[1] - t[0];
        for (i, ti) in t.iter().enumerate() {
            let expected = t[0] + i as f64 * step;
            if (ti - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(Error::InvalidGrid(format!("non-uniform sampling at row {}", i + 2)));
            }
        }
        let grid = SamplingGrid::new(step * t.len() as f64, step)?.with_origin(t[0]);
        let mut path = SamplePath::new(grid, x)?;
        if si.is_some() && ni.is_some() {
            path.signal = Some(s);
            path.noise = Some(e);
        }
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Seed of replication `index` derived from a master seed (SplitMix64 finaliser
/// over the pair), independent of how replications are scheduled.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const EMBEDDING_TOL: f64 = 1e-8;
const MAX_PADDING: usize = 16;

/// Circulant-embedding sampler for a fixed `(spec, grid)`.
///
/// Building it costs one FFT of the embedding size; each draw costs one more.
#[derive(Clone)]
pub struct CirculantSampler {
    count: usize,
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantSampler")
            .field("count", &self.count)
            .field("size", &self.scale.len())
            .finish()
    }
}

impl CirculantSampler {
    pub fn new(spec: &NoiseSpec, grid: &SamplingGrid) -> Result<Self> {
        let n = grid.count();
        let base = (2 * (n - 1)).max(2).next_power_of_two();
        let mut planner = FftPlanner::new();
        let mut size = base;
        let mut worst = 0.0;
        while size <= base * MAX_PADDING {
            let half = size / 2;
            let mut row: Vec<Complex64> = (0..size)
                .map(|k| {
                    let lag = if k <= half { k } else { size - k };
                    Complex64::new(spec.covariance(lag as f64 * grid.step()), 0.0)
                })
                .collect();
            let fft = planner.plan_fft_forward(size);
            fft.process(&mut row);
            let min = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
            if min >= -EMBEDDING_TOL {
                if min < 0.0 {
                    log::warn!("clamping circulant eigenvalues down to {min:e} at embedding size {size}");
                }
                let m = size as f64;
                let scale = row.iter().map(|c| (c.re.max(0.0) / m).sqrt()).collect();
                return Ok(Self { count: n, scale, fft });
            }
            worst = min;
            size *= 2;
        }
        Err(Error::Embedding {
            min_eigenvalue: worst,
            size: size / 2,
        })
    }

    pub fn embedding_size(&self) -> usize {
        self.scale.len()
    }

    /// One stationary Gaussian path of length `count`.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut buf: Vec<Complex64> = self
            .scale
            .iter()
            .map(|s| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(s * re, s * im)
            })
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(self.count);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// Samples of the Gaussian process `xi` on `grid`, deterministic per seed.
pub fn gaussian_path(spec: &NoiseSpec, grid: &SamplingGrid, seed: u64) -> Result<Vec<f64>> {
    let sampler = CirculantSampler::new(spec, grid)?;
    Ok(sampler.sample(&mut ChaCha12Rng::seed_from_u64(seed)))
}

/// Pointwise `G(xi)`.
pub fn subordinate(xi: &[f64], transform: &TransformSpec) -> Vec<f64> {
    xi.iter().map(|&x| transform.eval(x)).collect()
}

/// `g(t_i, theta)` on the grid.
pub fn regression_signal(model: &HarmonicModel, grid: &SamplingGrid) -> Result<Vec<f64>> {
    model.check_nyquist(grid)?;
    Ok(grid.times().map(|t| model.eval(t)).collect())
}

/// Options for [`observe`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ObserveOptions {
    /// Keep the signal and noise parts in the returned path.
    pub keep_components: bool,
    /// Downgrade a violated `alpha_min * m > 1` condition to a warning.
    pub allow_rank_violation: bool,
}

/// Checks `alpha_min * m > 1`; with `allow` set only logs a warning.
pub fn check_rank_condition(spec: &NoiseSpec, transform: &TransformSpec, allow: bool) -> Result<()> {
    let product = spec.alpha_min() * transform.rank as f64;
    if product <= 1.0 {
        if !allow {
            return Err(Error::RankCondition { product });
        }
        log::warn!("alpha_min * m = {product} <= 1; the Gaussian limit theory does not apply");
    }
    Ok(())
}

/// Reusable generator of observed paths for fixed model, noise and grid.
#[derive(Debug, Clone)]
pub struct PathGenerator {
    grid: SamplingGrid,
    signal: Vec<f64>,
    transform: TransformSpec,
    sampler: CirculantSampler,
    keep_components: bool,
    scale: f64,
}

impl PathGenerator {
    pub fn new(
        model: &HarmonicModel,
        spec: &NoiseSpec,
        transform: &TransformSpec,
        grid: &SamplingGrid,
        options: ObserveOptions,
    ) -> Result<Self> {
        check_rank_condition(spec, transform, options.allow_rank_violation)?;
        let signal = regression_signal(model, grid)?;
        let sampler = CirculantSampler::new(spec, grid)?;
        Ok(Self {
            grid: *grid,
            signal,
            transform: transform.clone(),
            sampler,
            keep_components: options.keep_components,
            scale: 1.0,
        })
    }

    /// Multiplies the noise by `scale`; 0 gives noiseless observations.
    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn noise(&self, seed: u64) -> Vec<f64> {
        let xi = self.sampler.sample(&mut ChaCha12Rng::seed_from_u64(seed));
        let mut e = subordinate(&xi, &self.transform);
        if self.scale != 1.0 {
            e.iter_mut().for_each(|v| *v *= self.scale);
        }
        e
    }

    pub fn observe(&self, seed: u64) -> SamplePath {
        let noise = self.noise(seed);
        let values = self.signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
        SamplePath {
            grid: self.grid,
            values,
            signal: self.keep_components.then(|| self.signal.clone()),
            noise: self.keep_components.then_some(noise),
        }
    }
}

/// `x = g + G(xi)` on `grid` for one seed.
pub fn observe(
    model: &HarmonicModel,
    spec: &NoiseSpec,
    transform: &TransformSpec,
    grid: &SamplingGrid,
    seed: u64,
    options: ObserveOptions,
) -> Result<SamplePath> {
    Ok(PathGenerator::new(model, spec, transform, grid, options)?.observe(seed))
}

/// `eta(T) = sup_lambda (1/T) |sum_i x_i exp(-i lambda t_i) Delta|` over a
/// four-times oversampled frequency grid on `[0, pi/Delta]`.
pub fn sup_fourier_modulus(values: &[f64], grid: &SamplingGrid) -> f64 {
    let sums = fourier::padded_sums(values, 4 * values.len());
    let peak = sums.iter().map(|c| c.norm()).fold(0.0, f64::max);
    peak * grid.step() / grid.horizon()
}

/// Sample autocovariances at lags `0..=max_lag` (mean assumed zero).
pub fn sample_autocovariance(values: &[f64], max_lag: usize) -> Vec<f64> {
    let n = values.len();
    (0..=max_lag.min(n - 1))
        .map(|k| {
            values[..n - k]
                .iter()
                .zip(&values[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / (n - k) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> SamplingGrid {
        SamplingGrid::new(256.0, 0.25).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert_eq!(grid().count(), 1024);
        assert!(SamplingGrid::new(10.1, 0.25).is_err());
        assert!(SamplingGrid::new(-1.0, 0.25).is_err());
        assert_relative_eq!(grid().nyquist(), 4.0 * PI);
    }

    #[test]
    fn model_validation() {
        assert!(HarmonicModel::new(vec![Harmonic::new(1.0, 0.0, 0.0)], (0.0, 3.0)).is_err());
        assert!(HarmonicModel::new(vec![Harmonic::new(0.0, 0.0, 1.0)], (0.1, 3.0)).is_err());
        let two = vec![Harmonic::new(1.0, 0.0, 2.0), Harmonic::new(1.0, 0.0, 1.0)];
        assert!(HarmonicModel::new(two, (0.1, 3.0)).is_err());
        let m = HarmonicModel::new(vec![Harmonic::new(1.0, 0.0, 1.0)], (0.1, 5.0)).unwrap();
        let coarse = SamplingGrid::new(100.0, 1.0).unwrap();
        assert!(matches!(regression_signal(&m, &coarse), Err(Error::Nyquist { .. })));
    }

    #[test]
    fn signal_values() {
        let m = HarmonicModel::new(vec![Harmonic::new(0.0, 1.0, PI / 2.0)], (0.1, 3.0)).unwrap();
        let g = SamplingGrid::new(4.0, 0.5).unwrap();
        let s = regression_signal(&m, &g).unwrap();
        assert_relative_eq!(s[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn signal_mean_decays() {
        // (1/T) int_0^T cos(phi t) dt = sin(phi T) / (phi T)
        let m = HarmonicModel::new(vec![Harmonic::new(1.0, 0.0, 1.3)], (0.1, 3.0)).unwrap();
        for horizon in [256.0, 4096.0] {
            let g = SamplingGrid::new(horizon, 0.25).unwrap();
            let s = regression_signal(&m, &g).unwrap();
            let mean = s.iter().sum::<f64>() * g.step() / horizon;
            assert!(mean.abs() <= 1.0 / (1.3 * horizon) + 0.25 / horizon);
        }
    }

    #[test]
    fn gaussian_path_is_deterministic() {
        let spec = NoiseSpec::single(1.5, 0.0).unwrap();
        let a = gaussian_path(&spec, &grid(), 7).unwrap();
        let b = gaussian_path(&spec, &grid(), 7).unwrap();
        let c = gaussian_path(&spec, &grid(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_subordination_is_noop() {
        let xi = vec![0.3, -1.2, 2.0];
        assert_eq!(subordinate(&xi, &TransformSpec::identity()), xi);
    }

    #[test]
    fn zero_amplitude_model_gives_noise() {
        let spec = NoiseSpec::single(1.5, 0.0).unwrap();
        let model = HarmonicModel::empty((0.1, 3.0)).unwrap();
        let t = TransformSpec::identity();
        let opts = ObserveOptions {
            keep_components: true,
            ..Default::default()
        };
        let p = observe(&model, &spec, &t, &grid(), 3, opts).unwrap();
        assert_eq!(Some(p.values.clone()), p.noise);
        assert_eq!(p.values, gaussian_path(&spec, &grid(), 3).unwrap());
    }

    #[test]
    fn rank_condition_enforced() {
        let spec = NoiseSpec::single(0.4, 0.0).unwrap();
        let model = HarmonicModel::empty((0.1, 3.0)).unwrap();
        let t = TransformSpec::second_hermite();
        let r = observe(&model, &spec, &t, &grid(), 1, ObserveOptions::default());
        assert!(matches!(r, Err(Error::RankCondition { .. })));
        let opts = ObserveOptions {
            allow_rank_violation: true,
            ..Default::default()
        };
        assert!(observe(&model, &spec, &t, &grid(), 1, opts).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let spec = NoiseSpec::single(1.5, 0.0).unwrap();
        let model = HarmonicModel::new(vec![Harmonic::new(1.0, 0.5, 1.3)], (0.1, 3.0)).unwrap();
        let g = SamplingGrid::new(16.0, 0.25).unwrap().with_origin(2.0);
        let opts = ObserveOptions {
            keep_components: true,
            ..Default::default()
        };
        let p = observe(&model, &spec, &TransformSpec::identity(), &g, 11, opts).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,x,signal,noise\n"));
        let q = SamplePath::read_csv(buf.as_slice()).unwrap();
        assert_eq!(q.values, p.values);
        assert_eq!(q.signal, p.signal);
        assert_eq!(q.grid.count(), p.grid.count());
        assert_relative_eq!(q.grid.origin(), 2.0);
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|r| replication_seed(42, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(replication_seed(1, 0), replication_seed(2, 0));
    }
}
