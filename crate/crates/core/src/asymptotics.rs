//! Limit covariance of the normalized estimation errors: self-convolutions of
//! the spectral density, the per-harmonic Gram structure and the `Gamma_k`
//! blocks, the general `Sigma`/`Sigma_0` sandwich, and the plug-in estimate.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cosine::CosineTransform;
use crate::error::{Error, Result};
use crate::quadrature::{tanh_sinh, Estimate, GaussLegendre};
use crate::simulate::Harmonic;
use crate::spectral::{singular_points, NoiseSpec};
use crate::subordination::{factorial, TransformSpec};

/// Largest error estimate accepted from a self-convolution evaluation.
pub const CONVOLUTION_TOL: f64 = 1e-5;
pub const DEFAULT_J_MAX: usize = 20;

/// Memoised `f^(*k)(lambda) = (1/2pi) int B(t)^k cos(lambda t) dt` for one
/// noise specification. Safe to share between threads.
#[derive(Debug)]
pub struct SelfConvolution {
    spec: NoiseSpec,
    transforms: RwLock<HashMap<u32, Arc<CosineTransform>>>,
    memo: RwLock<HashMap<(u32, u64), Estimate>>,
    abs_integrals: RwLock<HashMap<u32, f64>>,
}

impl Clone for SelfConvolution {
    fn clone(&self) -> Self {
        Self::new(self.spec.clone())
    }
}

impl SelfConvolution {
    pub fn new(spec: NoiseSpec) -> Self {
        Self {
            spec,
            transforms: RwLock::default(),
            memo: RwLock::default(),
            abs_integrals: RwLock::default(),
        }
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    fn check_integrable(&self, k: u32) -> Result<()> {
        let product = self.spec.tail_exponent_min() * k as f64;
        if product <= 1.0 {
            return Err(Error::NotIntegrable { product });
        }
        Ok(())
    }

    /// `f^(*k)(lambda)` with its quadrature error estimate.
    pub fn eval(&self, k: u32, lambda: f64) -> Result<Estimate> {
        self.check_integrable(k)?;
        let lambda = lambda.abs();
        let key = (k, lambda.to_bits());
        if let Some(e) = self.memo.read().expect("memo lock").get(&key) {
            return Ok(*e);
        }
        let transform = self.transform(k);
        let e = transform.eval(lambda)?;
        if !(e.error <= CONVOLUTION_TOL) {
            return Err(Error::Quadrature(format!(
                "f^(*{k})({lambda}) error estimate {:e}",
                e.error
            )));
        }
        self.memo.write().expect("memo lock").insert(key, e);
        Ok(e)
    }

    fn transform(&self, k: u32) -> Arc<CosineTransform> {
        if let Some(t) = self.transforms.read().expect("transform lock").get(&k) {
            return t.clone();
        }
        let t = Arc::new(CosineTransform::new(self.spec.clone(), k));
        self.transforms
            .write()
            .expect("transform lock")
            .entry(k)
            .or_insert(t)
            .clone()
    }

    /// `B_m = int_R |B(t)|^m dt`.
    ///
    /// Beyond the quadrature range `|B|` is replaced by its envelope, so the
    /// value is an upper bound (exact when every carrier is zero).
    pub fn abs_power_integral(&self, m: u32) -> Result<f64> {
        self.check_integrable(m)?;
        if let Some(v) = self.abs_integrals.read().expect("integral lock").get(&m) {
            return Ok(*v);
        }
        let spec = &self.spec;
        let split = 64.0;
        let omega = m as f64 * spec.carrier_max();
        let width = 0.25f64.min(PI / (4.0 * omega.max(1e-12)));
        let panels = (split / width).ceil() as usize;
        let gl = GaussLegendre::new(24);
        let body = gl.composite(|t| spec.covariance(t).abs().powi(m as i32), 0.0, split, panels);
        let value = 2.0 * (body + self.envelope_tail(m, split)?);
        self.abs_integrals.write().expect("integral lock").insert(m, value);
        Ok(value)
    }

    /// `int_from^inf env(t)^m dt >= int_from^inf |B(t)|^m dt`.
    pub fn envelope_tail(&self, m: u32, from: f64) -> Result<f64> {
        self.check_integrable(m)?;
        let spec = &self.spec;
        // t = from / u
        let e = tanh_sinh(
            |u: f64| spec.envelope(from / u).powi(m as i32) * from / (u * u),
            0.0,
            1.0,
            1e-12,
        )?;
        Ok(e.value)
    }

    /// The printed bound on `|f^(*j)(phi_hat) - f^(*j)(phi)|`:
    /// `(B_m / 2pi) T |phi_hat - phi| + (2/T) int_T^inf |B|^m`.
    pub fn perturbation_bound(&self, m: u32, horizon: f64, phi_hat: f64, phi: f64) -> Result<f64> {
        Ok(
            self.abs_power_integral(m)? / (2.0 * PI) * horizon * (phi_hat - phi).abs()
                + 2.0 / horizon * self.envelope_tail(m, horizon)?,
        )
    }
}

/// `s = sum_{j=m}^{J} (C_j^2 / j!) f^(*j)(phi)` and its accumulated error.
pub fn spectral_factor(transform: &TransformSpec, conv: &SelfConvolution, phi: f64, j_max: usize) -> Result<Estimate> {
    let weights = transform.spectral_weights();
    let top = j_max.min(weights.len() - 1);
    let mut value = 0.0;
    let mut error = 0.0;
    for (j, w) in weights.iter().enumerate().take(top + 1).skip(transform.rank) {
        if *w == 0.0 {
            continue;
        }
        let e = conv.eval(j as u32, phi)?;
        value += w * e.value;
        error += w * e.error;
    }
    Ok(Estimate { value, error })
}

/// Limit Gram matrix of one harmonic and the scalers mapping the
/// `d_T`-normalization to the `(sqrt T, sqrt T, T^{3/2})` one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramBlock {
    pub matrix: Matrix3<f64>,
    /// `(sqrt(1/2), sqrt(1/2), sqrt((A^2 + B^2)/6))`.
    pub scalers: [f64; 3],
}

/// Unit-diagonal Gram block with `J_13 = sqrt3 B / (2C)`, `J_23 = -sqrt3 A / (2C)`.
pub fn gram_block(a: f64, b: f64) -> Result<GramBlock> {
    let power = a * a + b * b;
    if !(power > 0.0) {
        return Err(Error::InvalidModel("zero-amplitude harmonic".into()));
    }
    let c = power.sqrt();
    let r3 = 3f64.sqrt();
    let j13 = r3 * b / (2.0 * c);
    let j23 = -r3 * a / (2.0 * c);
    let matrix = Matrix3::new(1.0, 0.0, j13, 0.0, 1.0, j23, j13, j23, 1.0);
    Ok(GramBlock {
        matrix,
        scalers: [0.5f64.sqrt(), 0.5f64.sqrt(), (power / 6.0).sqrt()],
    })
}

/// Which closed form of `Gamma_k` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// `D (2 pi s J^{-1}) D`: symmetric positive definite.
    #[default]
    Derived,
    /// `4 pi s / C^2 [[C^2, -3AB, -6B], [-3AB, C^2, 6A], [-6B, 6A, 12]]`, entry for entry.
    AsPrinted,
}

impl fmt::Display for GammaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GammaMode::Derived => "derived",
            GammaMode::AsPrinted => "as-printed",
        })
    }
}

impl FromStr for GammaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "derived" => Ok(GammaMode::Derived),
            "as-printed" => Ok(GammaMode::AsPrinted),
            other => Err(Error::Config(format!("unknown gamma mode `{other}`"))),
        }
    }
}

/// `Gamma_k` for amplitudes `(a, b)` and spectral factor `s`.
pub fn gamma_from_factor(a: f64, b: f64, s: f64, mode: GammaMode) -> Result<Matrix3<f64>> {
    let block = gram_block(a, b)?;
    let power = a * a + b * b;
    match mode {
        GammaMode::Derived => {
            let inverse = block
                .matrix
                .try_inverse()
                .ok_or_else(|| Error::SingularSystem("Gram block is singular".into()))?;
            let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(
                1.0 / block.scalers[0],
                1.0 / block.scalers[1],
                1.0 / block.scalers[2],
            ));
            Ok(d * (inverse * (2.0 * PI * s)) * d)
        }
        GammaMode::AsPrinted => {
            let k = 4.0 * PI * s / power;
            Ok(Matrix3::new(
                power,
                -3.0 * a * b,
                -6.0 * b,
                -3.0 * a * b,
                power,
                6.0 * a,
                -6.0 * b,
                6.0 * a,
                12.0,
            ) * k)
        }
    }
}

/// `Gamma_k` at `(A, B, phi)` with the spectral factor truncated at `j_max`.
pub fn gamma_matrix(
    harmonic: &Harmonic,
    transform: &TransformSpec,
    conv: &SelfConvolution,
    j_max: usize,
    mode: GammaMode,
) -> Result<Matrix3<f64>> {
    if j_max < transform.rank {
        return Err(Error::Config(format!(
            "j_max {j_max} below the Hermite rank {}",
            transform.rank
        )));
    }
    let s = spectral_factor(transform, conv, harmonic.phi, j_max)?;
    gamma_from_factor(harmonic.a, harmonic.b, s.value, mode)
}

/// Point mass of a matrix-valued spectral measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub mass: DMatrix<f64>,
}

/// Atoms at `+-phi_k` carrying half of each harmonic's Gram block.
pub fn trigonometric_measure(harmonics: &[Harmonic]) -> Result<Vec<Atom>> {
    let q = 3 * harmonics.len();
    let mut atoms = Vec::with_capacity(2 * harmonics.len());
    for (k, h) in harmonics.iter().enumerate() {
        let block = gram_block(h.a, h.b)?;
        let mut mass = DMatrix::zeros(q, q);
        mass.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&(block.matrix * 0.5));
        atoms.push(Atom {
            location: -h.phi,
            mass: mass.clone(),
        });
        atoms.push(Atom { location: h.phi, mass });
    }
    Ok(atoms)
}

/// `Sigma = 2 pi sum_k (C_k^2/k!) int f^(*k) dmu` and
/// `Sigma_0 = (int dmu)^{-1} Sigma (int dmu)^{-1}` for an atomic measure.
pub fn sigma_general(
    transform: &TransformSpec,
    conv: &SelfConvolution,
    atoms: &[Atom],
    j_max: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let Some(first) = atoms.first() else {
        return Err(Error::SingularMeasure);
    };
    let q = first.mass.nrows();
    let singular = singular_points(conv.spec());
    let mut sigma = DMatrix::zeros(q, q);
    let mut total = DMatrix::zeros(q, q);
    for atom in atoms {
        if atom.mass.nrows() != q || atom.mass.ncols() != q {
            return Err(Error::Config("atom masses must share one square shape".into()));
        }
        if singular.iter().any(|p| (p.frequency - atom.location).abs() < 1e-9) {
            return Err(Error::SpectralOverlap(atom.location));
        }
        let s = spectral_factor(transform, conv, atom.location, j_max)?;
        sigma += &atom.mass * (2.0 * PI * s.value);
        total += &atom.mass;
    }
    let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let det = total.determinant();
    if scale == 0.0 || det.abs() <= 1e-12 * scale.powi(q as i32) {
        return Err(Error::SingularMeasure);
    }
    let inverse = total.try_inverse().ok_or(Error::SingularMeasure)?;
    let sigma0 = &inverse * &sigma * &inverse;
    Ok((sigma, sigma0))
}

/// Maps the `d_T`-normalized `Sigma_0` of a trigonometric measure to the
/// per-harmonic `Gamma_k` blocks.
pub fn gamma_blocks_from_sigma0(sigma0: &DMatrix<f64>, harmonics: &[Harmonic]) -> Result<Vec<Matrix3<f64>>> {
    harmonics
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let block = gram_block(h.a, h.b)?;
            let sub: Matrix3<f64> = sigma0.fixed_view::<3, 3>(3 * k, 3 * k).into_owned();
            Ok(Matrix3::from_fn(|i, j| {
                sub[(i, j)] / (block.scalers[i] * block.scalers[j])
            }))
        })
        .collect()
}

/// One harmonic's block of a [`GammaReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaBlock {
    #[serde(flatten)]
    pub harmonic: Harmonic,
    pub spectral_factor: f64,
    pub matrix: [[f64; 3]; 3],
    pub eigenvalues: [f64; 3],
}

/// `Gamma_k` for every harmonic together with truncation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub mode: GammaMode,
    pub j_max: usize,
    pub rank: usize,
    /// `(1/2pi) B_m sum_{j > J} C_j^2 / j!`, bounding the omitted part of `s`.
    pub tail_bound: f64,
    /// Sum of quadrature error estimates over all blocks.
    pub quadrature_error: f64,
    #[serde(rename = "block")]
    pub blocks: Vec<GammaBlock>,
}

impl GammaReport {
    pub fn matrix(&self, k: usize) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.blocks[k].matrix[i][j])
    }

    /// One row per harmonic: parameters, spectral factor and the nine entries.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "harmonic".to_string(),
            "A".into(),
            "B".into(),
            "phi".into(),
            "spectral_factor".into(),
        ];
        header.extend((1..=3).flat_map(|i| (1..=3).map(move |j| format!("g{i}{j}"))));
        w.write_record(&header)?;
        for (k, b) in self.blocks.iter().enumerate() {
            let mut row = vec![k.to_string(), b.harmonic.a.to_string(), b.harmonic.b.to_string()];
            row.push(b.harmonic.phi.to_string());
            row.push(b.spectral_factor.to_string());
            row.extend(b.matrix.iter().flatten().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn to_array(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Ascending eigenvalues of a symmetric 3x3 matrix.
pub fn eigenvalues(m: &Matrix3<f64>) -> [f64; 3] {
    let mut e: Vec<f64> = SymmetricEigen::new(*m).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    [e[0], e[1], e[2]]
}

/// `Gamma_k` evaluated at the supplied (estimated or true) parameters.
pub fn plug_in_gamma(
    harmonics: &[Harmonic],
    transform: &TransformSpec,
    conv: &SelfConvolution,
    j_max: usize,
    mode: GammaMode,
) -> Result<GammaReport> {
    if j_max < transform.rank {
        return Err(Error::Config(format!(
            "j_max {j_max} below the Hermite rank {}",
            transform.rank
        )));
    }
    let top = j_max.min(transform.k_max);
    let kept: f64 = transform
        .coefficients
        .iter()
        .enumerate()
        .take(top + 1)
        .skip(1)
        .map(|(k, c)| c * c / factorial(k))
        .sum();
    let omitted = (transform.second_moment - kept).max(0.0);
    let tail_bound = if omitted > 0.0 {
        conv.abs_power_integral(transform.rank as u32)? / (2.0 * PI) * omitted
    } else {
        0.0
    };
    let mut blocks = Vec::with_capacity(harmonics.len());
    let mut quadrature_error = 0.0;
    for h in harmonics {
        let s = spectral_factor(transform, conv, h.phi, j_max)?;
        let m = gamma_from_factor(h.a, h.b, s.value, mode)?;
        quadrature_error += s.error;
        blocks.push(GammaBlock {
            harmonic: *h,
            spectral_factor: s.value,
            matrix: to_array(&m),
            eigenvalues: eigenvalues(&m),
        });
    }
    Ok(GammaReport {
        mode,
        j_max,
        rank: transform.rank,
        tail_bound,
        quadrature_error,
        blocks,
    })
}
