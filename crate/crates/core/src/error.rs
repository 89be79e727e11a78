use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by the stage that produces them; the CLI maps
/// [`Error::is_validation`] to its validation exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("spectral density is singular at frequency {frequency} (alpha = {alpha})")]
    Singularity { frequency: f64, alpha: f64 },
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("transform has nonzero mean: C_0 = {0:e}")]
    NonzeroMean(f64),
    #[error("degenerate transform: every Hermite coefficient is below tolerance")]
    DegenerateTransform,
    #[error("order {order} exceeds the supported maximum {max}")]
    OrderOverflow { order: usize, max: usize },
    #[error("diagram enumeration limit exceeded: {total} vertices (max {max})")]
    SizeLimit { total: usize, max: usize },
    #[error("inconsistent level multiplicities: {0}")]
    Multiplicity(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid harmonic model: {0}")]
    InvalidModel(String),
    #[error("frequency {frequency} violates the Nyquist bound {nyquist}")]
    Nyquist { frequency: f64, nyquist: f64 },
    #[error("circulant embedding failed: minimum eigenvalue {min_eigenvalue:e} at size {size}")]
    Embedding { min_eigenvalue: f64, size: usize },
    #[error("condition A4 violated: alpha_min * m = {product} <= 1")]
    RankCondition { product: f64 },
    #[error("frequency {0} outside the admissible band")]
    OutOfBand(f64),
    #[error("only {found} of {requested} admissible periodogram peaks found")]
    InsufficientPeaks { found: usize, requested: usize },
    #[error("singular normal equations: {0}")]
    SingularSystem(String),
    #[error("not integrable: alpha_min * k = {product} <= 1")]
    NotIntegrable { product: f64 },
    #[error("atom at {0} coincides with a noise singular point")]
    SpectralOverlap(f64),
    #[error("spectral measure has singular total mass")]
    SingularMeasure,
    #[error("insufficient samples: {found} (need {needed})")]
    InsufficientSamples { found: usize, needed: usize },
    #[error("degenerate sample variance in component {0}")]
    DegenerateVariance(usize),
    #[error("experiment failed: {0}")]
    Experiment(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Experiment(_) | Error::Io(_) | Error::Embedding { .. } | Error::Quadrature(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
