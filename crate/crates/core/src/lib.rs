pub mod asymptotics;
pub mod cosine;
pub mod diagrams;
pub mod error;
pub mod estimator;
pub mod fourier;
pub mod harness;
pub mod quadrature;
pub mod simulate;
pub mod spectral;
pub mod subordination;

pub use error::{Error, Result};
