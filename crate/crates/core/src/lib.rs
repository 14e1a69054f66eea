//! Toolkit for benchmarking image watermark removal on three axes: whether the
//! watermark survives, what the removal costs in quality, and whether the removal
//! itself is forensically detectable.

pub mod attacks;
pub mod detector;
pub mod digest;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod scalar;
pub mod stats;
pub mod verify;
pub mod watermark;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision image, the default pixel currency of the pipelines.
pub type Image = imaging::Image<f64>;
pub type Spectrum = imaging::Spectrum<f64>;
pub type EmbedResult = watermark::EmbedResult<f64>;
pub type RhoValue = stats::RhoValue<f64>;
pub type ResidualDiagnostics = attacks::ResidualDiagnostics<f64>;

/// Single-precision variants, for memory-bound batch work.
pub type ImageF32 = imaging::Image<f32>;
pub type SpectrumF32 = imaging::Spectrum<f32>;
