//! Spectral analysis of multispectral optoacoustic image stacks.
//!
//! Pixel spectra are factorized by regularized non-negative matrix
//! factorization, the resulting coefficients are modeled as a zero-inflated
//! Box-Cox normal per component, and components are compared through
//! co-occurrence (Dice) and continuous (Pearson) matrices. Pixels are further
//! grouped by which components are present, and those mixture classes are
//! clustered with Ward linkage to give per-region spectral fingerprints.
//!
//! Numerical code is generic over [`scalar::Scalar`]; the aliases below fix
//! the scalar to `f64`, with `f32` variants for memory-bound inputs.

pub mod clustering;
pub mod io;
pub mod library;
pub mod metrics;
pub mod phantom;
pub mod probmodel;
pub mod reference;
pub mod scalar;
pub mod spectra;
pub mod stack;
pub mod unmixing;

pub use scalar::Scalar;

pub type Spectrum = spectra::Spectrum<f64>;
pub type ChromophoreLibrary = library::ChromophoreLibrary<f64>;
pub type MultispectralStack = stack::MultispectralStack<f64>;
pub type MultispectralStackF32 = stack::MultispectralStack<f32>;
pub type GroundTruth = phantom::GroundTruth<f64>;
pub type UnmixingResult = unmixing::UnmixingResult<f64>;
pub type UnmixingResultF32 = unmixing::UnmixingResult<f32>;
pub type ComponentModel = probmodel::ComponentModel<f64>;
pub type StandardizedCoefficients = probmodel::StandardizedCoefficients<f64>;
pub type MetricMatrix = metrics::MetricMatrix<f64>;
pub type CorrelationMatrices = metrics::CorrelationMatrices<f64>;
pub type MixtureTree = clustering::MixtureTree<f64>;
pub type SpectralFingerprint = clustering::SpectralFingerprint<f64>;
