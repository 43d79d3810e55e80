//! Acoustic echo control toolkit: STFT front-end, echo synthesis, a small
//! autodiff engine, masking networks, training and evaluation.

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;
pub mod scalar;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Spectrum = dsp::SpectralSequence<f64>;
pub type Spectrum32 = dsp::SpectralSequence<f32>;
