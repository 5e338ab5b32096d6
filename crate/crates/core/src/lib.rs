//! QSM dipole-inversion toolkit.
//!
//! The crate covers the full synthetic pipeline: susceptibility phantoms, the
//! Fourier-domain dipole forward model, classical inversions (TKD, Tikhonov,
//! COSMOS), patch-based 3-D U-Net training with an optional WGAN-GP
//! refinement phase, and the usual reconstruction quality metrics.
//!
//! All numeric code is generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); the physics pipelines and the CLI run in `f64`.
//! Concrete aliases for both precisions live at the crate root.

pub mod dipole;
pub mod error;
pub mod gan;
pub mod inversion;
pub mod metrics;
pub mod nn;
pub mod patching;
pub mod phantom;
pub mod qvol;
pub mod scalar;
pub mod transform;
pub mod volume;

pub use error::{Error, Result};

/// `f64` volume, the working type of the physics pipelines.
pub type VolumeF64 = volume::Volume<f64>;
/// `f32` volume.
pub type VolumeF32 = volume::Volume<f32>;
/// `f64` k-space spectrum.
pub type SpectrumF64 = volume::Spectrum<f64>;
/// `f32` k-space spectrum.
pub type SpectrumF32 = volume::Spectrum<f32>;
/// `f64` dipole kernel.
pub type DipoleKernelF64 = dipole::DipoleKernel<f64>;
/// `f32` dipole kernel.
pub type DipoleKernelF32 = dipole::DipoleKernel<f32>;
/// `f64` NN tensor (batch, channels, x, y, z).
pub type TensorF64 = nn::Tensor<f64>;
/// `f32` NN tensor.
pub type TensorF32 = nn::Tensor<f32>;
