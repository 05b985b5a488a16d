//! srforge: a from-scratch super-resolution toolkit.
//!
//! The crate builds and trains two model families on the CPU — a grouped-
//! convolution residual CNN (VDSR-ResNeXt) for natural-image upscaling and a
//! label-conditioned GAN (SRCGAN) for MNIST digit upscaling — together with
//! the data pipeline (color conversion, bicubic resampling, patch extraction,
//! IDX ingestion) and PSNR/SSIM evaluation used to score them.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};

/// Pin the global worker pool to `n` threads. Call once, before any kernel
/// runs. Returns an error if a pool was already installed.
pub fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}
