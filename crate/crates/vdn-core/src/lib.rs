//! Blind image denoising with per-pixel noise estimation.
//!
//! A noisy image is modelled pixel-wise as a Gaussian whose mean is the latent
//! clean image and whose variance is a latent per-pixel noise level. Two small
//! convolutional networks amortize the variational posterior over both latents:
//! the denoising network predicts the Gaussian posterior of the clean image,
//! the sigma network predicts the inverse-Gamma posterior of the noise
//! variance. Training maximizes a fully closed-form evidence lower bound, so
//! no sampling is needed in the loss.
//!
//! The crate is organized around that pipeline:
//!
//! - [`tensor`], [`vdna`], [`image_io`], [`dataset`]: tensor container, the
//!   portable binary array format, PNG I/O, and training-pair assembly.
//! - [`noise`]: spatially variant variance maps and synthetic noise.
//! - [`prior`]: the filtered residual-variance field and the prior parameters
//!   derived from it.
//! - [`objective`] and [`mc`]: the closed-form bound, its analytic gradients,
//!   and independent Monte-Carlo estimates used for auditing.
//! - [`nn`]: the two networks with hand-rolled forward/backward passes.
//! - [`train`], [`checkpoint`], [`infer`]: optimization loop, checkpointing,
//!   and test-time denoising / noise estimation.
//! - [`metrics`] and [`experiment`]: PSNR/SSIM, variance-map scoring, and the
//!   desk-scale experiment harness.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod image_io;
pub mod infer;
pub mod mc;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod objective;
pub mod prior;
pub mod seed;
pub mod special;
pub mod tensor;
pub mod train;
pub mod vdna;

pub use error::{Error, Result};
pub use tensor::ImageTensor;
