//! Test-time inference: denoising and per-pixel noise estimation.

use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::noise::VarianceMap;
use crate::tensor::ImageTensor;

/// Denoise an image: the posterior mean `mu`, clamped to `[0, 1]`.
/// Arbitrary sizes are handled by the network's internal padding.
pub fn denoise(y: &ImageTensor, ckpt: &Checkpoint) -> Result<ImageTensor> {
    let (mu, _) = ckpt.dnet.forward(&y.data)?;
    Ok(ImageTensor { data: mu }.clamp01())
}

/// Estimate the per-pixel noise standard deviation via the mode of the
/// inferred inverse-Gamma posterior: `sigma_i^2 = beta_i / (alpha_i + 1)`.
pub fn estimate_sigma_map(y: &ImageTensor, ckpt: &Checkpoint) -> Result<VarianceMap> {
    let (alpha, beta) = ckpt.snet.forward(&y.data)?;
    let mut m = beta;
    m.zip_mut_with(&alpha, |b, &a| *b = (*b / (a + 1.0)).max(0.0).sqrt());
    VarianceMap::new(ImageTensor { data: m })
}
