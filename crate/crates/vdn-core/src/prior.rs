//! Prior hyperparameters for the latent clean image and the noise variances.
//!
//! The clean-image prior is a Gaussian centered on the reference image with
//! fixed variance `epsilon0_sq`. The variance prior is an inverse-Gamma with
//! shape `p^2/2 - 1` and scale `p^2 xi_i / 2`, where `xi` is the squared
//! residual `(y - x)^2` smoothed by a normalized Gaussian over a `p x p`
//! window. That parameterization puts the prior mode exactly at `xi_i`, a
//! local estimate of the noise variance.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::filter::filter_gaussian_2d;
use crate::tensor::ImageTensor;

/// Default clean-image prior variance for synthetic-noise training.
pub const SYNTHETIC_EPSILON0_SQ: f64 = 5e-5;
/// Default clean-image prior variance for real-noise training.
pub const REAL_EPSILON0_SQ: f64 = 1e-6;
/// Default filter window.
pub const DEFAULT_P: usize = 7;
/// Floor for the filtered residual variance; the bound takes `log xi`, which
/// is undefined at exactly-zero residuals.
pub const DEFAULT_XI_FLOOR: f64 = 1e-8;

/// Prior hyperparameters for one image: the scalars and the filtered
/// residual-variance field.
#[derive(Clone, Debug)]
pub struct PriorSpec {
    pub epsilon0_sq: f64,
    pub p: usize,
    pub xi: Array3<f64>,
    pub xi_floor: f64,
}

impl PriorSpec {
    pub fn new(epsilon0_sq: f64, p: usize, xi: Array3<f64>, xi_floor: f64) -> Result<Self> {
        if !(epsilon0_sq > 0.0) {
            return Err(Error::InvalidParam(format!(
                "epsilon0_sq must be > 0, got {epsilon0_sq}"
            )));
        }
        validate_window(p)?;
        if !(xi_floor > 0.0) {
            return Err(Error::InvalidParam(format!(
                "xi_floor must be > 0, got {xi_floor}"
            )));
        }
        if xi.iter().any(|&v| !(v >= xi_floor)) {
            return Err(Error::InvalidParam(
                "every xi entry must be >= xi_floor".into(),
            ));
        }
        Ok(Self {
            epsilon0_sq,
            p,
            xi,
            xi_floor,
        })
    }

    /// Build the full prior for a training pair.
    pub fn from_pair(
        noisy: &ImageTensor,
        clean: &ImageTensor,
        epsilon0_sq: f64,
        p: usize,
        xi_floor: f64,
    ) -> Result<Self> {
        let xi = compute_xi(noisy, clean, p, xi_floor)?;
        Self::new(epsilon0_sq, p, xi, xi_floor)
    }

    /// Shape parameter of the variance prior, `p^2/2 - 1`.
    pub fn alpha0(&self) -> f64 {
        (self.p * self.p) as f64 / 2.0 - 1.0
    }
}

fn validate_window(p: usize) -> Result<()> {
    if p < 3 || p % 2 == 0 {
        return Err(Error::InvalidParam(format!(
            "window p must be odd and >= 3, got {p}"
        )));
    }
    Ok(())
}

/// Gaussian-filter the squared residual `(y - x)^2` over a `p x p` window.
///
/// Weights are normalized to sum to 1, so xi is a local weighted mean of the
/// squared residual: a constant residual `c` maps to `c^2` everywhere. The
/// filter bandwidth is `p/6`, covering +-3 standard deviations inside the
/// window; borders are reflect-padded. The result is floored at `xi_floor`.
pub fn compute_xi(
    noisy: &ImageTensor,
    clean: &ImageTensor,
    p: usize,
    xi_floor: f64,
) -> Result<Array3<f64>> {
    noisy.require_same_shape(clean, "compute_xi")?;
    validate_window(p)?;
    let (c, h, w) = noisy.shape();
    let sigma = p as f64 / 6.0;

    let mut xi = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        let mut sq = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let r = noisy[(ch, y, x)] as f64 - clean[(ch, y, x)] as f64;
                sq[(y, x)] = r * r;
            }
        }
        let filtered = filter_gaussian_2d(&sq, p, sigma);
        for y in 0..h {
            for x in 0..w {
                xi[(ch, y, x)] = filtered[(y, x)].max(xi_floor);
            }
        }
    }
    Ok(xi)
}

/// The inverse-Gamma prior parameters: `alpha0 = p^2/2 - 1` broadcast, and
/// `beta0_i = p^2 xi_i / 2` per pixel. The prior mode `beta0 / (alpha0 + 1)`
/// recovers `xi` exactly.
pub fn prior_sigma_params(spec: &PriorSpec) -> (f64, Array3<f64>) {
    let p_sq = (spec.p * spec.p) as f64;
    let beta0 = spec.xi.mapv(|xi| p_sq * xi / 2.0);
    (spec.alpha0(), beta0)
}

/// Persist a precomputed xi field in the portable array format (stored as
/// f32, like every array file).
pub fn save_xi(xi: &Array3<f64>, path: &std::path::Path) -> Result<()> {
    let (c, h, w) = xi.dim();
    crate::vdna::write_raw(
        path,
        &crate::vdna::RawArray::new(
            vec![c as u32, h as u32, w as u32],
            xi.iter().map(|&v| v as f32).collect(),
        )?,
    )
}

/// Load a xi field persisted by [`save_xi`], re-flooring at `xi_floor`.
pub fn load_xi(path: &std::path::Path, xi_floor: f64) -> Result<Array3<f64>> {
    let t = crate::vdna::load_array(path)?;
    Ok(t.data.mapv(|v| (v as f64).max(xi_floor)))
}

/// Mode of an inverse-Gamma distribution, `beta / (alpha + 1)`.
pub fn inverse_gamma_mode(alpha: f64, beta: f64) -> f64 {
    beta / (alpha + 1.0)
}
