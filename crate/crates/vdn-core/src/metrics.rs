//! Image-quality metrics and variance-map scoring.
//!
//! PSNR is computed on `[0, 1]` floats without 8-bit re-quantization, so
//! values are reproducible but differ slightly from byte-domain PSNR. SSIM
//! uses a 7-pixel Gaussian window (sigma 1.5) with the standard stabilization
//! constants for unit dynamic range, channel-averaged.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::filter_gaussian_2d;
use crate::noise::VarianceMap;
use crate::tensor::ImageTensor;

/// Peak signal-to-noise ratio in dB: `10 log10(1 / MSE)` for unit peak.
/// Identical images report the `+inf` sentinel.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.require_same_shape(b, "psnr")?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 7;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01; // (k1 L)^2, L = 1
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean local structural similarity over all pixels and channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.require_same_shape(b, "ssim")?;
    let (c, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParam(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}-pixel SSIM window"
        )));
    }
    let mut total = 0.0f64;
    for ch in 0..c {
        let pa = plane(a, ch);
        let pb = plane(b, ch);
        let mu_a = filter_gaussian_2d(&pa, SSIM_WINDOW, SSIM_SIGMA);
        let mu_b = filter_gaussian_2d(&pb, SSIM_WINDOW, SSIM_SIGMA);
        let aa = filter_gaussian_2d(&(&pa * &pa), SSIM_WINDOW, SSIM_SIGMA);
        let bb = filter_gaussian_2d(&(&pb * &pb), SSIM_WINDOW, SSIM_SIGMA);
        let ab = filter_gaussian_2d(&(&pa * &pb), SSIM_WINDOW, SSIM_SIGMA);

        let mut acc = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let (ma, mb) = (mu_a[(y, x)], mu_b[(y, x)]);
                let va = aa[(y, x)] - ma * ma;
                let vb = bb[(y, x)] - mb * mb;
                let cov = ab[(y, x)] - ma * mb;
                acc += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            }
        }
        total += acc / (h * w) as f64;
    }
    Ok(total / c as f64)
}

fn plane(t: &ImageTensor, ch: usize) -> Array2<f64> {
    let (_, h, w) = t.shape();
    Array2::from_shape_fn((h, w), |(y, x)| t[(ch, y, x)] as f64)
}

/// Agreement between a predicted and a ground-truth sigma map.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SigmaScore {
    /// Pearson correlation over all pixels; `None` when either field is
    /// constant (correlation undefined; flagged rather than faked).
    pub pearson_r: Option<f64>,
    pub rmse: f64,
}

pub fn score_sigma_map(pred: &VarianceMap, truth: &VarianceMap) -> Result<SigmaScore> {
    pred.m.require_same_shape(&truth.m, "score_sigma_map")?;
    let n = pred.m.len() as f64;
    let (mut sp, mut st, mut spp, mut stt, mut spt, mut se) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (&p, &t) in pred.m.as_slice().iter().zip(truth.m.as_slice()) {
        let (p, t) = (p as f64, t as f64);
        sp += p;
        st += t;
        spp += p * p;
        stt += t * t;
        spt += p * t;
        let d = p - t;
        se += d * d;
    }
    let var_p = spp / n - (sp / n) * (sp / n);
    let var_t = stt / n - (st / n) * (st / n);
    let cov = spt / n - (sp / n) * (st / n);
    let pearson_r = if var_p <= 1e-18 || var_t <= 1e-18 {
        None
    } else {
        Some(cov / (var_p * var_t).sqrt())
    };
    Ok(SigmaScore {
        pearson_r,
        rmse: (se / n).sqrt(),
    })
}

/// Per-image scores for one evaluation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ImageScore {
    pub psnr: f64,
    pub ssim: f64,
    /// True when the pair was identical (PSNR is the infinity sentinel).
    pub identical: bool,
}

/// Scores over a set of images plus optional sigma-map agreement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub sigma: Option<SigmaScore>,
}

impl EvalReport {
    /// Aggregate per-image scores; infinite PSNR entries are excluded from
    /// the mean (and visible via the `identical` flag).
    pub fn from_scores(per_image: Vec<ImageScore>, sigma: Option<SigmaScore>) -> Self {
        let finite: Vec<f64> = per_image
            .iter()
            .filter(|s| s.psnr.is_finite())
            .map(|s| s.psnr)
            .collect();
        let mean_psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let mean_ssim =
            per_image.iter().map(|s| s.ssim).sum::<f64>() / per_image.len().max(1) as f64;
        Self {
            per_image,
            mean_psnr,
            mean_ssim,
            sigma,
        }
    }
}

pub fn score_pair(denoised: &ImageTensor, clean: &ImageTensor) -> Result<ImageScore> {
    let p = psnr(denoised, clean)?;
    Ok(ImageScore {
        psnr: p,
        ssim: ssim(denoised, clean)?,
        identical: p.is_infinite(),
    })
}
