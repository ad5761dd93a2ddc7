//! The sigma network: a plain conv stack predicting the noise-variance
//! posterior.
//!
//! `layers` 3x3 convolutions with ReLU between them; the final layer emits
//! two channel groups mapped through softplus to the inverse-Gamma shape
//! `alpha` and scale `beta`. Head biases are set so that, at initialization,
//! `alpha` sits at the prior shape and the implied sigma at a mid noise
//! level; starting the posterior on the prior keeps the early KL small.
//!
//! The input is reflect-padded by one pixel per layer and the output cropped
//! back, so every output pixel's receptive field sees image statistics
//! rather than a zero border; the variance prior it is trained against is
//! reflect-filtered the same way.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{
    conv2d, conv2d_backward, crop_frame, embed_frame, reflect_pad_frame, relu, relu_backward,
    sigmoid_f32, softplus_f32, split_channels,
};
use crate::nn::{seeded_rng, Conv, ParamWalk};
use crate::special::inv_softplus;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SNetConfig {
    pub layers: usize,
    pub channels: usize,
    pub in_channels: usize,
    /// Head bias target for `alpha`; matches the prior shape `p^2/2 - 1`
    /// for the default window `p = 7`.
    pub alpha_init: f64,
    /// Head bias target for the initial noise level (intensity units).
    pub sigma_init: f64,
}

impl Default for SNetConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            channels: 64,
            in_channels: 3,
            alpha_init: 23.5,
            sigma_init: 25.0 / 255.0,
        }
    }
}

impl SNetConfig {
    /// Laptop-scale preset used by the experiment harness.
    pub fn desk(in_channels: usize) -> Self {
        Self {
            layers: 4,
            channels: 24,
            in_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.channels < 1 || self.in_channels < 1 {
            return Err(Error::InvalidParam(format!("bad S-Net config {self:?}")));
        }
        if !(self.alpha_init > 0.0 && self.sigma_init > 0.0) {
            return Err(Error::InvalidParam(
                "alpha_init and sigma_init must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn count_params(&self) -> usize {
        SNet::zeros(*self).num_params()
    }
}

#[derive(Clone, Debug)]
pub struct SNet {
    pub cfg: SNetConfig,
    /// `layers` convolutions; ReLU after all but the last.
    pub convs: Vec<Conv>,
}

pub struct SNetCache {
    /// Input to each conv.
    conv_in: Vec<Array3<f32>>,
    /// Post-ReLU output of each conv except the last.
    conv_out: Vec<Array3<f32>>,
    a_raw: Array3<f32>,
    b_raw: Array3<f32>,
}

impl SNet {
    fn build(cfg: SNetConfig, mut make: impl FnMut((usize, usize, usize, usize), usize, usize) -> Conv) -> Self {
        let mut convs = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let cin = if i == 0 { cfg.in_channels } else { cfg.channels };
            let cout = if i == cfg.layers - 1 {
                2 * cfg.in_channels
            } else {
                cfg.channels
            };
            convs.push(make((cout, cin, 3, 3), cout, cin * 9));
        }
        Self { cfg, convs }
    }

    pub fn zeros(cfg: SNetConfig) -> Self {
        Self::build(cfg, |shape, bias, _| Conv::zeros(shape, bias))
    }

    pub fn init(cfg: SNetConfig, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut net = Self::build(cfg, |shape, bias, fan_in| {
            Conv::he(shape, bias, fan_in, &mut rng)
        });
        let head = net.convs.last_mut().expect("layers >= 2");
        let a_bias = inv_softplus(cfg.alpha_init) as f32;
        let beta_target = cfg.sigma_init * cfg.sigma_init * (cfg.alpha_init + 1.0);
        let b_bias = inv_softplus(beta_target) as f32;
        for c in 0..cfg.in_channels {
            head.b[c] = a_bias;
            head.b[cfg.in_channels + c] = b_bias;
        }
        net
    }

    /// Zero the head weights, leaving only the biases; `alpha` then equals
    /// `softplus(bias) = alpha_init` everywhere. Test/diagnostic hook.
    pub fn zero_head_weights(&mut self) {
        self.convs.last_mut().unwrap().w.fill(0.0);
    }

    /// Predict `(alpha, beta)`, both strictly positive, same shape as `y`.
    pub fn forward(&self, y: &Array3<f32>) -> Result<(Array3<f32>, Array3<f32>)> {
        let (out, _) = self.forward_train(y)?;
        Ok(out)
    }

    /// One pixel of reflect frame per layer.
    fn frame(&self) -> usize {
        self.cfg.layers
    }

    pub fn forward_train(
        &self,
        y: &Array3<f32>,
    ) -> Result<((Array3<f32>, Array3<f32>), SNetCache)> {
        let (c, _, _) = y.dim();
        if c != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "S-Net expects {} channels, got {c}",
                self.cfg.in_channels
            )));
        }
        let pad = self.frame();
        let n = self.convs.len();
        let mut conv_in = Vec::with_capacity(n);
        let mut conv_out = Vec::with_capacity(n - 1);
        let mut cur = reflect_pad_frame(y, pad);
        for (i, conv) in self.convs.iter().enumerate() {
            let z = conv2d(&cur, &conv.w, &conv.b);
            conv_in.push(cur);
            if i < n - 1 {
                let a = relu(&z);
                conv_out.push(a.clone());
                cur = a;
            } else {
                cur = z;
            }
        }
        let (a_raw, b_raw) = split_channels(&crop_frame(&cur, pad), self.cfg.in_channels);
        let alpha = a_raw.mapv(softplus_f32);
        let beta = b_raw.mapv(softplus_f32);
        Ok((
            (alpha, beta),
            SNetCache {
                conv_in,
                conv_out,
                a_raw,
                b_raw,
            },
        ))
    }

    /// Accumulate parameter gradients for upstream `(g_alpha, g_beta)` into
    /// `grads`.
    pub fn backward(
        &self,
        cache: &SNetCache,
        g_alpha: &Array3<f32>,
        g_beta: &Array3<f32>,
        grads: &mut SNet,
    ) {
        let n = self.convs.len();
        let mut g_a = g_alpha.clone();
        g_a.zip_mut_with(&cache.a_raw, |g, &raw| *g *= sigmoid_f32(raw));
        let mut g_b = g_beta.clone();
        g_b.zip_mut_with(&cache.b_raw, |g, &raw| *g *= sigmoid_f32(raw));
        let cat = crate::nn::ops::concat_channels(&g_a, &g_b);
        let mut cur = embed_frame(&cat, self.frame());

        for i in (0..n).rev() {
            if i < n - 1 {
                cur = relu_backward(&cur, &cache.conv_out[i]);
            }
            let gc = &mut grads.convs[i];
            cur = conv2d_backward(
                &cache.conv_in[i],
                &self.convs[i].w,
                &cur,
                &mut gc.w,
                &mut gc.b,
            );
        }
    }
}

impl ParamWalk for SNet {
    fn convs(&self) -> Vec<(String, &Conv)> {
        self.convs
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("conv{i}"), c))
            .collect()
    }

    fn convs_mut(&mut self) -> Vec<(String, &mut Conv)> {
        self.convs
            .iter_mut()
            .enumerate()
            .map(|(i, c)| (format!("conv{i}"), c))
            .collect()
    }
}
