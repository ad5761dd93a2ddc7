//! The denoising network: a U-Net predicting the clean-image posterior.
//!
//! Encoder blocks are [conv+ReLU]x2 followed by 2x2 average pooling, decoder
//! blocks are a 2x2 transpose convolution, concatenation with the symmetric
//! skip, then [conv+ReLU]x2. The head emits two channel groups: a residual
//! added to the input (`mu = y + f(y)`) and a raw field mapped through
//! softplus to the posterior variance `m_sq`. Channels double per level;
//! all kernels are 3x3.
//!
//! Inputs of arbitrary size are reflect-padded up to a multiple of
//! `2^(depth-1)` and the outputs cropped back.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{
    avg_pool2, avg_pool2_backward, concat_channels, conv2d, conv2d_backward, conv_transpose2,
    conv_transpose2_backward, crop_hw, embed_hw, reflect_pad_to_multiple, relu, relu_backward,
    sigmoid_f32, softplus_f32, split_channels,
};
use crate::nn::{seeded_rng, Conv, ParamWalk};
use crate::special::inv_softplus;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DNetConfig {
    /// Number of scales; `depth - 1` poolings.
    pub depth: usize,
    /// Channels at the top scale; doubled at each level down.
    pub base_channels: usize,
    pub in_channels: usize,
    /// Initial posterior variance targeted by the head bias.
    pub m_sq_init: f64,
}

impl Default for DNetConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 64,
            in_channels: 3,
            m_sq_init: 1e-4,
        }
    }
}

impl DNetConfig {
    /// Laptop-scale preset used by the experiment harness.
    pub fn desk(in_channels: usize) -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            in_channels,
            m_sq_init: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_channels < 1 || self.in_channels < 1 {
            return Err(Error::InvalidParam(format!("bad D-Net config {self:?}")));
        }
        if !(self.m_sq_init > 0.0) {
            return Err(Error::InvalidParam("m_sq_init must be > 0".into()));
        }
        Ok(())
    }

    /// Spatial dims are padded to a multiple of this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn count_params(&self) -> usize {
        DNet::zeros(*self).num_params()
    }
}

#[derive(Clone, Debug)]
pub struct DNet {
    pub cfg: DNetConfig,
    /// Two convs per scale, top to bottom.
    pub enc: Vec<(Conv, Conv)>,
    /// Transpose convs, bottom to top (level `depth-2` first).
    pub up: Vec<Conv>,
    /// Two convs per decoder block, same order as `up`.
    pub dec: Vec<(Conv, Conv)>,
    /// Final 3x3 conv to `2 * in_channels` (residual group + m_sq group).
    pub head: Conv,
}

/// Activations cached by [`DNet::forward_train`] for the backward pass.
pub struct DNetCache {
    pad_hw: (usize, usize),
    enc_c1_in: Vec<Array3<f32>>,
    enc_c1_out: Vec<Array3<f32>>,
    enc_c2_out: Vec<Array3<f32>>,
    up_in: Vec<Array3<f32>>,
    dec_cat: Vec<Array3<f32>>,
    dec_d1_out: Vec<Array3<f32>>,
    dec_d2_out: Vec<Array3<f32>>,
    head_in: Array3<f32>,
    m_raw_crop: Array3<f32>,
}

impl DNet {
    /// Build the layer stack; `make(shape, bias_len, fan_in)` supplies each
    /// conv. Transpose convs store weights as `(c_in, c_out, 2, 2)`, so their
    /// fan-in is passed explicitly.
    fn build(
        cfg: DNetConfig,
        mut make: impl FnMut((usize, usize, usize, usize), usize, usize) -> Conv,
    ) -> Self {
        let d = cfg.depth;
        let mut enc = Vec::with_capacity(d);
        for l in 0..d {
            let cin = if l == 0 {
                cfg.in_channels
            } else {
                cfg.channels_at(l - 1)
            };
            let ch = cfg.channels_at(l);
            enc.push((
                make((ch, cin, 3, 3), ch, cin * 9),
                make((ch, ch, 3, 3), ch, ch * 9),
            ));
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in (0..d.saturating_sub(1)).rev() {
            let ch = cfg.channels_at(l);
            let below = cfg.channels_at(l + 1);
            up.push(make((below, ch, 2, 2), ch, below * 4));
            dec.push((
                make((ch, 2 * ch, 3, 3), ch, 2 * ch * 9),
                make((ch, ch, 3, 3), ch, ch * 9),
            ));
        }
        let head = make(
            (2 * cfg.in_channels, cfg.base_channels, 3, 3),
            2 * cfg.in_channels,
            cfg.base_channels * 9,
        );
        Self {
            cfg,
            enc,
            up,
            dec,
            head,
        }
    }

    /// All-zero parameters; used as the gradient container.
    pub fn zeros(cfg: DNetConfig) -> Self {
        Self::build(cfg, |shape, bias, _| Conv::zeros(shape, bias))
    }

    /// He-initialized network. The head bias targets `mu = y` (residual
    /// group at 0) and `m_sq = m_sq_init` (softplus-inverted).
    pub fn init(cfg: DNetConfig, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut net = Self::build(cfg, |shape, bias, fan_in| {
            Conv::he(shape, bias, fan_in, &mut rng)
        });
        let m_bias = inv_softplus(cfg.m_sq_init) as f32;
        for c in cfg.in_channels..2 * cfg.in_channels {
            net.head.b[c] = m_bias;
        }
        net
    }

    /// Zero the head weights and biases of the residual group, so that
    /// `mu == y` exactly. Test/diagnostic hook.
    pub fn zero_residual_head(&mut self) {
        let cin = self.cfg.in_channels;
        for c in 0..cin {
            self.head.b[c] = 0.0;
        }
        self.head
            .w
            .slice_mut(ndarray::s![..cin, .., .., ..])
            .fill(0.0);
    }

    /// Predict `(mu, m_sq)` for an input with `in_channels` channels.
    pub fn forward(&self, y: &Array3<f32>) -> Result<(Array3<f32>, Array3<f32>)> {
        let (out, _) = self.forward_train(y)?;
        Ok(out)
    }

    pub fn forward_train(
        &self,
        y: &Array3<f32>,
    ) -> Result<((Array3<f32>, Array3<f32>), DNetCache)> {
        let (c, _h, _w) = y.dim();
        if c != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "D-Net expects {} channels, got {c}",
                self.cfg.in_channels
            )));
        }
        let d = self.cfg.depth;
        let (xp, orig_hw) = reflect_pad_to_multiple(y, self.cfg.divisor());
        let pad_hw = (xp.dim().1, xp.dim().2);

        let mut enc_c1_in = Vec::with_capacity(d);
        let mut enc_c1_out = Vec::with_capacity(d);
        let mut enc_c2_out = Vec::with_capacity(d);
        let mut cur = xp;
        for l in 0..d {
            let c1_out = relu(&conv2d(&cur, &self.enc[l].0.w, &self.enc[l].0.b));
            let c2_out = relu(&conv2d(&c1_out, &self.enc[l].1.w, &self.enc[l].1.b));
            enc_c1_in.push(cur);
            enc_c1_out.push(c1_out);
            let next = if l < d - 1 {
                avg_pool2(&c2_out)
            } else {
                c2_out.clone()
            };
            enc_c2_out.push(c2_out);
            cur = next;
        }

        let mut up_in = Vec::new();
        let mut dec_cat = Vec::new();
        let mut dec_d1_out = Vec::new();
        let mut dec_d2_out = Vec::new();
        for (i, l) in (0..d.saturating_sub(1)).rev().enumerate() {
            let upsampled = conv_transpose2(&cur, &self.up[i].w, &self.up[i].b);
            up_in.push(cur);
            let cat = concat_channels(&enc_c2_out[l], &upsampled);
            let d1 = relu(&conv2d(&cat, &self.dec[i].0.w, &self.dec[i].0.b));
            let d2 = relu(&conv2d(&d1, &self.dec[i].1.w, &self.dec[i].1.b));
            dec_cat.push(cat);
            dec_d1_out.push(d1);
            dec_d2_out.push(d2.clone());
            cur = d2;
        }

        let head_in = cur;
        let out = conv2d(&head_in, &self.head.w, &self.head.b);
        let (res, m_raw) = split_channels(&out, self.cfg.in_channels);
        let res_crop = crop_hw(&res, orig_hw.0, orig_hw.1);
        let m_raw_crop = crop_hw(&m_raw, orig_hw.0, orig_hw.1);
        let mu = y + &res_crop;
        let m_sq = m_raw_crop.mapv(softplus_f32);

        Ok((
            (mu, m_sq),
            DNetCache {
                pad_hw,
                enc_c1_in,
                enc_c1_out,
                enc_c2_out,
                up_in,
                dec_cat,
                dec_d1_out,
                dec_d2_out,
                head_in,
                m_raw_crop,
            },
        ))
    }

    /// Accumulate parameter gradients for upstream gradients `(g_mu, g_m_sq)`
    /// into `grads` (a zero-initialized [`DNet::zeros`] container).
    pub fn backward(
        &self,
        cache: &DNetCache,
        g_mu: &Array3<f32>,
        g_m_sq: &Array3<f32>,
        grads: &mut DNet,
    ) {
        let d = self.cfg.depth;
        let (ph, pw) = cache.pad_hw;

        // mu = y + res, m_sq = softplus(m_raw): chain through the heads.
        let g_res = g_mu.clone();
        let mut g_m_raw = g_m_sq.clone();
        g_m_raw.zip_mut_with(&cache.m_raw_crop, |g, &raw| *g *= sigmoid_f32(raw));
        let g_out = concat_channels(
            &embed_hw(&g_res, ph, pw),
            &embed_hw(&g_m_raw, ph, pw),
        );

        let mut cur = conv2d_backward(
            &cache.head_in,
            &self.head.w,
            &g_out,
            &mut grads.head.w,
            &mut grads.head.b,
        );

        let mut skip_grads: Vec<Option<Array3<f32>>> = vec![None; d];
        for (i, l) in (0..d.saturating_sub(1)).rev().enumerate().rev() {
            let g_d2 = relu_backward(&cur, &cache.dec_d2_out[i]);
            let gc = &mut grads.dec[i].1;
            let g_d1_out = conv2d_backward(
                &cache.dec_d1_out[i],
                &self.dec[i].1.w,
                &g_d2,
                &mut gc.w,
                &mut gc.b,
            );
            let g_d1 = relu_backward(&g_d1_out, &cache.dec_d1_out[i]);
            let gc = &mut grads.dec[i].0;
            let g_cat = conv2d_backward(
                &cache.dec_cat[i],
                &self.dec[i].0.w,
                &g_d1,
                &mut gc.w,
                &mut gc.b,
            );
            let (g_skip, g_up) = split_channels(&g_cat, self.cfg.channels_at(l));
            skip_grads[l] = Some(g_skip);
            let gc = &mut grads.up[i];
            cur = conv_transpose2_backward(
                &cache.up_in[i],
                &self.up[i].w,
                &g_up,
                &mut gc.w,
                &mut gc.b,
            );
        }

        for l in (0..d).rev() {
            let mut g_c2 = if l == d - 1 {
                cur.clone()
            } else {
                avg_pool2_backward(&cur)
            };
            if let Some(gs) = &skip_grads[l] {
                g_c2 += gs;
            }
            let g2 = relu_backward(&g_c2, &cache.enc_c2_out[l]);
            let gc = &mut grads.enc[l].1;
            let g_c1_out = conv2d_backward(
                &cache.enc_c1_out[l],
                &self.enc[l].1.w,
                &g2,
                &mut gc.w,
                &mut gc.b,
            );
            let g1 = relu_backward(&g_c1_out, &cache.enc_c1_out[l]);
            let gc = &mut grads.enc[l].0;
            cur = conv2d_backward(
                &cache.enc_c1_in[l],
                &self.enc[l].0.w,
                &g1,
                &mut gc.w,
                &mut gc.b,
            );
        }
    }
}

impl ParamWalk for DNet {
    fn convs(&self) -> Vec<(String, &Conv)> {
        let mut v = Vec::new();
        for (i, (a, b)) in self.enc.iter().enumerate() {
            v.push((format!("enc{i}a"), a));
            v.push((format!("enc{i}b"), b));
        }
        for (i, c) in self.up.iter().enumerate() {
            v.push((format!("up{i}"), c));
        }
        for (i, (a, b)) in self.dec.iter().enumerate() {
            v.push((format!("dec{i}a"), a));
            v.push((format!("dec{i}b"), b));
        }
        v.push(("head".to_string(), &self.head));
        v
    }

    fn convs_mut(&mut self) -> Vec<(String, &mut Conv)> {
        let mut v = Vec::new();
        for (i, (a, b)) in self.enc.iter_mut().enumerate() {
            v.push((format!("enc{i}a"), a));
            v.push((format!("enc{i}b"), b));
        }
        for (i, c) in self.up.iter_mut().enumerate() {
            v.push((format!("up{i}"), c));
        }
        for (i, (a, b)) in self.dec.iter_mut().enumerate() {
            v.push((format!("dec{i}a"), a));
            v.push((format!("dec{i}b"), b));
        }
        v.push(("head".to_string(), &mut self.head));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn rand_image(c: usize, h: usize, w: usize, seed: u64) -> Array3<f32> {
        let mut rng = seeded_rng(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.gen::<f32>())
    }

    #[test]
    fn shape_contract_divisible() {
        let net = DNet::init(DNetConfig::desk(3), 1);
        let y = rand_image(3, 64, 64, 2);
        let (mu, m_sq) = net.forward(&y).unwrap();
        assert_eq!(mu.dim(), (3, 64, 64));
        assert_eq!(m_sq.dim(), (3, 64, 64));
    }

    #[test]
    fn odd_sizes_pad_and_crop_back() {
        // Depth 4 pads to multiples of 8: (3, 65, 63) runs as (3, 72, 64)
        // internally and comes back cropped.
        let cfg = DNetConfig {
            depth: 4,
            base_channels: 4,
            in_channels: 3,
            m_sq_init: 1e-4,
        };
        let y = rand_image(3, 65, 63, 3);
        let (padded, orig) = reflect_pad_to_multiple(&y, cfg.divisor());
        assert_eq!(padded.dim(), (3, 72, 64));
        assert_eq!(orig, (65, 63));
        let net = DNet::init(cfg, 4);
        let (mu, m_sq) = net.forward(&y).unwrap();
        assert_eq!(mu.dim(), (3, 65, 63));
        assert_eq!(m_sq.dim(), (3, 65, 63));
    }

    #[test]
    fn zeroed_residual_head_is_identity() {
        let mut net = DNet::init(DNetConfig::desk(1), 5);
        net.zero_residual_head();
        let y = rand_image(1, 20, 28, 6);
        let (mu, m_sq) = net.forward(&y).unwrap();
        assert_eq!(mu, y);
        assert!(m_sq.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn m_sq_bias_targets_init_value() {
        // With the m-group head weights zeroed, m_sq equals m_sq_init: the
        // bias is the softplus inverse of the configured value.
        let cfg = DNetConfig::desk(1);
        let mut net = DNet::init(cfg, 7);
        let cin = cfg.in_channels;
        net.head
            .w
            .slice_mut(ndarray::s![cin.., .., .., ..])
            .fill(0.0);
        let y = rand_image(1, 16, 16, 8);
        let (_, m_sq) = net.forward(&y).unwrap();
        for &v in m_sq.iter() {
            approx::assert_relative_eq!(v as f64, cfg.m_sq_init, max_relative = 1e-5);
        }
    }

    #[test]
    fn outputs_finite_at_init() {
        let net = DNet::init(DNetConfig::desk(3), 9);
        let y = rand_image(3, 24, 24, 10);
        let (mu, m_sq) = net.forward(&y).unwrap();
        assert!(mu.iter().all(|v| v.is_finite()));
        assert!(m_sq.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let net = DNet::init(DNetConfig::desk(1), 11);
        assert!(net.forward(&rand_image(3, 16, 16, 12)).is_err());
    }

    #[test]
    fn translation_covariance_in_the_interior() {
        // Shifting the input by the total downsampling factor shifts mu by
        // the same amount away from borders: crops of one larger field,
        // compared on a central window clear of both receptive-field edges.
        let cfg = DNetConfig::desk(1);
        let net = DNet::init(cfg, 13);
        let field = rand_image(1, 112, 112, 14);
        let s = cfg.divisor(); // 4
        let a = field.slice(ndarray::s![.., 0..96, 0..96]).to_owned();
        let b = field.slice(ndarray::s![.., s..96 + s, s..96 + s]).to_owned();
        let (mu_a, _) = net.forward(&a).unwrap();
        let (mu_b, _) = net.forward(&b).unwrap();
        for y in 40..56 {
            for x in 40..56 {
                let va = mu_a[(0, y + s, x + s)];
                let vb = mu_b[(0, y, x)];
                assert!(
                    (va - vb).abs() < 1e-5,
                    "interior mismatch at ({y},{x}): {va} vs {vb}"
                );
            }
        }
    }

    #[test]
    fn param_walk_is_consistent() {
        let net = DNet::init(DNetConfig::desk(2), 15);
        let n: usize = net.param_slices().iter().map(|s| s.len()).sum();
        assert_eq!(n, net.num_params());
        assert_eq!(net.cfg.count_params(), net.num_params());
        let names: Vec<String> = net.convs().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.dedup();
        assert_eq!(names.len(), sorted.len());
    }
}
