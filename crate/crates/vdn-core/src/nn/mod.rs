//! The two amortized-inference networks.
//!
//! The denoising network ([`DNet`]) is a small U-Net that predicts the
//! Gaussian posterior of the clean image (mean via a residual head, variance
//! via a softplus head). The sigma network ([`SNet`]) is a plain
//! conv-stack that predicts the inverse-Gamma posterior of the per-pixel
//! noise variance. Both are hand-rolled `f32` forward/backward; gradient
//! containers reuse the network structs themselves so parameter traversal
//! stays aligned everywhere (optimizer, checkpoints, tests).

pub mod dnet;
pub mod ops;
pub mod snet;

pub use dnet::{DNet, DNetConfig};
pub use snet::{SNet, SNetConfig};

use ndarray::{Array1, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One convolution's parameters. Used for both regular convolutions
/// (`w: (c_out, c_in, k, k)`) and 2x2 transpose convolutions
/// (`w: (c_in, c_out, 2, 2)`).
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: Array4<f32>,
    pub b: Array1<f32>,
}

impl Conv {
    pub fn zeros(shape: (usize, usize, usize, usize), bias_len: usize) -> Self {
        Self {
            w: Array4::zeros(shape),
            b: Array1::zeros(bias_len),
        }
    }

    /// He initialization: `N(0, 2/fan_in)` weights with `fan_in` taken over
    /// the receptive field, zero biases.
    pub fn he(
        shape: (usize, usize, usize, usize),
        bias_len: usize,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let dist = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).unwrap();
        Self {
            w: Array4::from_shape_fn(shape, |_| dist.sample(rng)),
            b: Array1::zeros(bias_len),
        }
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Named parameter walk shared by the optimizer, checkpoints and tests.
pub trait ParamWalk {
    fn convs(&self) -> Vec<(String, &Conv)>;
    fn convs_mut(&mut self) -> Vec<(String, &mut Conv)>;

    fn num_params(&self) -> usize {
        self.convs().iter().map(|(_, c)| c.num_params()).sum()
    }

    /// Flat parameter slices in a fixed order (`w` then `b` per conv).
    fn param_slices(&self) -> Vec<&[f32]> {
        let mut v = Vec::new();
        for (_, c) in self.convs() {
            v.push(c.w.as_slice().unwrap());
            v.push(c.b.as_slice().unwrap());
        }
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v = Vec::new();
        for (_, c) in self.convs_mut() {
            let Conv { w, b } = c;
            v.push(w.as_slice_mut().unwrap());
            v.push(b.as_slice_mut().unwrap());
        }
        v
    }

    /// `(name, dims, data)` triples in walk order, for checkpointing.
    fn param_entries(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut v = Vec::new();
        for (name, c) in self.convs() {
            v.push((
                format!("{name}.w"),
                c.w.shape().to_vec(),
                c.w.as_slice().unwrap().to_vec(),
            ));
            v.push((
                format!("{name}.b"),
                c.b.shape().to_vec(),
                c.b.as_slice().unwrap().to_vec(),
            ));
        }
        v
    }
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
