//! Noisy/clean training pairs and patch extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Provenance of a dataset: where the images came from and, for synthetic
/// data, the generation seed.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetMeta {
    pub sources: Vec<String>,
    pub seed: Option<u64>,
}

/// A nonempty list of `(noisy, clean)` pairs with identical shapes per pair.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    pub pairs: Vec<(ImageTensor, ImageTensor)>,
    pub meta: DatasetMeta,
}

impl PairedDataset {
    pub fn new(pairs: Vec<(ImageTensor, ImageTensor)>, meta: DatasetMeta) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("dataset has no pairs".into()));
        }
        for (i, (noisy, clean)) in pairs.iter().enumerate() {
            noisy.require_same_shape(clean, &format!("pair {i}"))?;
        }
        Ok(Self { pairs, meta })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Copy the `size x size` window with top-left corner `(y0, x0)`.
pub fn crop_window(t: &ImageTensor, y0: usize, x0: usize, size: usize) -> ImageTensor {
    let (c, h, w) = t.shape();
    assert!(y0 + size <= h && x0 + size <= w);
    ImageTensor::from_fn(c, size, size, |ch, y, x| t[(ch, y0 + y, x0 + x)])
}

/// The window corners `crop_patches` would use, deterministic under the seed.
pub fn crop_offsets(
    shape: (usize, usize),
    size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let (h, w) = shape;
    if size == 0 || size > h || size > w {
        return Err(Error::InvalidParam(format!(
            "patch size {size} does not fit image {h}x{w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| (rng.gen_range(0..=h - size), rng.gen_range(0..=w - size)))
        .collect())
}

/// Randomly crop `count` aligned patch pairs from one training pair.
///
/// Noisy and clean patches come from identical windows, so the per-pixel
/// residual is preserved. Deterministic under a fixed seed.
pub fn crop_patches(
    pair: (&ImageTensor, &ImageTensor),
    size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    let (noisy, clean) = pair;
    noisy.require_same_shape(clean, "crop_patches pair")?;
    let (_, h, w) = noisy.shape();
    let offsets = crop_offsets((h, w), size, count, seed)?;
    Ok(offsets
        .into_iter()
        .map(|(y0, x0)| {
            (
                crop_window(noisy, y0, x0, size),
                crop_window(clean, y0, x0, size),
            )
        })
        .collect())
}

/// Apply one of the 8 dihedral transforms (flips and 90-degree rotations).
/// `k = 0` is the identity. Used for the off-by-default training augmentation.
pub fn dihedral(t: &ImageTensor, k: u8) -> ImageTensor {
    let (c, h, w) = t.shape();
    let rot = k & 0b11;
    let flip = k & 0b100 != 0;
    let (oh, ow) = if rot % 2 == 0 { (h, w) } else { (w, h) };
    ImageTensor::from_fn(c, oh, ow, |ch, y, x| {
        let (sy, mut sx) = match rot {
            0 => (y, x),
            1 => (x, oh - 1 - y),        // 90 degrees
            2 => (h - 1 - y, w - 1 - x), // 180 degrees
            _ => (ow - 1 - x, y),        // 270 degrees
        };
        if flip {
            sx = w - 1 - sx;
        }
        t[(ch, sy, sx)]
    })
}
