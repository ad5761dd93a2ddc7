//! Spatially variant variance maps and synthetic non-i.i.d. Gaussian noise.
//!
//! Noise is synthesized as `n = n1 (.) M` where `n1` is a standard-normal
//! field and `M` a per-pixel standard-deviation map with the same size as the
//! source image. The map families below (a centered bump for training data,
//! off-center / multi-bump / constant maps for held-out test groups) give
//! training and test noise with evident differences, which is what makes the
//! generalization checks meaningful.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, PairedDataset};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ImageTensor;
use crate::{image_io, vdna};

/// Per-pixel, per-channel noise standard deviations, same shape as the image
/// it belongs to. `sigma^2 = M^2` element-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceMap {
    pub m: ImageTensor,
}

impl VarianceMap {
    pub fn new(m: ImageTensor) -> Result<Self> {
        if m.as_slice().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParam(
                "variance map entries must be >= 0".into(),
            ));
        }
        Ok(Self { m })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.m.shape()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    /// One isotropic bump: `base + (peak - base) * exp(-|r - c|^2 / 2w^2)`.
    GaussianBump,
    /// Uniform sigma everywhere (the AWGN setting), using `peak_sigma`.
    Constant,
    /// Elementwise maximum of a few seeded random bumps.
    MultiBump,
}

/// Parametric family for generating variance maps.
///
/// `center` and `width` are relative to the image extent (so the same spec
/// scales across image sizes); sigmas are in `[0, 1]` intensity units. The
/// defaults span 5/255 to 75/255, covering the usual AWGN levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFamilySpec {
    pub kind: MapKind,
    pub peak_sigma: f32,
    pub base_sigma: f32,
    pub center: (f32, f32),
    pub width: f32,
    pub seed: u64,
}

impl MapFamilySpec {
    pub fn bump(center: (f32, f32), width: f32) -> Self {
        Self {
            kind: MapKind::GaussianBump,
            peak_sigma: 75.0 / 255.0,
            base_sigma: 5.0 / 255.0,
            center,
            width,
            seed: 0,
        }
    }

    pub fn constant(sigma: f32) -> Self {
        Self {
            kind: MapKind::Constant,
            peak_sigma: sigma,
            base_sigma: sigma,
            center: (0.5, 0.5),
            width: 1.0,
            seed: 0,
        }
    }

    pub fn multi_bump(width: f32, seed: u64) -> Self {
        Self {
            kind: MapKind::MultiBump,
            peak_sigma: 75.0 / 255.0,
            base_sigma: 5.0 / 255.0,
            center: (0.5, 0.5),
            width,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_sigma >= 0.0 && self.peak_sigma >= self.base_sigma) {
            return Err(Error::InvalidParam(format!(
                "need 0 <= base_sigma <= peak_sigma, got base {} peak {}",
                self.base_sigma, self.peak_sigma
            )));
        }
        if !(self.width > 0.0) {
            return Err(Error::InvalidParam("bump width must be > 0".into()));
        }
        Ok(())
    }
}

/// Generate a variance map for an image of the given shape.
///
/// All values lie in `[base_sigma, peak_sigma]`. RGB images share one spatial
/// field across channels (noise is still drawn independently per channel).
/// Pure: identical spec and shape give an identical map.
pub fn generate_variance_map(
    spec: &MapFamilySpec,
    shape: (usize, usize, usize),
) -> Result<VarianceMap> {
    spec.validate()?;
    let (c, h, w) = shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidParam(format!("zero-sized shape {shape:?}")));
    }

    // Pixel centers in relative coordinates.
    let rel = |i: usize, n: usize| (i as f32 + 0.5) / n as f32;
    let bump = |cy: f32, cx: f32, width: f32, y: usize, x: usize| -> f32 {
        let dy = rel(y, h) - cy;
        let dx = rel(x, w) - cx;
        (-(dy * dy + dx * dx) / (2.0 * width * width)).exp()
    };

    let spatial: Vec<f32> = match spec.kind {
        MapKind::Constant => vec![1.0; h * w],
        MapKind::GaussianBump => {
            let (cy, cx) = spec.center;
            (0..h * w)
                .map(|i| bump(cy, cx, spec.width, i / w, i % w))
                .collect()
        }
        MapKind::MultiBump => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let pos = Uniform::new(0.15f32, 0.85f32);
            let wid = Uniform::new(0.5 * spec.width, 1.5 * spec.width);
            let n_bumps = 3;
            let bumps: Vec<(f32, f32, f32)> = (0..n_bumps)
                .map(|_| {
                    (
                        pos.sample(&mut rng),
                        pos.sample(&mut rng),
                        wid.sample(&mut rng),
                    )
                })
                .collect();
            (0..h * w)
                .map(|i| {
                    bumps
                        .iter()
                        .map(|&(cy, cx, bw)| bump(cy, cx, bw, i / w, i % w))
                        .fold(0.0f32, f32::max)
                })
                .collect()
        }
    };

    let span = spec.peak_sigma - spec.base_sigma;
    let m = ImageTensor::from_fn(c, h, w, |_, y, x| {
        spec.base_sigma + span * spatial[y * w + x]
    });
    VarianceMap::new(m)
}

/// Draw `n = n1 (.) M` with `n1` standard normal. Deterministic under the
/// seed; a zero map yields exactly zero noise.
pub fn sample_noise(map: &VarianceMap, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = map.shape();
    let mut out = ImageTensor::zeros(c, h, w);
    for (o, &m) in out.as_slice_mut().iter_mut().zip(map.m.as_slice()) {
        let z: f32 = StandardNormal.sample(&mut rng);
        *o = z * m;
    }
    out
}

/// A paired dataset plus the ground-truth variance map of each pair, kept for
/// scoring predicted maps later.
#[derive(Clone, Debug)]
pub struct SimulatedDataset {
    pub pairs: PairedDataset,
    pub sigma: Vec<VarianceMap>,
    pub spec: MapFamilySpec,
}

/// Synthesize a noisy counterpart for every clean image.
///
/// Each noisy image is `clamp(clean + noise, 0, 1)`; the ground-truth map is
/// stored pre-clamp (a known, documented mismatch at saturated pixels).
/// Per-image seeds derive from the root seed, so datasets are reproducible
/// and images are independent.
pub fn make_dataset(
    cleans: &[ImageTensor],
    spec: &MapFamilySpec,
    root_seed: u64,
) -> Result<SimulatedDataset> {
    if cleans.is_empty() {
        return Err(Error::EmptyInput("no clean images".into()));
    }
    let mut pairs = Vec::with_capacity(cleans.len());
    let mut sigma = Vec::with_capacity(cleans.len());
    for (i, clean) in cleans.iter().enumerate() {
        let map = generate_variance_map(spec, clean.shape())?;
        let noise = sample_noise(&map, seed::mix_indexed(root_seed, "noise", i as u64));
        let mut noisy = clean.clone();
        for (n, d) in noisy.as_slice_mut().iter_mut().zip(noise.as_slice()) {
            *n = (*n + d).clamp(0.0, 1.0);
        }
        pairs.push((noisy, clean.clone()));
        sigma.push(map);
    }
    let meta = DatasetMeta {
        sources: (0..cleans.len()).map(|i| format!("synthetic:{i}")).collect(),
        seed: Some(root_seed),
    };
    Ok(SimulatedDataset {
        pairs: PairedDataset::new(pairs, meta)?,
        sigma,
        spec: spec.clone(),
    })
}

#[derive(Serialize, Deserialize)]
struct DirManifest {
    spec: MapFamilySpec,
    seed: Option<u64>,
    items: Vec<DirItem>,
}

#[derive(Serialize, Deserialize)]
struct DirItem {
    clean: String,
    noisy: String,
    sigma: String,
}

/// Write the on-disk dataset layout: `clean/*.png`, `noisy/*.png`,
/// `sigma/*.vdna` and a `manifest` file listing the triples and the spec.
pub fn write_dataset_dir(ds: &SimulatedDataset, dir: &Path) -> Result<()> {
    for sub in ["clean", "noisy", "sigma"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut items = Vec::new();
    for (i, ((noisy, clean), map)) in ds.pairs.pairs.iter().zip(&ds.sigma).enumerate() {
        let item = DirItem {
            clean: format!("clean/{i:04}.png"),
            noisy: format!("noisy/{i:04}.png"),
            sigma: format!("sigma/{i:04}.vdna"),
        };
        image_io::save_image(clean, &dir.join(&item.clean))?;
        image_io::save_image(noisy, &dir.join(&item.noisy))?;
        vdna::save_array(&map.m, &dir.join(&item.sigma))?;
        items.push(item);
    }
    let manifest = DirManifest {
        spec: ds.spec.clone(),
        seed: ds.pairs.meta.seed,
        items,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Dataset(format!("manifest encode: {e}")))?;
    fs::write(dir.join("manifest"), text).map_err(|e| Error::io(dir.join("manifest"), e))
}

/// Load a dataset directory written by [`write_dataset_dir`].
///
/// Note the PNG files quantize images to 8 bits, so a loaded dataset matches
/// the in-memory one only up to quantization; sigma maps round-trip exactly.
pub fn load_dataset_dir(dir: &Path) -> Result<SimulatedDataset> {
    let text = fs::read_to_string(dir.join("manifest"))
        .map_err(|e| Error::io(dir.join("manifest"), e))?;
    let manifest: DirManifest =
        serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("manifest parse: {e}")))?;
    if manifest.items.is_empty() {
        return Err(Error::EmptyInput(format!(
            "manifest in {} lists no items",
            dir.display()
        )));
    }
    let mut pairs = Vec::new();
    let mut sigma = Vec::new();
    let mut sources = Vec::new();
    for item in &manifest.items {
        let clean = image_io::load_image(&dir.join(&item.clean))?;
        let noisy = image_io::load_image(&dir.join(&item.noisy))?;
        sigma.push(VarianceMap::new(vdna::load_array(&dir.join(&item.sigma))?)?);
        sources.push(item.clean.clone());
        pairs.push((noisy, clean));
    }
    let meta = DatasetMeta {
        sources,
        seed: manifest.seed,
    };
    Ok(SimulatedDataset {
        pairs: PairedDataset::new(pairs, meta)?,
        sigma,
        spec: manifest.spec,
    })
}
