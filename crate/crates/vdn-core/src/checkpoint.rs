//! Checkpoints: both networks, optimizer moments and RNG positions, stored
//! as one array file per tensor plus a JSON manifest.
//!
//! A checkpoint is a directory:
//!
//! ```text
//! ckpt/
//!   manifest.json      # configs, step counters, seed, RNG state, tensor index
//!   tensors/0000.vdna  # one array file per tensor, bit-exact f32
//! ```
//!
//! Round-trips are bit-exact, which is what makes `save -> load -> forward`
//! identical to the pre-save forward and resume reproduce an uninterrupted
//! run.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DNet, DNetConfig, ParamWalk, SNet, SNetConfig};
use crate::train::{AdamState, TrainConfig};
use crate::vdna::{self, RawArray};

/// A ChaCha stream position: the `u64` seed it was created from and the word
/// position to fast-forward to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    word_pos_hi: u64,
    word_pos_lo: u64,
}

impl RngState {
    pub fn new(seed: u64, word_pos: u128) -> Self {
        Self {
            seed,
            word_pos_hi: (word_pos >> 64) as u64,
            word_pos_lo: word_pos as u64,
        }
    }

    pub fn word_pos(&self) -> u128 {
        ((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128
    }
}

/// Full training state. `adam` and `data_rng` are present on checkpoints
/// written by the training loop and absent on bare inference exports.
#[derive(Clone)]
pub struct Checkpoint {
    pub dnet: DNet,
    pub snet: SNet,
    pub train_cfg: Option<TrainConfig>,
    /// Epochs completed.
    pub epoch: usize,
    /// Optimizer steps completed.
    pub step: u64,
    pub seed: u64,
    pub adam: Option<(AdamState, AdamState)>,
    pub data_rng: Option<RngState>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dnet_cfg: DNetConfig,
    snet_cfg: SNetConfig,
    train_cfg: Option<TrainConfig>,
    epoch: usize,
    step: u64,
    seed: u64,
    adam_t: Option<(u64, u64)>,
    data_rng: Option<RngState>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dims: Vec<u32>,
    file: String,
}

struct TensorWriter<'a> {
    dir: &'a Path,
    entries: Vec<TensorEntry>,
}

impl<'a> TensorWriter<'a> {
    fn put(&mut self, name: String, dims: Vec<usize>, data: &[f32]) -> Result<()> {
        let file = format!("tensors/{:04}.vdna", self.entries.len());
        let dims: Vec<u32> = dims.iter().map(|&d| d as u32).collect();
        vdna::write_raw(
            &self.dir.join(&file),
            &RawArray::new(dims.clone(), data.to_vec())?,
        )?;
        self.entries.push(TensorEntry { name, dims, file });
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("tensors")).map_err(|e| Error::io(dir.join("tensors"), e))?;
    let mut w = TensorWriter {
        dir,
        entries: Vec::new(),
    };
    for (name, dims, data) in ckpt.dnet.param_entries() {
        w.put(format!("dnet/{name}"), dims, &data)?;
    }
    for (name, dims, data) in ckpt.snet.param_entries() {
        w.put(format!("snet/{name}"), dims, &data)?;
    }
    if let Some((ad, as_)) = &ckpt.adam {
        for (label, state) in [("dnet", ad), ("snet", as_)] {
            for (i, (m, v)) in state.m.iter().zip(&state.v).enumerate() {
                w.put(format!("adam/{label}/m/{i:04}"), vec![m.len()], m)?;
                w.put(format!("adam/{label}/v/{i:04}"), vec![v.len()], v)?;
            }
        }
    }
    let manifest = Manifest {
        version: 1,
        dnet_cfg: ckpt.dnet.cfg,
        snet_cfg: ckpt.snet.cfg,
        train_cfg: ckpt.train_cfg,
        epoch: ckpt.epoch,
        step: ckpt.step,
        seed: ckpt.seed,
        adam_t: ckpt.adam.as_ref().map(|(a, b)| (a.t, b.t)),
        data_rng: ckpt.data_rng,
        tensors: w.entries,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
    fs::write(dir.join("manifest.json"), text)
        .map_err(|e| Error::io(dir.join("manifest.json"), e))
}

fn fill_net<N: ParamWalk>(net: &mut N, prefix: &str, stored: &HashMap<String, RawArray>) -> Result<()> {
    for (name, conv) in net.convs_mut() {
        for (suffix, dims, slice) in [
            (
                "w",
                conv.w.shape().to_vec(),
                conv.w.as_slice_mut().unwrap(),
            ),
            (
                "b",
                conv.b.shape().to_vec(),
                conv.b.as_slice_mut().unwrap(),
            ),
        ] {
            let key = format!("{prefix}/{name}.{suffix}");
            let raw = stored
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            let want: Vec<u32> = dims.iter().map(|&d| d as u32).collect();
            if raw.dims != want {
                return Err(Error::Checkpoint(format!(
                    "tensor {key}: stored dims {:?}, expected {:?}",
                    raw.dims, want
                )));
            }
            slice.copy_from_slice(&raw.data);
        }
    }
    Ok(())
}

fn fill_adam(
    prefix: &str,
    t: u64,
    sizes: &[usize],
    stored: &HashMap<String, RawArray>,
) -> Result<AdamState> {
    let mut state = AdamState::new(sizes);
    state.t = t;
    for (i, size) in sizes.iter().enumerate() {
        for (kind, dst) in [("m", &mut state.m), ("v", &mut state.v)] {
            let key = format!("adam/{prefix}/{kind}/{i:04}");
            let raw = stored
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if raw.data.len() != *size {
                return Err(Error::Checkpoint(format!(
                    "tensor {key}: {} values, expected {size}",
                    raw.data.len()
                )));
            }
            dst[i].copy_from_slice(&raw.data);
        }
    }
    Ok(state)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::io(dir.join("manifest.json"), e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let mut stored = HashMap::new();
    for entry in &manifest.tensors {
        let raw = vdna::read_raw(&dir.join(&entry.file))?;
        if raw.dims != entry.dims {
            return Err(Error::Checkpoint(format!(
                "tensor {}: file dims {:?} disagree with manifest {:?}",
                entry.name, raw.dims, entry.dims
            )));
        }
        stored.insert(entry.name.clone(), raw);
    }

    let mut dnet = DNet::zeros(manifest.dnet_cfg);
    let mut snet = SNet::zeros(manifest.snet_cfg);
    fill_net(&mut dnet, "dnet", &stored)?;
    fill_net(&mut snet, "snet", &stored)?;

    let adam = match manifest.adam_t {
        Some((td, ts)) => {
            let d_sizes: Vec<usize> = dnet.param_slices().iter().map(|s| s.len()).collect();
            let s_sizes: Vec<usize> = snet.param_slices().iter().map(|s| s.len()).collect();
            Some((
                fill_adam("dnet", td, &d_sizes, &stored)?,
                fill_adam("snet", ts, &s_sizes, &stored)?,
            ))
        }
        None => None,
    };

    Ok(Checkpoint {
        dnet,
        snet,
        train_cfg: manifest.train_cfg,
        epoch: manifest.epoch,
        step: manifest.step,
        seed: manifest.seed,
        adam,
        data_rng: manifest.data_rng,
    })
}
