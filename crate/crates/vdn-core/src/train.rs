//! Training loop: patch sampling, batch gradients, Adam, learning-rate
//! schedule, logging and checkpointing.
//!
//! All randomness flows from `TrainConfig::seed`, split into independent
//! streams for parameter init and data sampling; training is fully
//! deterministic on one device, and checkpoints carry enough state (Adam
//! moments, RNG word positions) to resume bit-exactly.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngState};
use crate::dataset::{crop_window, dihedral, PairedDataset};
use crate::error::{Error, Result};
use crate::nn::{DNet, DNetConfig, ParamWalk, SNet, SNetConfig};
use crate::objective::{negative_elbo_grad, LossBreakdown, VariationalPosterior};
use crate::prior::{PriorSpec, DEFAULT_XI_FLOOR};
use crate::seed;
use crate::tensor::ImageTensor;
use crate::vdna;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// The full negative lower bound.
    Elbo,
    /// Plain `sum (mu - x)^2` on the D-Net only; the baseline the bound
    /// degenerates to for vanishing `epsilon0_sq`.
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patches_per_epoch: usize,
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_halve_every: usize,
    pub lr_floor: f64,
    pub epsilon0_sq: f64,
    pub p: usize,
    pub seed: u64,
    /// Random flips/rotations of training patches; off by default.
    pub augment: bool,
    pub loss: LossMode,
}

impl Default for TrainConfig {
    /// Desk-scale defaults (50 steps of batch 8 per epoch);
    /// [`TrainConfig::paper_scale`] holds the full-size settings.
    fn default() -> Self {
        Self {
            epochs: 30,
            patches_per_epoch: 400,
            patch_size: 64,
            batch_size: 8,
            lr_init: 2e-4,
            lr_halve_every: 5,
            lr_floor: 1e-6,
            epsilon0_sq: 5e-5,
            p: 7,
            seed: 0,
            augment: false,
            loss: LossMode::Elbo,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: 64 x 5000 patches of 128 per epoch, learning
    /// rate halved every 10 epochs from 2e-4 down to the 1e-6 floor
    /// (about 80 epochs until the floor).
    pub fn paper_scale() -> Self {
        Self {
            epochs: 80,
            patches_per_epoch: 64 * 5000,
            patch_size: 128,
            batch_size: 64,
            lr_halve_every: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.patches_per_epoch == 0
            || self.patch_size == 0
            || self.batch_size == 0
        {
            return Err(Error::InvalidParam("counts must be positive".into()));
        }
        if self.lr_floor > self.lr_init {
            return Err(Error::InvalidParam(format!(
                "lr_floor {} exceeds lr_init {}",
                self.lr_floor, self.lr_init
            )));
        }
        if self.lr_halve_every == 0 {
            return Err(Error::InvalidParam("lr_halve_every must be >= 1".into()));
        }
        if !(self.epsilon0_sq > 0.0) {
            return Err(Error::InvalidParam("epsilon0_sq must be > 0".into()));
        }
        if self.p < 3 || self.p % 2 == 0 {
            return Err(Error::InvalidParam("p must be odd and >= 3".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.patches_per_epoch / self.batch_size).max(1)
    }
}

/// Step learning-rate schedule: halved every `lr_halve_every` epochs from
/// `lr_init`, floored at `lr_floor`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.lr_halve_every) as i32;
    (cfg.lr_init * 0.5f64.powi(halvings)).max(cfg.lr_floor)
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;
/// Global-norm gradient clip; a safety valve against early alpha/beta swings.
pub const GRAD_CLIP_NORM: f64 = 100.0;

/// Adam state for one parameter set (first/second moments per slice).
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_params(slices: &[&[f32]]) -> Self {
        Self::new(&slices.iter().map(|s| s.len()).collect::<Vec<_>>())
    }

    /// One Adam update with bias correction; canonical moment decays.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let corr1 = 1.0 - (ADAM_BETA1 as f64).powi(self.t as i32);
        let corr2 = 1.0 - (ADAM_BETA2 as f64).powi(self.t as i32);
        for k in 0..params.len() {
            let (p, g) = (&mut *params[k], grads[k]);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] as f64 / corr1;
                let v_hat = v[i] as f64 / corr2;
                p[i] -= (lr * m_hat / (v_hat.sqrt() + ADAM_EPS as f64)) as f32;
            }
        }
    }
}

/// Gradients for one batch, shaped as the networks themselves, plus the
/// averaged loss.
pub struct BatchGrads {
    pub dnet: DNet,
    pub snet: SNet,
    pub loss: LossBreakdown,
}

fn posterior_from_nets(
    mu: &Array3<f32>,
    m_sq: &Array3<f32>,
    alpha: &Array3<f32>,
    beta: &Array3<f32>,
) -> VariationalPosterior {
    // Positive heads guarantee positivity; the tiny floor only guards f32
    // underflow so the f64 constructor never rejects.
    let lift = |a: &Array3<f32>| a.mapv(|v| (v as f64).max(1e-30));
    VariationalPosterior {
        mu: mu.mapv(|v| v as f64),
        m_sq: lift(m_sq),
        alpha: lift(alpha),
        beta: lift(beta),
    }
}

fn to_f32(a: &Array3<f64>) -> Array3<f32> {
    a.mapv(|v| v as f32)
}

/// Forward/backward for one batch under the full bound. Per-pixel losses are
/// summed within an image and averaged over the batch; gradients follow the
/// same scaling. Loss math runs in f64.
///
/// Non-finite network outputs (f32 overflow into inf/NaN) surface as a NaN
/// loss with zero gradients rather than an error, so the training loop can
/// abort and dump the offending batch.
pub fn batch_gradients(
    dnet: &DNet,
    snet: &SNet,
    batch: &[(ImageTensor, ImageTensor)],
    cfg: &TrainConfig,
) -> Result<BatchGrads> {
    assert!(!batch.is_empty());
    let per_sample: Vec<Result<Option<(DNet, SNet, LossBreakdown)>>> = batch
        .par_iter()
        .map(|(noisy, clean)| {
            let y32 = &noisy.data;
            let ((mu, m_sq), cache_d) = dnet.forward_train(y32)?;
            let ((alpha, beta), cache_s) = snet.forward_train(y32)?;
            let finite = [&mu, &m_sq, &alpha, &beta]
                .iter()
                .all(|f| f.iter().all(|v| v.is_finite()));
            if !finite {
                return Ok(None);
            }
            let q = posterior_from_nets(&mu, &m_sq, &alpha, &beta);
            let y = noisy.to_f64();
            let x = clean.to_f64();
            let prior =
                PriorSpec::from_pair(noisy, clean, cfg.epsilon0_sq, cfg.p, DEFAULT_XI_FLOOR)?;
            let (loss, grad) = negative_elbo_grad(&q, &y, &x, &prior)?;

            let mut gd = DNet::zeros(dnet.cfg);
            let mut gs = SNet::zeros(snet.cfg);
            dnet.backward(&cache_d, &to_f32(&grad.mu), &to_f32(&grad.m_sq), &mut gd);
            snet.backward(&cache_s, &to_f32(&grad.alpha), &to_f32(&grad.beta), &mut gs);
            Ok(Some((gd, gs, loss)))
        })
        .collect();

    let mut acc_d = DNet::zeros(dnet.cfg);
    let mut acc_s = SNet::zeros(snet.cfg);
    let mut losses = Vec::with_capacity(batch.len());
    for item in per_sample {
        match item? {
            Some((gd, gs, loss)) => {
                add_params(&mut acc_d, &gd);
                add_params(&mut acc_s, &gs);
                losses.push(loss);
            }
            None => {
                let nan = f64::NAN;
                return Ok(BatchGrads {
                    dnet: DNet::zeros(dnet.cfg),
                    snet: SNet::zeros(snet.cfg),
                    loss: LossBreakdown::from_parts(nan, nan, nan),
                });
            }
        }
    }
    let scale = 1.0 / batch.len() as f32;
    scale_params(&mut acc_d, scale);
    scale_params(&mut acc_s, scale);
    Ok(BatchGrads {
        dnet: acc_d,
        snet: acc_s,
        loss: LossBreakdown::mean_of(&losses),
    })
}

/// Forward/backward for one batch under the plain MSE baseline,
/// `sum (mu - x)^2` per image, averaged over the batch. The S-Net is not
/// involved at all.
pub fn batch_gradients_mse(
    dnet: &DNet,
    batch: &[(ImageTensor, ImageTensor)],
) -> Result<(DNet, f64)> {
    assert!(!batch.is_empty());
    let per_sample: Vec<Result<(DNet, f64)>> = batch
        .par_iter()
        .map(|(noisy, clean)| {
            let ((mu, _m_sq), cache) = dnet.forward_train(&noisy.data)?;
            let mut loss = 0.0f64;
            let mut g_mu = Array3::<f32>::zeros(mu.dim());
            for ((g, &m), &x) in g_mu
                .iter_mut()
                .zip(mu.iter())
                .zip(clean.data.iter())
            {
                let d = m as f64 - x as f64;
                loss += d * d;
                *g = (2.0 * d) as f32;
            }
            let g_msq = Array3::<f32>::zeros(mu.dim());
            let mut gd = DNet::zeros(dnet.cfg);
            dnet.backward(&cache, &g_mu, &g_msq, &mut gd);
            Ok((gd, loss))
        })
        .collect();

    let mut acc = DNet::zeros(dnet.cfg);
    let mut total = 0.0;
    let n = batch.len();
    for item in per_sample {
        let (gd, loss) = item?;
        add_params(&mut acc, &gd);
        total += loss;
    }
    scale_params(&mut acc, 1.0 / n as f32);
    Ok((acc, total / n as f64))
}

fn add_params<N: ParamWalk>(acc: &mut N, other: &N) {
    let src = other.param_slices();
    for (dst, s) in acc.param_slices_mut().into_iter().zip(src) {
        for (d, v) in dst.iter_mut().zip(s) {
            *d += v;
        }
    }
}

fn scale_params<N: ParamWalk>(net: &mut N, k: f32) {
    for s in net.param_slices_mut() {
        for v in s {
            *v *= k;
        }
    }
}

fn grad_sq_norm<N: ParamWalk>(net: &N) -> f64 {
    net.param_slices()
        .iter()
        .flat_map(|s| s.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum()
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// When set, the loop writes `train_log.csv`, periodic checkpoints under
    /// `checkpoint-latest/`, a final `checkpoint-final/`, and non-finite-loss
    /// diagnostics here.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint every this many epochs (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub history: Vec<StepLog>,
}

struct CsvLog {
    file: Option<std::io::BufWriter<fs::File>>,
}

impl CsvLog {
    fn create(out_dir: &Option<PathBuf>) -> Result<Self> {
        let Some(dir) = out_dir else {
            return Ok(Self { file: None });
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.clone(), e))?;
        let path = dir.join("train_log.csv");
        let mut f =
            std::io::BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        writeln!(f, "epoch,step,lr,neg_lik,kl_z,kl_sigma,total").map_err(|e| Error::io(&path, e))?;
        Ok(Self { file: Some(f) })
    }

    fn row(&mut self, log: &StepLog) {
        if let Some(f) = &mut self.file {
            let _ = writeln!(
                f,
                "{},{},{},{},{},{},{}",
                log.epoch,
                log.step,
                log.lr,
                log.loss.neg_likelihood,
                log.loss.kl_z,
                log.loss.kl_sigma,
                log.loss.total
            );
        }
    }

    fn flush(&mut self) {
        if let Some(f) = &mut self.file {
            let _ = f.flush();
        }
    }
}

/// Train from scratch or resume from a checkpoint.
///
/// Patches are cropped on the fly from the training pairs; each batch slot
/// draws an image index, a window corner and (when `augment` is on) a
/// dihedral transform from the data stream RNG, whose word position is stored
/// in checkpoints so a resumed run replays the identical sequence.
pub fn train(
    data: &PairedDataset,
    cfg: &TrainConfig,
    dnet_cfg: DNetConfig,
    snet_cfg: SNetConfig,
    opts: &TrainOptions,
    resume: Option<Checkpoint>,
) -> Result<TrainResult> {
    cfg.validate()?;
    dnet_cfg.validate()?;
    snet_cfg.validate()?;
    for (i, (noisy, _)) in data.pairs.iter().enumerate() {
        let (_, h, w) = noisy.shape();
        if h < cfg.patch_size || w < cfg.patch_size {
            return Err(Error::InvalidParam(format!(
                "image {i} ({h}x{w}) smaller than patch size {}",
                cfg.patch_size
            )));
        }
    }

    let data_seed = seed::mix(cfg.seed, "data");
    let (mut dnet, mut snet, mut adam_d, mut adam_s, mut data_rng, start_epoch, mut global_step) =
        match resume {
            Some(ck) => {
                let dnet = ck.dnet;
                let snet = ck.snet;
                let adam = ck
                    .adam
                    .ok_or_else(|| Error::Checkpoint("checkpoint lacks optimizer state".into()))?;
                let rng_state = ck
                    .data_rng
                    .ok_or_else(|| Error::Checkpoint("checkpoint lacks RNG state".into()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(rng_state.seed);
                rng.set_word_pos(rng_state.word_pos());
                (dnet, snet, adam.0, adam.1, rng, ck.epoch, ck.step)
            }
            None => {
                let dnet = DNet::init(dnet_cfg, seed::mix(cfg.seed, "init-dnet"));
                let snet = SNet::init(snet_cfg, seed::mix(cfg.seed, "init-snet"));
                let adam_d = AdamState::for_params(&dnet.param_slices());
                let adam_s = AdamState::for_params(&snet.param_slices());
                let rng = ChaCha8Rng::seed_from_u64(data_seed);
                (dnet, snet, adam_d, adam_s, rng, 0usize, 0u64)
            }
        };

    let mut csv = CsvLog::create(&opts.out_dir)?;
    let mut history = Vec::new();
    let steps_per_epoch = cfg.steps_per_epoch();

    for epoch in start_epoch..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        for _ in 0..steps_per_epoch {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let idx = data_rng.gen_range(0..data.pairs.len());
                let (noisy, clean) = &data.pairs[idx];
                let (_, h, w) = noisy.shape();
                let y0 = data_rng.gen_range(0..=h - cfg.patch_size);
                let x0 = data_rng.gen_range(0..=w - cfg.patch_size);
                let mut pn = crop_window(noisy, y0, x0, cfg.patch_size);
                let mut pc = crop_window(clean, y0, x0, cfg.patch_size);
                if cfg.augment {
                    let k = data_rng.gen_range(0..8u8);
                    pn = dihedral(&pn, k);
                    pc = dihedral(&pc, k);
                }
                batch.push((pn, pc));
            }

            let loss = match cfg.loss {
                LossMode::Elbo => {
                    let mut g = batch_gradients(&dnet, &snet, &batch, cfg)?;
                    if !g.loss.is_finite() {
                        let dump = dump_batch(&opts.out_dir, &batch);
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            step: (global_step % steps_per_epoch as u64) as usize,
                            dump,
                        });
                    }
                    clip_and_step(
                        &mut dnet,
                        &mut snet,
                        &mut g.dnet,
                        &mut g.snet,
                        &mut adam_d,
                        &mut adam_s,
                        lr,
                    );
                    g.loss
                }
                LossMode::Mse => {
                    let (mut gd, mse) = batch_gradients_mse(&dnet, &batch)?;
                    if !mse.is_finite() {
                        let dump = dump_batch(&opts.out_dir, &batch);
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            step: (global_step % steps_per_epoch as u64) as usize,
                            dump,
                        });
                    }
                    let norm = grad_sq_norm(&gd).sqrt();
                    if norm > GRAD_CLIP_NORM {
                        scale_params(&mut gd, (GRAD_CLIP_NORM / norm) as f32);
                    }
                    let gslices = gd.param_slices();
                    adam_d.step(&mut dnet.param_slices_mut(), &gslices, lr);
                    // The MSE objective is the degenerate kl_z term; log it there.
                    LossBreakdown::from_parts(0.0, mse, 0.0)
                }
            };

            global_step += 1;
            let row = StepLog {
                epoch,
                step: global_step,
                lr,
                loss,
            };
            csv.row(&row);
            history.push(row);
        }
        csv.flush();

        let completed = epoch + 1;
        let snapshot = |epochs_done: usize| -> Checkpoint {
            Checkpoint {
                dnet: dnet.clone(),
                snet: snet.clone(),
                train_cfg: Some(*cfg),
                epoch: epochs_done,
                step: global_step,
                seed: cfg.seed,
                adam: Some((adam_d.clone(), adam_s.clone())),
                data_rng: Some(RngState::new(data_seed, data_rng.get_word_pos())),
            }
        };
        if let Some(dir) = &opts.out_dir {
            if opts.checkpoint_every > 0 && completed % opts.checkpoint_every == 0 {
                crate::checkpoint::save_checkpoint(&snapshot(completed), &dir.join("checkpoint-latest"))?;
            }
            if completed == cfg.epochs {
                crate::checkpoint::save_checkpoint(&snapshot(completed), &dir.join("checkpoint-final"))?;
            }
        }
    }

    let final_ckpt = Checkpoint {
        dnet,
        snet,
        train_cfg: Some(*cfg),
        epoch: cfg.epochs,
        step: global_step,
        seed: cfg.seed,
        adam: Some((adam_d, adam_s)),
        data_rng: Some(RngState::new(data_seed, data_rng.get_word_pos())),
    };
    Ok(TrainResult {
        checkpoint: final_ckpt,
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn clip_and_step(
    dnet: &mut DNet,
    snet: &mut SNet,
    gd: &mut DNet,
    gs: &mut SNet,
    adam_d: &mut AdamState,
    adam_s: &mut AdamState,
    lr: f64,
) {
    let norm = (grad_sq_norm(gd) + grad_sq_norm(gs)).sqrt();
    if norm > GRAD_CLIP_NORM {
        let k = (GRAD_CLIP_NORM / norm) as f32;
        scale_params(gd, k);
        scale_params(gs, k);
    }
    let gd_slices = gd.param_slices();
    adam_d.step(&mut dnet.param_slices_mut(), &gd_slices, lr);
    let gs_slices = gs.param_slices();
    adam_s.step(&mut snet.param_slices_mut(), &gs_slices, lr);
}

fn dump_batch(out_dir: &Option<PathBuf>, batch: &[(ImageTensor, ImageTensor)]) -> Option<PathBuf> {
    let dir = out_dir.as_ref()?.join("diagnostics");
    fs::create_dir_all(&dir).ok()?;
    for (i, (noisy, clean)) in batch.iter().enumerate() {
        let _ = vdna::save_array(noisy, &dir.join(format!("noisy_{i:02}.vdna")));
        let _ = vdna::save_array(clean, &dir.join(format!("clean_{i:02}.vdna")));
    }
    Some(dir)
}
