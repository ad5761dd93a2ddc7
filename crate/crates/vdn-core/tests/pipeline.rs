//! End-to-end training behavior: loss trend, determinism, bit-exact resume,
//! gradient flow, the MSE-degeneration mechanism, and failure handling.

use vdn_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
use vdn_core::dataset::PairedDataset;
use vdn_core::experiment::synthetic_clean_images;
use vdn_core::nn::{DNet, DNetConfig, ParamWalk, SNet, SNetConfig};
use vdn_core::noise::{make_dataset, MapFamilySpec};
use vdn_core::train::{
    batch_gradients, batch_gradients_mse, train, AdamState, TrainConfig, TrainOptions,
    TrainResult,
};

fn micro_nets() -> (DNetConfig, SNetConfig) {
    (
        DNetConfig {
            depth: 2,
            base_channels: 8,
            in_channels: 1,
            m_sq_init: 1e-4,
        },
        SNetConfig {
            layers: 3,
            channels: 8,
            in_channels: 1,
            ..SNetConfig::default()
        },
    )
}

fn toy_dataset(n: usize, size: usize, seed: u64) -> PairedDataset {
    let cleans = synthetic_clean_images(n, 1, size, size, seed);
    make_dataset(&cleans, &MapFamilySpec::bump((0.5, 0.5), 0.3), seed ^ 0xabc)
        .unwrap()
        .pairs
}

fn micro_train_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        patches_per_epoch: 32,
        patch_size: 24,
        batch_size: 4,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn run(cfg: &TrainConfig, data: &PairedDataset, resume: Option<Checkpoint>) -> TrainResult {
    let (d, s) = micro_nets();
    train(data, cfg, d, s, &TrainOptions::default(), resume).unwrap()
}

fn params_bits<N: ParamWalk>(net: &N) -> Vec<u32> {
    net.param_slices()
        .iter()
        .flat_map(|s| s.iter().map(|v| v.to_bits()))
        .collect()
}

// 200 steps on a 16-image toy set: the trailing window average of the total
// loss must sit below the leading one.
#[test]
fn training_reduces_the_loss() {
    let data = toy_dataset(16, 32, 11);
    let cfg = TrainConfig {
        epochs: 4,
        patches_per_epoch: 200,
        patch_size: 24,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let result = run(&cfg, &data, None);
    assert_eq!(result.history.len(), 200);
    let window = 20;
    let head: f64 = result.history[..window]
        .iter()
        .map(|s| s.loss.total)
        .sum::<f64>()
        / window as f64;
    let tail: f64 = result.history[result.history.len() - window..]
        .iter()
        .map(|s| s.loss.total)
        .sum::<f64>()
        / window as f64;
    assert!(
        tail < head,
        "loss did not trend down: head {head}, tail {tail}"
    );
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = toy_dataset(4, 32, 21);
    let cfg = micro_train_cfg();
    let a = run(&cfg, &data, None);
    let b = run(&cfg, &data, None);
    assert_eq!(a.history, b.history);
    assert_eq!(params_bits(&a.checkpoint.dnet), params_bits(&b.checkpoint.dnet));
    assert_eq!(params_bits(&a.checkpoint.snet), params_bits(&b.checkpoint.snet));

    let c = run(
        &TrainConfig {
            seed: 8,
            ..cfg
        },
        &data,
        None,
    );
    assert_ne!(params_bits(&a.checkpoint.dnet), params_bits(&c.checkpoint.dnet));
}

#[test]
fn resume_replays_the_uninterrupted_run_bit_for_bit() {
    let data = toy_dataset(4, 32, 31);
    let full_cfg = TrainConfig {
        epochs: 4,
        ..micro_train_cfg()
    };
    let full = run(&full_cfg, &data, None);

    let half_cfg = TrainConfig {
        epochs: 2,
        ..full_cfg
    };
    let half = run(&half_cfg, &data, None);

    // Round-trip the mid-run checkpoint through disk before resuming.
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&half.checkpoint, dir.path()).unwrap();
    let restored = load_checkpoint(dir.path()).unwrap();
    let resumed = run(&full_cfg, &data, Some(restored));

    // The resumed half reproduces the second half of the full run,
    // including the very next step's loss.
    let steps = full_cfg.steps_per_epoch() * 2;
    assert_eq!(resumed.history.len(), steps);
    assert_eq!(&full.history[steps..], &resumed.history[..]);
    assert_eq!(
        params_bits(&full.checkpoint.dnet),
        params_bits(&resumed.checkpoint.dnet)
    );
    assert_eq!(
        params_bits(&full.checkpoint.snet),
        params_bits(&resumed.checkpoint.snet)
    );
    assert_eq!(
        full.checkpoint.data_rng.unwrap().word_pos(),
        resumed.checkpoint.data_rng.unwrap().word_pos()
    );
}

// Every parameter of both networks receives gradient from the bound on a
// random batch: the likelihood term feeds the S-Net, the KL terms the D-Net.
#[test]
fn gradient_flows_to_every_parameter()
{
    let data = toy_dataset(4, 32, 41);
    let (dcfg, scfg) = micro_nets();
    let dnet = DNet::init(dcfg, 1);
    let snet = SNet::init(scfg, 2);
    let batch: Vec<_> = data.pairs[..2].to_vec();
    let g = batch_gradients(&dnet, &snet, &batch, &micro_train_cfg()).unwrap();
    for (name, conv) in g.dnet.convs() {
        assert!(
            conv.w.iter().any(|&v| v != 0.0),
            "dead D-Net weights in {name}"
        );
        assert!(
            conv.b.iter().any(|&v| v != 0.0),
            "dead D-Net biases in {name}"
        );
    }
    for (name, conv) in g.snet.convs() {
        assert!(
            conv.w.iter().any(|&v| v != 0.0),
            "dead S-Net weights in {name}"
        );
        assert!(
            conv.b.iter().any(|&v| v != 0.0),
            "dead S-Net biases in {name}"
        );
    }
}

// With epsilon0_sq driven to 1e-12, the S-Net detached and the m_sq head
// pinned below its objective floor (so the clamp zeroes that path), the
// D-Net gradient of the bound points where a pure MSE gradient points.
#[test]
fn degenerate_objective_steps_like_mse() {
    let data = toy_dataset(4, 32, 51);
    let (dcfg, scfg) = micro_nets();
    let mut dnet = DNet::init(dcfg, 3);
    let snet = SNet::init(scfg, 4);
    // Pin the m_sq head: zero weights, bias deep below softplus^-1(floor).
    let cin = dcfg.in_channels;
    dnet.head
        .w
        .slice_mut(ndarray::s![cin.., .., .., ..])
        .fill(0.0);
    for c in cin..2 * cin {
        dnet.head.b[c] = -30.0;
    }

    let cfg = TrainConfig {
        epsilon0_sq: 1e-12,
        ..micro_train_cfg()
    };
    let batch: Vec<_> = data.pairs[..4].to_vec();
    let elbo = batch_gradients(&dnet, &snet, &batch, &cfg).unwrap();
    let (mse, _) = batch_gradients_mse(&dnet, &batch).unwrap();

    let a: Vec<f64> = elbo
        .dnet
        .param_slices()
        .iter()
        .flat_map(|s| s.iter().map(|&v| v as f64))
        .collect();
    let b: Vec<f64> = mse
        .param_slices()
        .iter()
        .flat_map(|s| s.iter().map(|&v| v as f64))
        .collect();
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (na * nb);
    assert!(cosine > 0.999, "cosine similarity {cosine}");
}

// Term-ratio form of the same degeneration: with epsilon0_sq at 1e-12 the
// kl_z term dwarfs the other two after a short warmup.
#[test]
fn kl_z_dominates_for_vanishing_epsilon0() {
    let data = toy_dataset(4, 32, 61);
    let cfg = TrainConfig {
        epochs: 1,
        patches_per_epoch: 40,
        epsilon0_sq: 1e-12,
        ..micro_train_cfg()
    };
    let result = run(&cfg, &data, None);
    let last = result.history.last().unwrap().loss;
    assert!(last.kl_z > 1e3 * (last.neg_likelihood.abs() + last.kl_sigma.abs()));
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let data = toy_dataset(2, 32, 71);
    let (dcfg, scfg) = micro_nets();
    // Poison the D-Net so activations overflow f32 into inf.
    let mut dnet = DNet::init(dcfg, 5);
    dnet.head.b.fill(f32::MAX);
    dnet.head.w.fill(f32::MAX / 4.0);
    let snet = SNet::init(scfg, 6);
    let adam = (
        AdamState::for_params(&dnet.param_slices()),
        AdamState::for_params(&snet.param_slices()),
    );
    let poisoned = Checkpoint {
        dnet,
        snet,
        train_cfg: None,
        epoch: 0,
        step: 0,
        seed: 7,
        adam: Some(adam),
        data_rng: Some(RngState::new(1, 0)),
    };
    let out = tempfile::tempdir().unwrap();
    let cfg = micro_train_cfg();
    let (d, s) = micro_nets();
    let err = match train(
        &data,
        &cfg,
        d,
        s,
        &TrainOptions {
            out_dir: Some(out.path().to_path_buf()),
            checkpoint_every: 0,
        },
        Some(poisoned),
    ) {
        Ok(_) => panic!("expected the poisoned run to abort"),
        Err(e) => e,
    };
    match err {
        vdn_core::Error::NonFiniteLoss { dump, .. } => {
            let dump = dump.expect("dump directory recorded");
            assert!(dump.join("noisy_00.vdna").exists());
            assert!(dump.join("clean_00.vdna").exists());
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}

#[test]
fn training_writes_logs_and_checkpoints() {
    let data = toy_dataset(4, 32, 81);
    let cfg = micro_train_cfg();
    let out = tempfile::tempdir().unwrap();
    let (d, s) = micro_nets();
    let result = train(
        &data,
        &cfg,
        d,
        s,
        &TrainOptions {
            out_dir: Some(out.path().to_path_buf()),
            checkpoint_every: 1,
        },
        None,
    )
    .unwrap();

    let log = std::fs::read_to_string(out.path().join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,step,lr,neg_lik,kl_z,kl_sigma,total"
    );
    assert_eq!(lines.count(), result.history.len());

    let final_ck = load_checkpoint(&out.path().join("checkpoint-final")).unwrap();
    assert_eq!(
        params_bits(&final_ck.dnet),
        params_bits(&result.checkpoint.dnet)
    );
    assert!(out.path().join("checkpoint-latest").exists());
}

// The spec'd patch-count reading of one epoch: steps = patches / batch.
#[test]
fn steps_per_epoch_accounting() {
    let cfg = TrainConfig {
        patches_per_epoch: 200,
        batch_size: 8,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.steps_per_epoch(), 25);
}
