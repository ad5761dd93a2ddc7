//! Subcommand implementations. Each returns the artifact paths it produced,
//! which the run manifest records.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;
use vdn_core::checkpoint::load_checkpoint;
use vdn_core::experiment::{run_experiment, synthetic_clean_images, Protocol};
use vdn_core::image_io::{load_image, save_heatmap, save_image};
use vdn_core::infer::{denoise, estimate_sigma_map};
use vdn_core::mc::elbo_audit;
use vdn_core::metrics::{psnr, score_pair, score_sigma_map};
use vdn_core::noise::{load_dataset_dir, make_dataset, write_dataset_dir, MapFamilySpec};
use vdn_core::train::{train, TrainOptions};
use vdn_core::vdna;

use crate::config::{ConfigError, FlatConfig};
use crate::manifest::RunManifest;

/// The noise-synthesis spec consumed by `simulate`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub map: MapFamilySpec,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
    /// When set, clean images come from this directory's PNGs instead of the
    /// synthetic generator.
    #[serde(default)]
    pub clean_dir: Option<PathBuf>,
}

fn default_channels() -> usize {
    1
}

pub fn simulate(spec_path: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec: SimulateSpec =
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("bad spec: {e}")))?;
    let seed = seed.unwrap_or(spec.seed);

    let manifest = RunManifest::start(
        out,
        "simulate",
        serde_json::to_value(&text.parse::<serde_json::Value>()?)?,
        seed,
    )?;

    let cleans = match &spec.clean_dir {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "png"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                bail!("no PNG files in {}", dir.display());
            }
            paths
                .iter()
                .map(|p| load_image(p))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => synthetic_clean_images(spec.count, spec.channels, spec.height, spec.width, seed),
    };

    let ds = make_dataset(&cleans, &spec.map, seed)?;
    write_dataset_dir(&ds, out)?;
    let artifacts = vec![out.join("manifest")];
    manifest.finish(&artifacts)?;
    Ok(artifacts)
}

#[allow(clippy::too_many_arguments)]
pub fn train_cmd(
    config: Option<&Path>,
    sets: &[String],
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> anyhow::Result<Vec<PathBuf>> {
    let mut flat = FlatConfig::load(config)?;
    flat.apply_overrides(sets)?;
    let cfg = flat.experiment(seed)?;

    let manifest = RunManifest::start(out, "train", flat.echo(), cfg.train.seed)?;
    let ds = load_dataset_dir(data)?;
    let resume_ckpt = resume.map(load_checkpoint).transpose()?;
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        checkpoint_every: 1,
    };
    let result = train(&ds.pairs, &cfg.train, cfg.dnet, cfg.snet, &opts, resume_ckpt)?;

    let last = result.history.last().map(|s| s.loss.total);
    let artifacts = vec![out.join("train_log.csv"), out.join("checkpoint-final")];
    manifest.finish(&artifacts)?;
    if let Some(total) = last {
        println!("trained {} epochs, final loss {total:.4}", cfg.train.epochs);
    }
    Ok(artifacts)
}

pub fn denoise_cmd(ckpt: &Path, input: &Path, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let checkpoint = load_checkpoint(ckpt)?;
    let inputs: Vec<PathBuf> = if input.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("reading {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            bail!("no PNG files in {}", input.display());
        }
        paths
    } else {
        vec![input.to_path_buf()]
    };

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut artifacts = Vec::new();
    for path in &inputs {
        let y = load_image(path)?;
        let result = denoise(&y, &checkpoint)?;
        let name = path.file_name().context("input has no file name")?;
        let target = out.join(name);
        save_image(&result, &target)?;
        artifacts.push(target);
    }
    println!("denoised {} image(s) into {}", artifacts.len(), out.display());
    Ok(artifacts)
}

pub fn estimate_noise_cmd(ckpt: &Path, input: &Path, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let checkpoint = load_checkpoint(ckpt)?;
    let y = load_image(input)?;
    let map = estimate_sigma_map(&y, &checkpoint)?;
    match out.extension().and_then(|e| e.to_str()) {
        Some("vdna") => vdna::save_array(&map.m, out)?,
        Some("png") => save_heatmap(&map.m, None, out)?,
        _ => bail!("--out must end in .vdna (array) or .png (heatmap)"),
    }
    println!("sigma map written to {}", out.display());
    Ok(vec![out.to_path_buf()])
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_cmd(
    protocol: &str,
    ckpt: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
    config: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> anyhow::Result<Vec<PathBuf>> {
    let mut flat = FlatConfig::load(config)?;
    flat.apply_overrides(sets)?;
    let cfg = flat.experiment(seed)?;
    let protocol = Protocol::parse(protocol).map_err(|e| ConfigError(e.to_string()))?;

    // A `.csv` out path means: treat the parent as the run directory and
    // place the summary at exactly that path.
    let (dir, summary_override) = match out.extension().and_then(|e| e.to_str()) {
        Some("csv") => (
            out.parent().unwrap_or(Path::new(".")).to_path_buf(),
            Some(out.to_path_buf()),
        ),
        _ => (out.to_path_buf(), None),
    };
    let manifest = RunManifest::start(&dir, "evaluate", flat.echo(), cfg.train.seed)?;

    let mut artifacts = Vec::new();
    match (ckpt, data) {
        (Some(ckpt), Some(data)) => {
            // Apply an existing checkpoint to an existing dataset directory.
            let checkpoint = load_checkpoint(ckpt)?;
            let ds = load_dataset_dir(data)?;
            let summary = summary_override.unwrap_or_else(|| dir.join("eval_summary.csv"));
            let per_image = dir.join("eval_per_image.csv");
            let mut rows = String::from("image,noisy_psnr_db,psnr_db,ssim,sigma_pearson_r,sigma_rmse\n");
            let mut mean = (0.0f64, 0.0f64, 0.0f64);
            let n = ds.pairs.len() as f64;
            for (i, ((noisy, clean), truth)) in
                ds.pairs.pairs.iter().zip(&ds.sigma).enumerate()
            {
                let den = denoise(noisy, &checkpoint)?;
                let np = psnr(noisy, clean)?;
                let s = score_pair(&den, clean)?;
                let pred = estimate_sigma_map(noisy, &checkpoint)?;
                let ss = score_sigma_map(&pred, truth)?;
                rows.push_str(&format!(
                    "{i},{np:.4},{:.4},{:.6},{},{:.6}\n",
                    s.psnr,
                    s.ssim,
                    ss.pearson_r.map(|r| format!("{r:.6}")).unwrap_or("nan".into()),
                    ss.rmse
                ));
                mean.0 += np / n;
                mean.1 += s.psnr / n;
                mean.2 += s.ssim / n;
                if i == 0 {
                    let vmax = truth.m.as_slice().iter().cloned().fold(0.0f32, f32::max);
                    let t = dir.join("sigma_true.png");
                    let p = dir.join("sigma_pred.png");
                    save_heatmap(&truth.m, Some(vmax), &t)?;
                    save_heatmap(&pred.m, Some(vmax), &p)?;
                    artifacts.push(t);
                    artifacts.push(p);
                }
            }
            std::fs::write(&per_image, rows)?;
            std::fs::write(
                &summary,
                format!(
                    "label,noisy_psnr_db,psnr_db,ssim\n{},{:.4},{:.4},{:.6}\n",
                    protocol, mean.0, mean.1, mean.2
                ),
            )?;
            artifacts.push(summary);
            artifacts.push(per_image);
        }
        (None, _) => {
            // Self-contained run: synthesize data, train, evaluate.
            let report = run_experiment(protocol, &cfg, Some(&dir))?;
            if let Some(path) = summary_override {
                std::fs::copy(dir.join(format!("{}_summary.csv", protocol.name())), &path)?;
                artifacts.push(path);
            }
            artifacts.push(dir.join(format!("{}_summary.csv", protocol.name())));
            artifacts.push(dir.join(format!("{}_per_image.csv", protocol.name())));
            println!(
                "{}: {} summary rows, {} per-image rows",
                protocol,
                report.summary.len(),
                report.detail.len()
            );
        }
        (Some(_), None) => bail!("--ckpt also needs --data (a dataset directory)"),
    }
    manifest.finish(&artifacts)?;
    Ok(artifacts)
}

pub fn check_elbo_cmd(
    trials: usize,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<Vec<PathBuf>> {
    let rows = elbo_audit(trials, samples, seed)?;
    let mut csv = String::from("trial,analytic,mc_mean,mc_stderr,z_score\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.10},{:.10},{:.10},{:.4}\n",
            r.trial, r.analytic, r.mc_mean, r.mc_stderr, r.z_score
        ));
    }
    let worst = rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
    match out {
        Some(path) => {
            std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
            println!("{trials} trials, max |z| = {worst:.3}, csv at {}", path.display());
            Ok(vec![path.to_path_buf()])
        }
        None => {
            print!("{csv}");
            Ok(vec![])
        }
    }
}
