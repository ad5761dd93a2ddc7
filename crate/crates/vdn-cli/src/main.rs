//! `vdn`: train, apply and audit the variational denoiser from the command
//! line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
//! configuration. Failures print a single machine-parsable line to stderr:
//! `vdn: error: <message>`.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ConfigError;

#[derive(Parser)]
#[command(name = "vdn", version, about = "Blind denoising with per-pixel noise estimation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a noisy/clean dataset directory from a map-family spec.
    Simulate {
        /// JSON spec: map family, image count/size, optional clean_dir.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a dataset directory.
    Train {
        /// Flat JSON config; defaults to the desk preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// KEY=VALUE config overrides (repeatable); flags win over the file.
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Denoise a PNG (or every PNG in a directory).
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the per-pixel noise map for a PNG.
    EstimateNoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// `.vdna` for the raw array, `.png` for a heatmap.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation protocol (cases, awgn, eps-sweep, p-sweep,
    /// mse-baseline), or apply a checkpoint to a dataset directory.
    Evaluate {
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Audit the closed-form bound against its Monte-Carlo estimate.
    CheckElbo {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Relative output paths resolve under `VDN_OUT_ROOT` when it is set.
fn resolve_out(path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        return path;
    }
    match std::env::var_os("VDN_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(path),
        None => path,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Simulate { spec, out, seed } => {
            commands::simulate(&spec, &resolve_out(out), seed)?;
        }
        Cmd::Train {
            config,
            data,
            out,
            set,
            seed,
            resume,
        } => {
            commands::train_cmd(
                config.as_deref(),
                &set,
                &data,
                &resolve_out(out),
                seed,
                resume.as_deref(),
            )?;
        }
        Cmd::Denoise { ckpt, input, out } => {
            commands::denoise_cmd(&ckpt, &input, &resolve_out(out))?;
        }
        Cmd::EstimateNoise { ckpt, input, out } => {
            commands::estimate_noise_cmd(&ckpt, &input, &resolve_out(out))?;
        }
        Cmd::Evaluate {
            protocol,
            ckpt,
            data,
            out,
            config,
            set,
            seed,
        } => {
            commands::evaluate_cmd(
                &protocol,
                ckpt.as_deref(),
                data.as_deref(),
                &resolve_out(out),
                config.as_deref(),
                &set,
                seed,
            )?;
        }
        Cmd::CheckElbo {
            trials,
            samples,
            seed,
            out,
        } => {
            commands::check_elbo_cmd(trials, samples, seed, out.map(resolve_out).as_deref())?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse(); // usage errors exit 2
    if let Err(err) = run(cli) {
        let msg: String = err
            .to_string()
            .chars()
            .map(|c| if c == '\n' { ' ' } else { c })
            .collect();
        eprintln!("vdn: error: {msg}");
        let code = if err.downcast_ref::<ConfigError>().is_some() {
            3
        } else {
            1
        };
        std::process::exit(code);
    }
}
