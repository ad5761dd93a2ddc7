//! Flat JSON configuration with command-line overrides.
//!
//! A config file is a single flat object; every training field is a key, and
//! `--set KEY=VALUE` overrides win over the file. Unknown keys are rejected
//! so typos fail loudly (exit code 3).

use std::fmt;
use std::path::Path;

use serde_json::{Map, Value};
use vdn_core::experiment::ExperimentConfig;
use vdn_core::train::LossMode;

/// Configuration errors carry exit code 3.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

const KNOWN_KEYS: &[&str] = &[
    "preset",
    // training
    "epochs",
    "patches_per_epoch",
    "patch_size",
    "batch_size",
    "lr_init",
    "lr_halve_every",
    "lr_floor",
    "epsilon0_sq",
    "p",
    "seed",
    "augment",
    "loss",
    // networks
    "dnet_depth",
    "dnet_base_channels",
    "dnet_m_sq_init",
    "snet_layers",
    "snet_channels",
    "snet_alpha_init",
    "snet_sigma_init",
    // data synthesis / experiments
    "n_train_images",
    "n_test_images",
    "image_size",
    "channels",
    "base_sigma",
    "peak_sigma",
    "data_seed",
];

#[derive(Clone, Debug, Default)]
pub struct FlatConfig {
    map: Map<String, Value>,
}

impl FlatConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("{} is not valid JSON: {e}", path.display())))?;
        match value {
            Value::Object(map) => Ok(Self { map }),
            _ => cfg_err(format!("{} must hold a flat JSON object", path.display())),
        }
    }

    /// Apply `KEY=VALUE` overrides; values parse as JSON scalars, with bare
    /// words falling back to strings (so `--set loss=mse` works unquoted).
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), ConfigError> {
        for s in sets {
            let Some((key, raw)) = s.split_once('=') else {
                return cfg_err(format!("override '{s}' is not KEY=VALUE"));
            };
            let value = serde_json::from_str::<Value>(raw)
                .unwrap_or_else(|_| Value::String(raw.to_string()));
            self.map.insert(key.trim().to_string(), value);
        }
        Ok(())
    }

    /// The exact configuration echoed into run manifests.
    pub fn echo(&self) -> Value {
        Value::Object(self.map.clone())
    }

    fn check_keys(&self) -> Result<(), ConfigError> {
        for key in self.map.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return cfg_err(format!("unknown key '{key}'"));
            }
        }
        Ok(())
    }

    fn get_usize(&self, key: &str, into: &mut usize) -> Result<(), ConfigError> {
        if let Some(v) = self.map.get(key) {
            *into = v
                .as_u64()
                .ok_or_else(|| ConfigError(format!("'{key}' must be a non-negative integer")))?
                as usize;
        }
        Ok(())
    }

    fn get_u64(&self, key: &str, into: &mut u64) -> Result<(), ConfigError> {
        if let Some(v) = self.map.get(key) {
            *into = v
                .as_u64()
                .ok_or_else(|| ConfigError(format!("'{key}' must be a non-negative integer")))?;
        }
        Ok(())
    }

    fn get_f64(&self, key: &str, into: &mut f64) -> Result<(), ConfigError> {
        if let Some(v) = self.map.get(key) {
            *into = v
                .as_f64()
                .ok_or_else(|| ConfigError(format!("'{key}' must be a number")))?;
        }
        Ok(())
    }

    fn get_f32(&self, key: &str, into: &mut f32) -> Result<(), ConfigError> {
        let mut tmp = *into as f64;
        self.get_f64(key, &mut tmp)?;
        *into = tmp as f32;
        Ok(())
    }

    fn get_bool(&self, key: &str, into: &mut bool) -> Result<(), ConfigError> {
        if let Some(v) = self.map.get(key) {
            *into = v
                .as_bool()
                .ok_or_else(|| ConfigError(format!("'{key}' must be true or false")))?;
        }
        Ok(())
    }

    /// Materialize the experiment configuration (which embeds the training
    /// and network configs). `seed_flag` is the `--seed` command-line flag
    /// and wins over the file.
    pub fn experiment(&self, seed_flag: Option<u64>) -> Result<ExperimentConfig, ConfigError> {
        self.check_keys()?;
        let mut cfg = match self.map.get("preset") {
            None => ExperimentConfig::desk(),
            Some(Value::String(s)) if s == "desk" => ExperimentConfig::desk(),
            Some(Value::String(s)) if s == "micro" => ExperimentConfig::micro(),
            Some(other) => return cfg_err(format!("unknown preset {other}")),
        };

        self.get_usize("epochs", &mut cfg.train.epochs)?;
        self.get_usize("patches_per_epoch", &mut cfg.train.patches_per_epoch)?;
        self.get_usize("patch_size", &mut cfg.train.patch_size)?;
        self.get_usize("batch_size", &mut cfg.train.batch_size)?;
        self.get_f64("lr_init", &mut cfg.train.lr_init)?;
        self.get_usize("lr_halve_every", &mut cfg.train.lr_halve_every)?;
        self.get_f64("lr_floor", &mut cfg.train.lr_floor)?;
        self.get_f64("epsilon0_sq", &mut cfg.train.epsilon0_sq)?;
        self.get_usize("p", &mut cfg.train.p)?;
        self.get_u64("seed", &mut cfg.train.seed)?;
        self.get_bool("augment", &mut cfg.train.augment)?;
        if let Some(v) = self.map.get("loss") {
            cfg.train.loss = match v.as_str() {
                Some("elbo") => LossMode::Elbo,
                Some("mse") => LossMode::Mse,
                _ => return cfg_err("'loss' must be \"elbo\" or \"mse\""),
            };
        }

        self.get_usize("dnet_depth", &mut cfg.dnet.depth)?;
        self.get_usize("dnet_base_channels", &mut cfg.dnet.base_channels)?;
        self.get_f64("dnet_m_sq_init", &mut cfg.dnet.m_sq_init)?;
        self.get_usize("snet_layers", &mut cfg.snet.layers)?;
        self.get_usize("snet_channels", &mut cfg.snet.channels)?;
        self.get_f64("snet_alpha_init", &mut cfg.snet.alpha_init)?;
        self.get_f64("snet_sigma_init", &mut cfg.snet.sigma_init)?;

        self.get_usize("n_train_images", &mut cfg.n_train_images)?;
        self.get_usize("n_test_images", &mut cfg.n_test_images)?;
        self.get_usize("image_size", &mut cfg.image_size)?;
        self.get_usize("channels", &mut cfg.channels)?;
        self.get_f32("base_sigma", &mut cfg.base_sigma)?;
        self.get_f32("peak_sigma", &mut cfg.peak_sigma)?;
        self.get_u64("data_seed", &mut cfg.seed)?;

        if let Some(seed) = seed_flag {
            cfg.train.seed = seed;
        }
        cfg.dnet.in_channels = cfg.channels;
        cfg.snet.in_channels = cfg.channels;
        cfg.validate()
            .map_err(|e| ConfigError(format!("rejected by validation: {e}")))?;
        Ok(cfg)
    }
}
