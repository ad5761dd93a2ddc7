//! Run manifests: an append-only JSONL file in every run directory, one
//! start record (command, echoed config, seed, code version, timestamp) and
//! one end record (status, artifact paths).

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{json, Value};

pub const MANIFEST_NAME: &str = "run_manifest.jsonl";

pub struct RunManifest {
    path: PathBuf,
}

impl RunManifest {
    /// Write the start record. The run directory is created if needed.
    pub fn start(out_dir: &Path, command: &str, config: Value, seed: u64) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        let path = out_dir.join(MANIFEST_NAME);
        let record = json!({
            "event": "start",
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "config": config,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "timestamp": chrono::Utc::now().to_rfc3339(),
        });
        append(&path, &record)?;
        Ok(Self { path })
    }

    /// Append the end record with the artifacts the run produced.
    pub fn finish(&self, artifacts: &[PathBuf]) -> anyhow::Result<()> {
        let record = json!({
            "event": "end",
            "status": "ok",
            "artifacts": artifacts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "timestamp": chrono::Utc::now().to_rfc3339(),
        });
        append(&self.path, &record)
    }
}

fn append(path: &Path, record: &Value) -> anyhow::Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{record}").with_context(|| format!("writing {}", path.display()))
}
