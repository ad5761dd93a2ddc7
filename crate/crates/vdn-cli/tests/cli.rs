//! End-to-end checks of the `vdn` binary: exit codes, dataset layout,
//! the train/denoise/estimate/evaluate chain, and the bound audit CSV.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vdn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vdn"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn vdn");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_spec(dir: &Path, count: usize, size: usize, seed: u64) -> PathBuf {
    let spec = serde_json::json!({
        "map": {
            "kind": "gaussian-bump",
            "peak_sigma": 0.25,
            "base_sigma": 0.02,
            "center": [0.5, 0.5],
            "width": 0.3,
            "seed": 0
        },
        "count": count,
        "height": size,
        "width": size,
        "channels": 1,
        "seed": seed
    });
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

#[test]
fn usage_errors_exit_2() {
    let out = vdn().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = vdn().args(["denoise", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--bogus-flag") || stderr.to_lowercase().contains("usage"));
}

#[test]
fn invalid_config_exits_3_with_one_line_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), 2, 32, 1);
    let data = tmp.path().join("data");
    run_ok(vdn().args(["simulate", "--spec"]).arg(&spec).arg("--out").arg(&data));

    let out = vdn()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("run"))
        .args(["--set", "not_a_key=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    assert!(lines[0].starts_with("vdn: error:"));
    assert!(lines[0].contains("not_a_key"));
}

#[test]
fn simulate_is_deterministic_and_lays_out_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), 3, 24, 7);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(vdn().args(["simulate", "--spec"]).arg(&spec).arg("--out").arg(&a));
    run_ok(vdn().args(["simulate", "--spec"]).arg(&spec).arg("--out").arg(&b));

    for sub in ["clean", "noisy", "sigma"] {
        assert!(a.join(sub).is_dir(), "missing {sub}/");
        assert_eq!(std::fs::read_dir(a.join(sub)).unwrap().count(), 3);
    }
    assert!(a.join("manifest").exists());
    assert!(a.join("run_manifest.jsonl").exists());

    // Identical seed + spec: identical artifacts.
    for file in ["noisy/0001.png", "sigma/0002.vdna", "manifest"] {
        let bytes_a = std::fs::read(a.join(file)).unwrap();
        let bytes_b = std::fs::read(b.join(file)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{file} differs between identical runs");
    }
}

#[test]
fn train_denoise_estimate_evaluate_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), 3, 32, 11);
    let data = tmp.path().join("data");
    run_ok(vdn().args(["simulate", "--spec"]).arg(&spec).arg("--out").arg(&data));

    let run_dir = tmp.path().join("run");
    run_ok(
        vdn()
            .args(["train", "--data"])
            .arg(&data)
            .arg("--out")
            .arg(&run_dir)
            .args([
                "--set",
                "preset=micro",
                "--set",
                "epochs=1",
                "--set",
                "patches_per_epoch=8",
            ]),
    );
    let ckpt = run_dir.join("checkpoint-final");
    assert!(ckpt.join("manifest.json").exists());
    assert!(run_dir.join("train_log.csv").exists());
    let manifest = std::fs::read_to_string(run_dir.join("run_manifest.jsonl")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines.len(), 2, "start and end records");
    let start: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(start["event"], "start");
    assert_eq!(start["config"]["preset"], "micro");

    // Denoise the noisy directory.
    let den = tmp.path().join("denoised");
    run_ok(
        vdn()
            .args(["denoise", "--ckpt"])
            .arg(&ckpt)
            .arg("--in")
            .arg(data.join("noisy"))
            .arg("--out")
            .arg(&den),
    );
    assert_eq!(std::fs::read_dir(&den).unwrap().count(), 3);

    // Estimate the sigma map both ways.
    let sig_arr = tmp.path().join("sigma.vdna");
    run_ok(
        vdn()
            .args(["estimate-noise", "--ckpt"])
            .arg(&ckpt)
            .arg("--in")
            .arg(data.join("noisy/0000.png"))
            .arg("--out")
            .arg(&sig_arr),
    );
    let map = vdn_core::vdna::load_array(&sig_arr).unwrap();
    assert_eq!(map.shape(), (1, 32, 32));
    assert!(map.as_slice().iter().all(|&v| v > 0.0));
    let sig_png = tmp.path().join("sigma.png");
    run_ok(
        vdn()
            .args(["estimate-noise", "--ckpt"])
            .arg(&ckpt)
            .arg("--in")
            .arg(data.join("noisy/0000.png"))
            .arg("--out")
            .arg(&sig_png),
    );
    assert!(sig_png.exists());

    // Apply the checkpoint to the dataset directory.
    let eval_dir = tmp.path().join("eval");
    run_ok(
        vdn()
            .args(["evaluate", "--protocol", "cases", "--ckpt"])
            .arg(&ckpt)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&eval_dir)
            .args(["--set", "preset=micro"]),
    );
    let summary = std::fs::read_to_string(eval_dir.join("eval_summary.csv")).unwrap();
    assert!(summary.starts_with("label,noisy_psnr_db,psnr_db,ssim"));
    assert_eq!(
        std::fs::read_to_string(eval_dir.join("eval_per_image.csv"))
            .unwrap()
            .lines()
            .count(),
        4 // header + 3 images
    );
    assert!(eval_dir.join("sigma_true.png").exists());
    assert!(eval_dir.join("sigma_pred.png").exists());
}

#[test]
fn evaluate_runs_a_protocol_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report");
    run_ok(
        vdn()
            .args(["evaluate", "--protocol", "mse-baseline"])
            .arg("--out")
            .arg(&out)
            .args(["--set", "preset=micro"]),
    );
    let summary = std::fs::read_to_string(out.join("mse_baseline_summary.csv")).unwrap();
    assert!(summary.lines().count() >= 2);
    assert!(out.join("mse_baseline_per_image.csv").exists());
    assert!(out.join("run_manifest.jsonl").exists());
}

#[test]
fn check_elbo_writes_the_audit_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv_path = tmp.path().join("audit.csv");
    run_ok(
        vdn()
            .args(["check-elbo", "--trials", "20", "--samples", "10000", "--seed", "3"])
            .arg("--out")
            .arg(&csv_path),
    );
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "trial,analytic,mc_mean,mc_stderr,z_score");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    for row in rows {
        let z: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(z.abs() < 3.0, "row {row}");
    }
}

#[test]
fn out_root_env_var_redirects_relative_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), 2, 24, 5);
    run_ok(
        vdn()
            .env("VDN_OUT_ROOT", tmp.path())
            .args(["simulate", "--spec"])
            .arg(&spec)
            .args(["--out", "rooted-data"]),
    );
    assert!(tmp.path().join("rooted-data/manifest").exists());
}
