use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "epsilons": [0.2, 0.1],
  "n_interior": 63,
  "n_modes": 12,
  "n_samples": 3,
  "flow_times": 11,
  "lp": { "tol_fix": 1e-8 }
}"#;

fn imlab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_imlab"));
    cmd.args(args).env_remove("IMLAB_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("IMLAB_OUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn spectrum_and_gap_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = imlab(&["spectrum", "--epsilon", "0.1", "--out", out], None);
    assert_eq!(run.status.code(), Some(0));
    assert!(dir.path().join("spectrum.csv").exists());
    let run = imlab(&["gap", "--out", out], None);
    assert_eq!(run.status.code(), Some(0));
    let gap: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gap.json")).unwrap()).unwrap();
    assert_eq!(gap["smallest_m"], 1);
}

#[test]
fn sweep_writes_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let run = imlab(
        &["sweep", "--config", &config, "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    for name in ["sweep.csv", "summary.json", "plot.gp"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("env-out");
    let run = imlab(&["gap", "--config", &config], Some(&out));
    assert_eq!(run.status.code(), Some(0));
    assert!(out.join("gap.json").exists());
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), r#"{"kapa": 1.0}"#);
    assert_eq!(
        imlab(&["gap", "--config", &unknown], None).status.code(),
        Some(2)
    );
    let out = dir.path().to_str().unwrap();
    let run = imlab(&["gap", "--kappa", "-1", "--out", out], None);
    assert_eq!(run.status.code(), Some(2));
    let run = imlab(
        &[
            "sweep",
            "--epsilon",
            "0.1",
            "--epsilon",
            "0.2",
            "--out",
            out,
        ],
        None,
    );
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn failed_row_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let run = imlab(
        &[
            "sweep",
            "--config",
            &config,
            "--kappa",
            "7.25",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("epsilon = 0.2"));
    assert!(out.join("sweep.csv").exists());
}
