//! The `pricing-lab` binary: exit codes, outputs and the run-directory contract.

use std::fs;
use std::process::Command;

use pricing_lab::cli::read_manifest_error;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pricing-lab"));
    cmd.env_remove("PRICING_LAB_SEED");
    cmd
}

const TINY: &str = r#"{
  "name": "tiny",
  "T": 300,
  "d": 2,
  "sigma": 0.5,
  "c_beta": 0.3,
  "trials": 2,
  "base_seed": 5,
  "context_kind": "stochastic-gaussian",
  "demand_kind": "glm",
  "policies": ["pwp", "rmlp2-modified"],
  "output_dir": "unused"
}"#;

#[test]
fn constants_prints_the_derived_values() {
    let out = bin().arg("constants").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in [
        "J01", "c1", "c2", "Delta", "C_l", "C_G", "C_e", "G", "D", "gamma", "epsilon",
    ] {
        assert!(json[key].is_number(), "missing {key}");
    }
    assert!((json["J01"].as_f64().unwrap() - 0.3759).abs() < 1e-4);
}

#[test]
fn run_then_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.json");
    fs::write(&config, TINY).unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("runs"))
        .args(["--jobs", "1", "--trace"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = std::path::PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    assert_eq!(read_manifest_error(&dir).unwrap(), None);
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(
        summary.starts_with("policy,env,trials,T,slope,slope_stderr,final_mean,final_halfwidth")
    );
    assert!(dir.join("trace_rmlp2-modified_1.csv").exists());

    let plot = bin().arg("plot").arg(&dir).output().unwrap();
    assert_eq!(plot.status.code(), Some(0));
    let svg = fs::read_to_string(dir.join("tiny.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("pwp") && svg.contains("rmlp2-modified"));
}

#[test]
fn seed_override_changes_the_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.json");
    fs::write(&config, TINY).unwrap();
    let run = |seed: Option<&str>| {
        let mut cmd = bin();
        if let Some(s) = seed {
            cmd.env("PRICING_LAB_SEED", s);
        }
        let out = cmd
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(tmp.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let dir = String::from_utf8(out.stdout).unwrap().trim().to_string();
        let snap: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(std::path::Path::new(&dir).join("config.json")).unwrap(),
        )
        .unwrap();
        (
            snap["base_seed"].as_u64().unwrap(),
            snap["materialized"]["theta_star"].clone(),
        )
    };
    let (seed_a, truth_a) = run(None);
    let (seed_b, truth_b) = run(Some("77"));
    assert_eq!((seed_a, seed_b), (5, 77));
    assert_ne!(truth_a, truth_b);
    let bad = bin()
        .env("PRICING_LAB_SEED", "x")
        .args(["run", "--config", "stochastic"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bin().arg("nonsense").status().unwrap().code(), Some(1));
    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        TINY.replace("\"trials\": 2", "\"trials\": 2, \"extra\": 1"),
    )
    .unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    assert_eq!(
        bin().arg("plot").arg(tmp.path()).status().unwrap().code(),
        Some(1)
    );
}

#[test]
fn verify_fails_with_three_when_a_fault_is_injected() {
    let out = bin()
        .args(["verify", "--inject-gradient-fault"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text
        .lines()
        .any(|l| l.starts_with("FAIL") && l.contains("gradient")));
}
