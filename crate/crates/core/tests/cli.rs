use std::process::Command as Proc;

use lcft_lab::cli::{parse_config, run_experiment, Command};
use lcft_lab::Error;

const CORRELATE: &str = r#"
command = "correlate"

[surface]
kind = "flat-cylinder"
height = 1.0

[params]
gamma = 1.0

[[insertions.bulk]]
point = { u = 0.5, v = 0.0 }
alpha = 1.0

[mesh]
eps = 0.1
modes = 128

[mc]
n_samples = 200
seed = 4
"#;

#[test]
fn minimal_config_round_trips() {
    let a = parse_config(CORRELATE).unwrap();
    assert_eq!(a.command, Command::Correlate);
    assert_eq!(a.params.mu, 1.0);
    let b = parse_config(&a.to_toml()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn hash_tracks_content_not_output() {
    let a = parse_config(CORRELATE).unwrap();
    let mut b = a.clone();
    b.output.dir = Some("elsewhere".into());
    assert_eq!(a.hash(), b.hash());
    b.mc.seed = 5;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn gamma_out_of_range_names_the_interval() {
    let text = CORRELATE.replace("gamma = 1.0", "gamma = 2.5");
    let e = parse_config(&text).unwrap_err();
    assert!(matches!(e, Error::InvalidParameter { name: "gamma", .. }));
    assert!(e.to_string().contains("(0, 2]"), "{e}");
}

#[test]
fn vanishing_cosmological_constants_rejected() {
    let text = CORRELATE.replace("gamma = 1.0", "gamma = 1.0\nmu = 0.0\nmu_boundary = 0.0");
    let e = parse_config(&text).unwrap_err();
    assert!(e.to_string().contains("not renormalizable"), "{e}");
}

#[test]
fn missing_and_unknown_keys_rejected() {
    let e = parse_config(&CORRELATE.replace("gamma = 1.0", "")).unwrap_err();
    assert!(e.to_string().contains("gamma"), "{e}");
    assert!(parse_config(&CORRELATE.replace("seed = 4", "seed = 4\nsamples = 3")).is_err());
    assert!(parse_config(&CORRELATE.replace("\"correlate\"", "\"plot\"")).is_err());
}

#[test]
fn reports_are_deterministic() {
    let cfg = parse_config(CORRELATE).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let a = run_experiment(&cfg, Some(d1.path())).unwrap();
    let b = run_experiment(&cfg, Some(d2.path())).unwrap();
    assert_eq!(a.without_timing(), b.without_timing());
    let text = std::fs::read_to_string(d1.path().join("report.json")).unwrap();
    assert!(text.contains(&cfg.hash()));
}

fn bin() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_lcft-lab"))
}

#[test]
fn inadmissible_seiberg_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CORRELATE.replace("\"correlate\"", "\"check-seiberg\"").replace("alpha = 1.0", "alpha = 3.0")).unwrap();
    let out = bin().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bound2"));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CORRELATE.replace("gamma = 1.0", "gamma = 2.5")).unwrap();
    let out = bin().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(0, 2]"));
}

#[test]
fn weyl_check_reports_slope_and_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "command = \"weyl-check\"\n[params]\ngamma = 1.0\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let metric = |n: &str| r["metrics"].as_array().unwrap().iter().find(|m| m["name"] == n).unwrap().clone();
    assert!((metric("predicted")["value"].as_f64().unwrap() - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    assert!(metric("slope")["value"].as_f64().is_some());
    assert_eq!(metric("relative_error")["pass"], true);
    assert!(dir.path().join("o/report.json").exists());
}

#[test]
fn seed_and_workers_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CORRELATE).unwrap();
    let run = |w: &str| {
        let out = bin().args(["--seed", "9", "--workers", w]).arg("--config").arg(&cfg).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(r["seed"], 9);
        r["metrics"].clone()
    };
    assert_eq!(run("1"), run("2"));
}
