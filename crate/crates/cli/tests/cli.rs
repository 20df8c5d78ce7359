use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eit-shapes"));
    c.env_remove("EIT_SHAPES_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synthesize_writes_data_figure_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = run(&["synthesize", "pentagon", "--level", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["measurements.json", "measurements.csv", "truth.json", "truth.svg", "truth.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let data: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("measurements.json")).unwrap()).unwrap();
    assert_eq!(data["patterns"].as_array().unwrap().len(), 6);
    assert!(data.get("noise_meta").map_or(true, |m| m.is_null()));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|v| v == "truth.svg"));
}

#[test]
fn synthesize_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["synthesize", "square", "--level", "4", "--noise", "0.03", "--seed", "11", "--out", s(d)]);
        assert_eq!(code(&o), 0);
    }
    for f in ["measurements.json", "truth.svg", "measurements.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn noisy_heart_lung_logs_achieved_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hl");
    let o = run(&["synthesize", "heart_lung", "--level", "8", "--noise", "0.05", "--seed", "7", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("achieved level") && stdout.contains("28 patterns"), "{stdout}");
    let data: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("measurements.json")).unwrap()).unwrap();
    assert_eq!(data["noise_meta"]["seed"], 7);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&run(&["synthesize", "pentagon", "--level", "5", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["synthesize", "hexagon", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["synthesize", "pentagon", "--noise", "-1", "--out", s(&out)])), 2);
    let missing = dir.path().join("nope.json");
    let o = run(&["reconstruct", "--data", s(&missing), "--guess", "ngon:0.5,0.5,0.2,8,10", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["verify", "--phantom", "heart_lung", "--checks", "boundary", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["verify", "--phantom", "pentagon", "--checks", "bogus", "--out", s(&out)])), 2);
}

#[test]
fn reconstruct_short_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&run(&["synthesize", "pentagon", "--out", s(&data)])), 0);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"max_iter": 3, "refine_levels": 1, "snapshot_every": 2}"#).unwrap();
    let out = dir.path().join("r");
    let o = run(&[
        "reconstruct",
        "--data",
        s(&data.join("measurements.json")),
        "--guess",
        "ngon:0.5,0.5,0.25,14,10",
        "--values-known",
        "--config",
        s(&cfg),
        "--truth",
        "pentagon",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(csv.starts_with("iter,misfit,max_theta,beta,sigma0,sigma1\n"));
    let overlay = fs::read_to_string(out.join("reconstruction.svg")).unwrap();
    assert!(overlay.contains(r#"stroke="blue""#));
    for f in ["conductivity.json", "reconstruction.csv", "convergence.svg", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"beta": -1}"#).unwrap();
    let o = run(&[
        "reconstruct",
        "--data",
        s(&data.join("measurements.json")),
        "--guess",
        "ngon:0.5,0.5,0.25,14,10",
        "--config",
        s(&bad_cfg),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn guess_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&run(&["synthesize", "pentagon", "--out", s(&data)])), 0);
    let guess = dir.path().join("guess.txt");
    fs::write(&guess, "ngon:0.5,0.5,0.25,14,10\n").unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"max_iter": 1, "refine_levels": 1}"#).unwrap();
    let out = dir.path().join("r");
    let o = run(&[
        "reconstruct",
        "--data",
        s(&data.join("measurements.json")),
        "--guess",
        s(&guess),
        "--values-known",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = bin()
        .args(["verify", "--phantom", "pentagon", "--checks", "fem,fd,coeff", "--fields", "3", "--out", s(&out)])
        .env("EIT_SHAPES_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.contains("fem,max_nodal_error"));
    assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), 4);
}
