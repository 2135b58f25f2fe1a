use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_cocyclelab");

fn write_config(dir: &Path, name: &str, generator: serde_json::Value, n: usize) -> std::path::PathBuf {
    let config = serde_json::json!({
        "dimension": 2,
        "base": {"type": "rotation", "alpha": 0.6180339887498949},
        "generator": generator,
        "horizons": {"n": n, "grid_size": 256, "detection_horizon": 64},
        "epsilon": 0.5,
        "seed": 11
    });
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn analyze_writes_reports_deterministically() {
    let dir = tempdir("analyze");
    let cfg = write_config(
        &dir,
        "c.json",
        serde_json::json!({"family": "constant", "matrix": [[2.0, 0.0], [0.0, 0.5]]}),
        128,
    );
    for out in ["a", "b"] {
        let status = Command::new(BIN)
            .args(["analyze", "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(dir.join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read(dir.join("a/analysis.json")).unwrap();
    let b = fs::read(dir.join("b/analysis.json")).unwrap();
    assert_eq!(a, b, "analysis.json must be bit-identical across runs");
    let ga = fs::read(dir.join("a/sigma_graph.csv")).unwrap();
    let gb = fs::read(dir.join("b/sigma_graph.csv")).unwrap();
    assert_eq!(ga, gb);

    let analysis: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("a/analysis.json")).unwrap()).unwrap();
    let z = analysis["z_estimate"]["value"].as_f64().unwrap();
    let k = analysis["k_estimate"]["value"].as_f64().unwrap();
    assert!((z - 2.0_f64.ln()).abs() < 1e-6, "Z = {z}");
    assert!((k - 2.0 * 2.0_f64.ln()).abs() < 1e-6, "K = {k}");
    assert_eq!(analysis["domination"]["indices"], serde_json::json!([1]));
}

#[test]
fn invalid_config_is_rejected_with_reason() {
    let dir = tempdir("badcfg");
    let path = dir.join("bad.json");
    fs::write(
        &path,
        r#"{"dimension": 2, "unknown_field": 1, "base": {"type": "rotation", "alpha": 0.618},
            "generator": {"family": "rotation_scale", "lambda": 1.2},
            "horizons": {"n": 16, "grid_size": 16, "detection_horizon": 16},
            "epsilon": 0.5, "seed": 0}"#,
    )
    .unwrap();
    let output = Command::new(BIN)
        .args(["analyze", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("\"error\""), "stderr: {stderr}");
}

#[test]
fn perturb_dominated_exits_with_code() {
    let dir = tempdir("dom");
    let cfg = write_config(
        &dir,
        "c.json",
        serde_json::json!({"family": "constant", "matrix": [[2.0, 0.0], [0.0, 1.0]]}),
        256,
    );
    let output = Command::new(BIN)
        .args(["perturb", "--anchor", "0.2", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("domination_detected"), "stderr: {stderr}");
}

#[test]
fn perturb_conformal_passes() {
    let dir = tempdir("conformal");
    let cfg = write_config(
        &dir,
        "c.json",
        serde_json::json!({"family": "rotation_scale", "lambda": 1.0}),
        256,
    );
    let output = Command::new(BIN)
        .args(["perturb", "--anchor", "0.37", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("verdict            = PASS"), "{stdout}");
    let plan: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("out/plan.json")).unwrap()).unwrap();
    assert_eq!(plan["m0"], serde_json::json!(0)); // early exit
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("cocyclelab-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}
