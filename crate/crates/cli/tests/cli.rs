use std::path::Path;
use std::process::{Command, Output};

fn dirreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirreg"))
        .args(args)
        .env("DIRREG_THREADS", "1")
        .output()
        .expect("spawn dirreg")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_register_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dirreg(&[
        "generate",
        "rigid2d",
        "--value",
        "60",
        "--out-dir",
        arg(dir.path()),
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.csv", "target.csv", "ground_truth.csv", "truth.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    let t = dir.path().join("t.json");
    let moved = dir.path().join("moved.csv");
    let out = dirreg(&[
        "register",
        arg(&dir.path().join("model.csv")),
        arg(&dir.path().join("target.csv")),
        "--cost",
        "xu",
        "--transform",
        "rot2",
        "--closed",
        "--out-transform",
        arg(&t),
        "--out-points",
        arg(&moved),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&t).unwrap()).unwrap();
    assert_eq!(json["family"], "rotation2d");
    let angle = json["angle"].as_f64().unwrap();
    assert!((angle - 60f64.to_radians()).abs() < 1e-4, "angle {angle}");

    let out = dirreg(&["evaluate", arg(&moved), arg(&dir.path().join("ground_truth.csv"))]);
    assert!(out.status.success());
    let err: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(err < 1e-4, "mean error {err}");
}

#[test]
fn interpolate_endpoint_reproduces_input() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    std::fs::write(&a, r#"{"family":"rotation2d","angle":0.0}"#).unwrap();
    std::fs::write(&b, r#"{"family":"rotation2d","angle":1.0}"#).unwrap();
    let out = dirreg(&["interpolate", "--transforms", arg(&a), arg(&b), "--alphas", "0", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((json["angle"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(dirreg(&["register"]).status.code(), Some(2));
    assert_eq!(
        dirreg(&[
            "generate",
            "no_such_scenario",
            "--value",
            "1",
            "--out-dir",
            arg(dir.path())
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        dirreg(&["evaluate", arg(&missing), arg(&missing)]).status.code(),
        Some(3)
    );

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    let out = dirreg(&["generate", "rigid2d", "--value", "10", "--out-dir", arg(dir.path())]);
    assert!(out.status.success());
    let code = dirreg(&[
        "register",
        arg(&dir.path().join("model.csv")),
        arg(&dir.path().join("target.csv")),
        "--config",
        arg(&cfg),
    ])
    .status
    .code();
    assert_eq!(code, Some(2));
}
