//! End-to-end tests of the `salem` binary: exit codes, artifact emission,
//! determinism, and error reporting.

use std::path::Path;
use std::process::{Command, Output};

fn salem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salem"))
        .args(args)
        .output()
        .expect("spawn salem")
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const ALL_INTEGERS_TAU2: &str = r#"{
  "m": 1, "n": 1, "theta": [0.0],
  "Q": { "kind": "all_integers" },
  "Psi": { "family": "power", "tau": 2.0 },
  "a": 0.3333333333333333,
  "h": { "family": "constant", "c": 4.0 },
  "Mset": [16, 32, 64, 128]
}"#;

#[test]
fn verify_structural_suite_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = salem(&["verify", "--suite", "structural", "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "stdout:\n{stdout}");
    assert!(stdout.contains("suite structural: PASS"), "stdout:\n{stdout}");
    assert!(out.join("verify.json").is_file());
    assert!(out.join("run_manifest.json").is_file());
}

#[test]
fn verify_unknown_suite_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = salem(&["verify", "--suite", "bogus", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn certify_empty_window_exit_two_names_m() {
    let dir = tempfile::tempdir().unwrap();
    // squares has no element in (4, 8]
    let scn = write_scenario(
        dir.path(),
        "squares.json",
        r#"{
          "m": 1, "n": 1, "theta": [0.0],
          "Q": { "kind": "squares" },
          "Psi": { "family": "power", "tau": 2.0 },
          "a": 0.16666666666666666,
          "h": { "family": "constant", "c": 10.0 },
          "Mset": [8]
        }"#,
    );
    let res = salem(&["certify", &scn, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains('8'.to_string().as_str()), "stderr:\n{stderr}");
}

#[test]
fn certify_passing_scenario_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write_scenario(dir.path(), "z.json", ALL_INTEGERS_TAU2);
    let out = dir.path().join("run");
    let res = salem(&["certify", &scn, "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("certify.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "certify");
    assert!(manifest["scenario_hash"].is_string());
    // every emitted file is listed, including the manifest itself
    let listed: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(listed.iter().any(|p| p.ends_with("certify.json")));
    assert!(listed.iter().any(|p| p.ends_with("run_manifest.json")));
}

#[test]
fn dims_mn_app_preset_reports_exact_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write_scenario(
        dir.path(),
        "mn_app.json",
        r#"{
          "m": 4, "n": 2, "theta": [0.0, 0.0, 0.0, 0.0],
          "Q": { "kind": "all_integers" },
          "Psi": { "family": "power", "tau": 2.0 },
          "a": 0.16666666666666666,
          "h": { "family": "constant", "c": 1.0 },
          "Mset": [4, 8]
        }"#,
    );
    let out = dir.path().join("run");
    let res = salem(&["dims", &scn, "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let payload: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("dims.json")).unwrap()).unwrap();
    assert_eq!(payload["report"]["hausdorff_pred"], 6.0);
    assert_eq!(payload["prediction"]["hausdorff_rational"]["num"], 6);
    assert_eq!(payload["prediction"]["hausdorff_rational"]["den"], 1);
    assert_eq!(payload["prediction"]["fourier_rational"]["num"], 4);
    assert_eq!(payload["prediction"]["fourier_rational"]["den"], 3);
}

#[test]
fn spectrum_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write_scenario(dir.path(), "z.json", ALL_INTEGERS_TAU2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = salem(&[
            "spectrum", &scn, "--M", "32", "--lmax", "256", "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success());
    }
    // identical data files; the manifest differs only by wall time and paths
    for name in ["spectrum_table.csv", "spectrum_table.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}

#[test]
fn cover_subcommand_reports_sum() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write_scenario(dir.path(), "z.json", ALL_INTEGERS_TAU2);
    let out = dir.path().join("run");
    let res = salem(&[
        "cover", &scn, "--eta", "0.8", "--from", "100", "--nmax", "10000", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let payload: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("cover.json")).unwrap()).unwrap();
    assert!(payload["cover_sum"].as_f64().unwrap() > 0.0);
}

#[test]
fn json_errors_flag_emits_machine_readable_object() {
    let res = salem(&["--json-errors", "certify", "/nonexistent/scenario.json"]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    let obj: serde_json::Value =
        serde_json::from_str(stderr.trim()).expect("stderr is a JSON object");
    assert!(obj["error"]["kind"].is_string());
    assert!(obj["error"]["message"].is_string());
}

#[test]
fn presets_lists_families() {
    let dir = tempfile::tempdir().unwrap();
    let res = salem(&["presets", "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    for kind in ["all_integers", "primes", "squares", "power", "constant"] {
        assert!(stdout.contains(kind), "missing {kind} in presets listing");
    }
}
