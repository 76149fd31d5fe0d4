//! End-to-end checks of the command-line interface and its exit-code
//! contract: 0 pass, 1 invariant failure, 2 bad input, 3 big-cell failure.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loopframe"))
}

fn work_dir() -> PathBuf {
    let dir = std::env::temp_dir().join("loopframe-cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn example_writes_a_mesh_and_reports_pass() {
    let out = work_dir().join("sphere.obj");
    let run = bin()
        .args(["example", "--row", "3", "--lambda", "1", "--grid", "32x32"])
        .args(["--out", out.to_str().unwrap(), "--format", "obj"])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{run:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 32 * 32);
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("PASS quadric residual"));
}

#[test]
fn example_rejects_the_degenerate_parameter() {
    let run = bin()
        .args(["example", "--row", "3", "--lambda", "i"])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(2));
    let err = String::from_utf8(run.stderr).unwrap();
    assert!(err.contains("coframe vanishes"), "{err}");
}

#[test]
fn example_rejects_inadmissible_lambda() {
    // lambda = 2 is off the unit circle required by row 3
    let run = bin()
        .args(["example", "--row", "3", "--lambda", "2"])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn verify_fast_suite_passes_and_unattainable_tolerance_fails() {
    let run = bin().args(["verify", "--suite", "loopalg"]).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{run:?}");

    let run = bin()
        .args(["verify", "--suite", "example", "--tol-quadric", "1e-20"])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(1));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn verify_output_is_deterministic() {
    let once = bin().args(["verify", "--suite", "loopalg"]).output().unwrap();
    let twice = bin().args(["verify", "--suite", "loopalg"]).output().unwrap();
    assert_eq!(once.stdout, twice.stdout);
}

#[test]
fn split_recovers_factors_and_polices_the_big_cell() {
    let dir = work_dir();
    // (I + lambda E21*0.5)(I + lambda^-1 E12*0.3): inside the big cell
    let product = r#"{
      "n": 2,
      "coeffs": {
        "-1": [[[0.0,0.0],[0.3,0.0]],[[0.0,0.0],[0.0,0.0]]],
        "0": [[[1.0,0.0],[0.0,0.0]],[[0.0,0.0],[1.15,0.0]]],
        "1": [[[0.0,0.0],[0.0,0.0]],[[0.5,0.0],[0.0,0.0]]]
      }
    }"#;
    let in_path = dir.join("product.json");
    std::fs::write(&in_path, product).unwrap();
    let stem = dir.join("factors");
    let run = bin()
        .args(["split", "--in", in_path.to_str().unwrap()])
        .args(["--out", stem.to_str().unwrap(), "--diagnostics"])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{run:?}");
    let (plus, tag) = loopframe::io::read_loop_file(&dir.join("factors.plus.json")).unwrap();
    assert_eq!(tag.as_deref(), Some("plus"));
    assert!(plus.min_degree() >= 0);

    // diag(lambda, 1/lambda) is outside the big cell
    let diag = r#"{
      "n": 2,
      "coeffs": {
        "-1": [[[0.0,0.0],[0.0,0.0]],[[0.0,0.0],[1.0,0.0]]],
        "1": [[[1.0,0.0],[0.0,0.0]],[[0.0,0.0],[0.0,0.0]]]
      }
    }"#;
    let diag_path = dir.join("diag.json");
    std::fs::write(&diag_path, diag).unwrap();
    let run = bin()
        .args(["split", "--in", diag_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(3), "{run:?}");
}

#[test]
fn split_of_unparsable_input_is_bad_input() {
    let path = work_dir().join("garbage.json");
    std::fs::write(&path, "not json").unwrap();
    let run = bin()
        .args(["split", "--in", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn show_config_round_trips_through_a_config_file() {
    let run = bin().args(["--show-config", "verify"]).output().unwrap();
    assert_eq!(run.status.code(), Some(0));
    let text = String::from_utf8(run.stdout).unwrap();
    let path = work_dir().join("config.json");
    std::fs::write(&path, &text).unwrap();
    // feed it back through the environment variable
    let again = bin()
        .env("LOOPFRAME_CONFIG", &path)
        .args(["--show-config", "verify"])
        .output()
        .unwrap();
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}
