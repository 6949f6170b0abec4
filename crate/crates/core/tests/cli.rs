use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainorder"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn sample_writes_trace_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("sample_cone_1d.toml");
    let out = run(&["sample", "--config", cfg.to_str().unwrap(), "--seed", "7"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files(dir.path()), ["manifest.json", "timing.json", "trace.csv", "trace.json"]);
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,x_1,accepted"));
    assert_eq!(lines.count(), 10_001);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn format_flag_limits_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("lab_cone_1d.toml");
    let out = run(&["lab", "--config", cfg.to_str().unwrap(), "--format", "csv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(files(dir.path()), ["lab_ordering.csv", "manifest.json", "timing.json"]);
}

#[test]
fn seed_override_changes_hash() {
    let cfg = configs().join("sample_cone_1d.toml");
    let hash = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        run(&["sample", "--config", cfg.to_str().unwrap(), "--seed", seed], dir.path());
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash("1"), hash("2"));
}

#[test]
fn verification_failures_exit_with_four() {
    for (command, name) in [("lab", "lab_negative_control.toml"), ("check-representation", "check_corrupted.toml")] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = configs().join(name);
        let out = run(&[command, "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(4), "{name}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
        assert!(dir.path().join("manifest.json").exists());
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("compare", "[target]\nname = \"uniform_box\"\ndim = 2\n[[kernels]]\nkind = \"hit_and_run\"\n[experiment]\nseed = 1\n", "simple_slice"),
        ("lab", "[target]\nname = \"cone\"\n[experiment]\nseed = 1\n", "grid"),
        ("sample", "[target]\nname = \"cone\"\n[experiment]\nseed = 1\n", "exactly one"),
        ("sample", "[target]\nname = \"cone\"\n[[kernels]]\nkind = \"hit_and_run\"\n[experiment]\nseed = 1\nsteps = 5\n", "steps"),
        ("check-representation", "[target]\nname = \"cone\"\n[experiment]\nseed = 1\n[experiment.grid]\nn = 8\n", "pair"),
        ("sample", "[target]\nname = \"cone\"\n[[kernels]]\nkind = \"rwm\"\nproposal = { kind = \"ball_walk\", delta = -1.0 }\n[experiment]\nseed = 1\n", "radius must be positive"),
    ];
    for (command, text, needle) in cases {
        let cfg = write_config(dir.path(), text);
        let out = run(&[command, "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{command}: {stderr}");
        assert!(stderr.contains(needle), "{command}: expected `{needle}` in {stderr}");
    }
}

#[test]
fn missing_config_and_bad_flags_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["lab", "--config", "/nonexistent/config.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["lab", "--format", "xml", "--config", "x.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn start_outside_support_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[target]\nname = \"cone\"\n[[kernels]]\nkind = \"hit_and_run\"\n[experiment]\nseed = 1\nx0 = [1.5]\n");
    let out = run(&["sample", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn representation_report_lists_all_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("check_simple_1d.toml");
    let out = run(&["check-representation", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("check_representation.json")).unwrap()).unwrap();
    assert_eq!(v["pair"], "simple_vs_hybrid");
    assert_eq!(v["checks"].as_array().unwrap().len(), 5);
    assert_eq!(v["verdict"], "PASS");
}
