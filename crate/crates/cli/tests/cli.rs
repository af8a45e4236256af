use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy/toy.toml")
}

fn odforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn run_writes_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = odforge(&["run", toy().to_str().unwrap(), "--out", out, "--algo", "lns", "--algo", "cw", "--k", "4"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("artifacts"));
    let results = std::fs::read_to_string(dir.path().join("bench_results.csv")).unwrap();
    let algos: Vec<&str> = results.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(algos, ["lns", "clarke-wright"]);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn stages_run_separately() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy();
    let (cfg, out) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());

    let o = odforge(&["bench", cfg, "--out", out]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("missing artifact"), "{}", text(&o.stderr));

    let o = odforge(&["synthesize", cfg, "--out", out]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("psi"));

    let o = odforge(&["calibrate", cfg, "--out", out, "--threads", "1"]);
    assert!(o.status.success(), "{}", text(&o.stderr));

    let o = odforge(&["validate", cfg, "--out", out]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("[ok] departures_exact_calibrated"));

    let o = odforge(&["bench", cfg, "--out", out, "--algo", "insertion", "--budget-s", "1"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).starts_with("algorithm,vmt,pmt"));
}

#[test]
fn seed_override_changes_trips() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = toy();
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let o = odforge(&["synthesize", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", text(&o.stderr));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("initial_trips.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn rejects_bad_input() {
    let o = odforge(&["run", toy().to_str().unwrap(), "--algo", "genetic"]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("genetic"));

    let o = odforge(&["validate", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).starts_with("error:"));
}

#[test]
fn generates_a_mini_county() {
    let dir = tempfile::tempdir().unwrap();
    let o = odforge(&["gen-mini-county", dir.path().to_str().unwrap(), "--trips-per-origin", "20"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let cfg = PathBuf::from(text(&o.stdout).trim());
    assert!(cfg.exists());
    for f in ["units.geojson", "edges.csv", "flows.csv", "departures.csv", "travel_times.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
