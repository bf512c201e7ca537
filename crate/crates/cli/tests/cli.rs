use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liouville-reach"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn validate_names_the_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: serde_json::Value =
        serde_json::from_str(liouville_reach::scenario::preset("dynamic_two_vehicle").unwrap())
            .unwrap();
    doc["vehicles"][1]["init"]["variances"][4] = serde_json::json!(-1.11);
    fs::write(dir.path().join("broken.json"), doc.to_string()).unwrap();

    let out = cli(&["validate", "broken.json"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("vehicles[1].init.variances[4]"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    let ok = cli(&["validate", "dynamic_two_vehicle"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
}

#[test]
fn usage_and_lookup_errors_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        cli(&["run", "--no-such-flag", "x"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        cli(&["run", "missing.json"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(
        cli(&["barycenter", "kinematic_two_vehicle"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        cli(
            &["validate", "kinematic_two_vehicle", "--mode", "footprint"],
            dir.path()
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(cli(&["--help"], dir.path()).status.code(), Some(0));
    let version = cli(&["--version"], dir.path());
    assert_eq!(version.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&version.stdout).contains(env!("CARGO_PKG_VERSION")));
    // validation and failed lookups write nothing
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn run_writes_manifest_inside_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "run",
            "kinematic_two_vehicle",
            "--n",
            "60",
            "--seed-override",
            "7",
            "-o",
            "out",
            "--workers",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let manifest =
        liouville_reach::scenario::Manifest::load(&dir.path().join("out/manifest.json")).unwrap();
    assert_eq!(manifest.status, "complete");
    assert_eq!(
        manifest
            .vehicles
            .iter()
            .map(|v| (v.samples, v.seed))
            .collect::<Vec<_>>(),
        [(60, 7), (60, 8)]
    );
    for a in &manifest.artifacts {
        assert!(dir.path().join("out").join(&a.path).is_file(), "{}", a.path);
    }
    let top: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(top, ["out"]);
}

#[test]
fn numerical_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "run",
            "kinematic_two_vehicle",
            "--n",
            "20",
            "--set",
            "propagation.max_step=1e-30",
            "-o",
            "out",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let manifest =
        liouville_reach::scenario::Manifest::load(&dir.path().join("out/manifest.json")).unwrap();
    assert_eq!(manifest.status, "failed");
}

#[test]
fn compare_mc_writes_report_and_timings() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "compare-mc",
            "kinematic_two_vehicle",
            "--bins",
            "10,15",
            "--n",
            "100",
            "-o",
            "cmp",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("cmp/comparison_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["samples"], 100);
    assert_eq!(report["resolutions"].as_array().unwrap().len(), 2);
    assert_eq!(report["states_match"], true);
    let timing = fs::read_to_string(dir.path().join("cmp/timing.csv")).unwrap();
    assert_eq!(
        timing.lines().next(),
        Some("pipeline,bins,repetition,seconds")
    );
    // 3 repetitions of liouville, shared propagation, and two histogram runs
    assert_eq!(timing.lines().count(), 1 + 3 * 4);
}
