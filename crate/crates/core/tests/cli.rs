use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn frap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frap"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FRAP_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_reports_calls_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = frap(
        &[
            "run",
            "--prompt",
            "a [m1:red] [o1:apple] and a [o2:dog]",
            "--record",
            "r.json",
            "--image",
            "r.ppm",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("calls       65"));
    assert!(fs::read(dir.path().join("r.ppm"))
        .unwrap()
        .starts_with(b"P6\n16 16\n255\n"));
    let rec: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(rec["call_count"], 65);
    assert_eq!(rec["losses"].as_array().unwrap().len(), 25);

    let vanilla = frap(&["run", "--prompt", "a [o1:cat]", "--variant", "vanilla"], dir.path());
    assert!(stdout(&vanilla).contains("calls       50"));
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_frap"))
        .args(["run", "--prompt", "a [o1:cat]"])
        .env("FRAP_SEED", "42")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(stdout(&out).contains("seed 42"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(frap(&["bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(frap(&["run", "--prompt", "a cat"], dir.path()).status.code(), Some(1));
    assert_eq!(
        frap(&["run", "--prompt", "a [o1:cat]", "--variant", "warp"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        frap(&["batch", "--config", "missing.json"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(frap(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn dataset_batch_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let gen = frap(
        &["gen-dataset", "--template", "color-object", "--out", "p.jsonl"],
        dir.path(),
    );
    assert!(gen.status.success());
    let lines = fs::read_to_string(dir.path().join("p.jsonl")).unwrap();
    let first: Vec<&str> = lines.lines().take(2).collect();
    fs::write(dir.path().join("two.jsonl"), first.join("\n")).unwrap();
    fs::write(
        dir.path().join("exp.json"),
        r#"{"dataset": {"kind": "specs", "path": "two.jsonl"}, "seeds": [0, 1], "workers": 2}"#,
    )
    .unwrap();

    let batch = frap(&["batch", "--config", "exp.json", "--out", "out"], dir.path());
    assert!(batch.status.success(), "{}", String::from_utf8_lossy(&batch.stderr));
    assert!(stdout(&batch).contains("4 runs"));

    let report = frap(
        &[
            "report",
            "--csv",
            "out/summary.csv",
            "--records",
            "out/records",
            "--trajectories",
            "traj",
        ],
        dir.path(),
    );
    assert!(report.status.success());
    assert!(stdout(&report).contains("4 trajectories"));
    assert!(dir.path().join("traj/frap-p0001-s1.csv").exists());

    let ablation = frap(
        &[
            "ablate",
            "--config",
            "exp.json",
            "--variants",
            "default,no_selection",
            "--out",
            "abl",
        ],
        dir.path(),
    );
    assert!(ablation.status.success());
    assert!(stdout(&ablation).contains("no_selection"));
    assert_eq!(
        frap(&["ablate", "--config", "exp.json", "--variants", "nope"], dir.path())
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "prompt_id,oops\nx,y\n").unwrap();
    let out = frap(&["report", "--csv", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = frap(&["gradcheck", "--trials", "5"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("5/5 trials passed"));
}
