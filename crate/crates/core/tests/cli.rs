use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ief(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ief")).args(args).current_dir(cwd).env_remove("IEF_OUT").output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = ief(args, cwd);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Outputs with wall-clock columns removed, so two runs compare bit for bit.
fn deterministic(mut files: BTreeMap<PathBuf, Vec<u8>>) -> BTreeMap<PathBuf, Vec<u8>> {
    if let Some(log) = files.get_mut(Path::new("train_log.csv")) {
        let text = String::from_utf8(log.clone()).unwrap();
        let kept: Vec<String> = text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect();
        *log = kept.join("\n").into_bytes();
    }
    files
}

fn pipeline(root: &Path) {
    ok(&["gen", "--n", "12", "--test-n", "4", "--dims", "32", "--seed", "3", "--out", "data"], root);
    ok(
        &[
            "train",
            "ief",
            "--data",
            "data/train",
            "--out",
            "run",
            "--steps",
            "2",
            "--epochs-per-stage",
            "1",
            "--batch-size",
            "4",
            "--lr",
            "1e-4",
            "--L",
            "3",
        ],
        root,
    );
    ok(&["infer", "--model", "run/model", "--data", "data/test", "--out", "pred", "--test-steps", "2"], root);
    ok(&["eval", "--pred", "pred", "--out", "eval"], root);
}

#[test]
fn pipeline_runs_writes_configs_and_leaves_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["gen", "--n", "12", "--test-n", "4", "--dims", "32", "--seed", "3", "--out", "data"], root);
    let data = snapshot(&root.join("data"));
    ok(
        &[
            "train",
            "ief",
            "--data",
            "data/train",
            "--out",
            "run",
            "--steps",
            "2",
            "--epochs-per-stage",
            "1",
            "--batch-size",
            "4",
            "--lr",
            "1e-4",
            "--L",
            "3",
        ],
        root,
    );
    ok(&["infer", "--model", "run/model", "--data", "data/test", "--out", "pred", "--test-steps", "2"], root);
    let model = snapshot(&root.join("run/model"));
    ok(&["eval", "--pred", "pred", "--out", "eval"], root);
    ok(&["plot", "--pred", "pred", "--out", "plots", "--count", "2"], root);
    let pred = snapshot(&root.join("pred"));

    assert_eq!(snapshot(&root.join("data")), data);
    assert_eq!(snapshot(&root.join("run/model")), model);
    assert_eq!(snapshot(&root.join("pred")), pred);

    for out in ["data", "run", "pred", "eval", "plots"] {
        assert!(root.join(out).join("run_config.toml").exists(), "{out} lacks run_config.toml");
    }
    let traj = fs::read_to_string(root.join("pred/trajectories.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "example_id,step,keypoint,x,y");
    assert_eq!(traj.lines().count(), 1 + 4 * 3 * 7);
    let metrics = fs::read_to_string(root.join("eval/metrics.csv")).unwrap();
    let fbody = metrics.lines().find(|l| l.starts_with("pckh.fbody,")).unwrap();
    assert_eq!(fbody.split(',').nth(1).unwrap().split('.').nth(1).unwrap().len(), 4);
    assert!(root.join("eval/pckh.svg").exists() && root.join("plots/overlay-12.svg").exists());
}

#[test]
fn replaying_a_run_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline(root);
    let first = deterministic(snapshot(&root.join("run")));
    let first_pred = snapshot(&root.join("pred"));
    fs::rename(root.join("run"), root.join("run-first")).unwrap();
    ok(&["--config", "run-first/run_config.toml"], root);
    assert_eq!(deterministic(snapshot(&root.join("run"))), first);
    ok(&["--config", "pred/run_config.toml"], root);
    assert_eq!(snapshot(&root.join("pred")), first_pred);
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let code = |args: &[&str]| ief(args, root).status.code().unwrap();
    assert_eq!(code(&["train", "ief", "--bogus-flag"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["gen", "--dims", "16", "--out", "small"]), 2);
    assert_eq!(code(&["train", "ief", "--data", "no/such/dir", "--out", "x"]), 3);
    assert_eq!(code(&["infer", "--model", "no/such/model", "--data", "no/such/data", "--out", "y"]), 3);
    assert_eq!(code(&["train", "direct", "--curriculum", "joint", "--data", "no/such/dir", "--out", "z"]), 4);
    assert!(!root.join("z").exists(), "a rejected config must not write outputs");
}

#[test]
fn check_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["check", "--inputs", "2", "--samples-per-input", "10", "--cases", "500", "--out", "chk"], root);
    let report = fs::read_to_string(root.join("chk/check.txt")).unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{report}");
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ief"))
        .args(["gen", "--n", "2", "--test-n", "1", "--dims", "32"])
        .current_dir(dir.path())
        .env("IEF_OUT", dir.path().join("elsewhere"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/data/train/manifest.toml").exists());
}
