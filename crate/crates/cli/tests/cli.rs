use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn auxrep(args: &[&str], root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_auxrep"));
    cmd.args(args).env_remove("AUXREP_OUTPUT_ROOT");
    if let Some(r) = root {
        cmd.env("AUXREP_OUTPUT_ROOT", r);
    }
    cmd.output().expect("binary runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn dimcheck_reproduces_reference_sizes() {
    let rows = [
        (["3", "1", "2", "10"], (23, 44)),
        (["11", "3", "6", "40"], (251, 494)),
        (["17", "6", "8", "30"], (257, 503)),
        (["292", "17", "8", "30"], (532, 789)),
        (["31", "4", "8", "30"], (271, 515)),
    ];
    for (args, (z_o, z_oa)) in rows {
        let mut a = vec!["dimcheck"];
        a.extend(args);
        a.push("--json");
        let out = auxrep(&a, None);
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_eq!(v["z_o"], z_o);
        assert_eq!(v["z_oa"], z_oa);
    }
    assert_eq!(auxrep(&["dimcheck", "3", "1", "0", "10"], None).status.code(), Some(1));
}

#[test]
fn gradcheck_passes_fails_on_corruption_and_is_repeatable() {
    let a = auxrep(&["gradcheck", "--seed", "5"], None);
    let b = auxrep(&["gradcheck", "--seed", "5"], None);
    assert_eq!(a.status.code(), Some(0));
    assert!(stdout(&a).contains("PASS"));
    assert_eq!(stdout(&a), stdout(&b));
    let bad = auxrep(&["gradcheck", "--seed", "5", "--corrupt-gradient"], None);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn invalid_config_lists_fields_and_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(
        &path,
        "algorithm = \"td3\"\ntotal_steps = 100\nagent = { gama = 0.9, tau = 2.0 }\n",
    )
    .unwrap();
    let out = auxrep(&["run", path.to_str().unwrap()], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for field in ["base.env", "gama"] {
        assert!(err.contains(field), "{field} not in {err}");
    }
    assert_eq!(auxrep(&["run"], None).status.code(), Some(1));
    assert_eq!(auxrep(&["run", "/nonexistent/x.toml"], None).status.code(), Some(2));
}

#[test]
fn smoke_run_then_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = config("pendulum_smoke.toml");
    let out = auxrep(&["run", &cfg, "--quiet"], Some(root));
    assert!(out.status.success(), "{}", stderr(&out));
    let run_dir: PathBuf = root.join("runs/pendulum-smoke/pendulum-td3-baseline-s0");
    let curve = fs::read_to_string(run_dir.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("step,mean,min,max"));
    assert_eq!(curve.lines().count(), 1 + 4);
    assert!(root.join("runs/pendulum-smoke/manifest.json").is_file());

    // A second invocation must not clobber results unless forced.
    assert_eq!(auxrep(&["run", &cfg, "--quiet"], Some(root)).status.code(), Some(1));
    let forced = auxrep(&["run", &cfg, "--quiet", "--force"], Some(root));
    assert!(forced.status.success());
    assert_eq!(fs::read_to_string(run_dir.join("curve.csv")).unwrap(), curve);

    let suite = root.join("runs/pendulum-smoke");
    let cmp = auxrep(&["compare", suite.to_str().unwrap()], None);
    assert!(cmp.status.success(), "{}", stderr(&cmp));
    let csv = stdout(&cmp);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,algorithm,env,best_score,normalized_best,se80,n_seeds"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "baseline");
    assert_eq!(row[4], "1");
    assert_eq!(row[6], "1");
    assert!(suite.join("report/comparison.csv").is_file());
    assert!(suite.join("report/se80-pendulum-td3.svg").is_file());

    let missing = auxrep(&["compare", suite.to_str().unwrap(), "--baseline", "fsp"], None);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn command_line_overrides_take_effect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("pendulum_smoke.toml");
    let out = auxrep(
        &[
            "run", &cfg, "--quiet", "--seed", "3", "--task", "fsp", "--total-steps", "700",
            "--set", "eval_interval=100", "--output-dir", "ovr",
        ],
        Some(tmp.path()),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let dir = tmp.path().join("ovr/pendulum-td3-fsp-s3");
    let config = fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(config.contains("seed = 3"));
    assert!(config.contains("task = \"fsp\""));
    assert_eq!(fs::read_to_string(dir.join("curve.csv")).unwrap().lines().count(), 1 + 3);
}
