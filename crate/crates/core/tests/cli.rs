use std::path::{Path, PathBuf};
use std::process::Command;

fn configs() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs"]
        .iter()
        .collect()
}

fn ppac(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ppac"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("reference-run.json");
    let cfg = cfg.to_str().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    for d in [&a, &b] {
        let o = ppac(&["run", "--config", cfg, "--steps", "300"], d);
        assert_eq!(o.status.code(), Some(1), "300 steps cannot reach 1e-8");
    }
    ppac(
        &["run", "--config", cfg, "--steps", "300", "--seed", "7"],
        &c,
    );
    let read = |p: &Path| std::fs::read(p.join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let text = String::from_utf8(read(&a)).unwrap();
    assert_eq!(text.lines().next(), Some("step,agent,coord_index,value"));
    assert_eq!(text.lines().nth(1), Some("0,1,1,0.2"));
    assert_eq!(text.lines().count(), 1 + 301 * 5 * 6);
}

#[test]
fn passing_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("reference-run.json");
    let o = ppac(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["kind"], "run");
    assert_eq!(summary["passed"], true);
    assert!(summary["result"]["iterations_to_epsilon"].as_u64().unwrap() <= 5000);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(configs().join("reference-run.json")).unwrap())
            .unwrap();
    v["d_virtual"] = 2.into();
    std::fs::write(&bad, v.to_string()).unwrap();
    let o = ppac(&["run", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("d_virtual"));

    let o = ppac(&["run", "--config", "/nonexistent.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let cfg = configs().join("reference-run.json");
    let o = ppac(
        &["run", "--config", cfg.to_str().unwrap(), "--steps", "0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn subcommand_selects_the_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("cluster-demo.json");
    let o = ppac(
        &[
            "cluster-demo",
            "--config",
            cfg.to_str().unwrap(),
            "--steps",
            "200",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["kind"], "cluster-demo");
    assert_eq!(summary["result"]["null_space_is_consensus"], false);
}
