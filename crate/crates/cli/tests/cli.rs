use std::path::Path;
use std::process::{Command, Output};

fn signtn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signtn")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn entropy_runs_twice_to_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for (out, workers) in [(&a, "1"), (&b, "2")] {
        let o = signtn(&[
            "entropy", "--D", "2", "--lambdaD", "0.5,1.5", "--W", "2", "--trials", "1", "--seed", "7", "--workers", workers,
            "--out", path(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("kind,target,D,lambda,lambdaD,W,H,chi,trial,s2,trunc_weight,seed\n"));
    assert!(text.ends_with("# complete\n"));
    assert!(dir.path().join("a.agg.csv").exists());
}

#[test]
fn guard_violation_exits_nonzero_and_names_w() {
    let dir = tempfile::tempdir().unwrap();
    let o = signtn(&["deltaf", "--D", "5", "--W", "7", "--out", path(&dir.path().join("f.csv"))]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`W`"), "{err}");
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("phase.json");
    std::fs::write(&cfg, r#"{"experiment": "PhaseScan", "D": [2], "mu": [0.0, 2.0], "W": [2, 3], "master_seed": 3}"#).unwrap();
    let out = dir.path().join("phase.csv");
    let o = signtn(&["phase", "--config", path(&cfg), "--D", "3", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("orthogonal,3,")).count(), 4);
    let wrong = signtn(&["entropy", "--config", path(&cfg), "--out", path(&out)]);
    assert!(!wrong.status.success());
    assert!(String::from_utf8_lossy(&wrong.stderr).contains("`experiment`"));
}

#[test]
fn oracle_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle.csv");
    let o = signtn(&["oracle", "--D", "2", "--lambda", "0.5", "--trials", "2", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = std::fs::read_to_string(dir.path().join("oracle.agg.csv")).unwrap();
    let max: f64 = agg
        .lines()
        .find(|l| l.starts_with("max_rel_deviation"))
        .and_then(|l| l.split(',').nth(2))
        .unwrap()
        .parse()
        .unwrap();
    assert!(max < 1e-10);

    let raw = dir.path().join("e.csv");
    let o = signtn(&["entropy", "--D", "2", "--lambdaD", "0.5", "--W", "2,3", "--trials", "2", "--out", path(&raw)]);
    assert!(o.status.success());
    let plot = dir.path().join("plot.csv");
    let o = signtn(&["plot", "--style", "entropy", path(&raw), path(&plot)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&plot).unwrap();
    assert!(text.starts_with("x,y,yerr,series\n"));
    assert!(text.contains(",W=2\n") && text.contains(",W=3\n"));
}
