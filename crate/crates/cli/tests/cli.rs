use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cqsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqsm"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn solve_lq_prints_benchmark_parameters() {
    let o = cqsm(&["solve-lq"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for v in [
        "-0.59047134",
        "-0.23069812",
        "-0.46141679",
        "-0.35624157",
        "-0.1511906",
        "0.1731235",
        "1.5291316",
        "-3.5624157",
    ] {
        assert!(text.contains(v), "{v} missing from\n{text}");
    }
}

#[test]
fn solve_lq_handles_noiseless_dynamics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "det.cfg", "lq.C = 0.0\nlq.D = 0.0\n");
    let o = cqsm(&[
        "solve-lq",
        "--config",
        &cfg,
        "--out",
        &tmp.path().to_string_lossy(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("-0.57407407"), "{text}");
    assert!(text.contains("1.3862944"), "{text}");
    let csv = fs::read_to_string(tmp.path().join("solve_lq.csv")).unwrap();
    assert!(csv.starts_with("name,value\n"));
}

#[test]
fn inadmissible_discount_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "lq.A = 1.0\nlq.beta = 1.0\n");
    let o = cqsm(&["solve-lq", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("2A + C^2") && err.contains("discount admissibility"),
        "{err}"
    );
}

#[test]
fn malformed_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "lq.Q = 1.0\n");
    let o = cqsm(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lq.Q"));
    let missing = cqsm(&["run", "--config", "/nonexistent/cqsm.cfg"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn all_seeds_diverging_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "div.cfg",
        "algo.n_steps = 2000\nalgo.alpha_theta = 1000.0\n",
    );
    let out = tmp.path().join("out");
    let o = cqsm(&[
        "run",
        "--config",
        &cfg,
        "--seeds",
        "2",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(fs::read_to_string(out.join("final.csv"))
        .unwrap()
        .contains("diverged"));
}

#[test]
fn run_then_rerun_from_manifest_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "run.cfg",
        "algo.n_steps = 2000\nalgo.record_every = 250\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = cqsm(&[
        "run",
        "--config",
        &cfg,
        "--seeds",
        "3",
        "--parallel",
        "3",
        "--out",
        &a.to_string_lossy(),
    ]);
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(stdout(&first).contains("config_sha256 = "));
    let manifest = a.join("manifest.cfg");
    let second = cqsm(&[
        "run",
        "--config",
        &manifest.to_string_lossy(),
        "--out",
        &b.to_string_lossy(),
    ]);
    assert_eq!(second.status.code(), Some(0));
    for name in [
        "seed_0.csv",
        "seed_1.csv",
        "seed_2.csv",
        "summary.csv",
        "final.csv",
        "manifest.cfg",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn diagnostics_commands_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "d.cfg",
        "diag.n_traj = 50\ndiag.horizon = 5.0\nsampling.n_samples = 2000\n",
    );
    let m = cqsm(&["check-martingale", "--config", &cfg]);
    assert_eq!(m.status.code(), Some(0));
    assert!(stdout(&m).contains("z_score"));
    let s = cqsm(&[
        "sample-actions",
        "--config",
        &cfg,
        "--out",
        &tmp.path().to_string_lossy(),
    ]);
    assert_eq!(s.status.code(), Some(0));
    assert!(stdout(&s).contains("target_variance"));
    assert_eq!(
        fs::read_to_string(tmp.path().join("samples.csv"))
            .unwrap()
            .lines()
            .count(),
        2001
    );
}
