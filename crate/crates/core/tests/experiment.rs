//! Multi-seed runs: output files, reproducibility and summary statistics.

use std::fs;
use std::path::Path;

use cqsm::experiment::{run_experiment, ExperimentError, SERIES};
use cqsm::ExperimentConfig;

const SMALL: &str = "\
lq.beta = 1.0
algo.dt = 0.1
algo.n_steps = 3000
algo.record_every = 500
experiment.n_seeds = 4
experiment.base_seed = 10
";

fn config(text: &str, out: &Path, parallel: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(text).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg.parallel = parallel;
    cfg
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    run_experiment(&config(SMALL, &a, 1)).unwrap();
    run_experiment(&config(SMALL, &b, 4)).unwrap();
    let manifest = fs::read_to_string(a.join("manifest.cfg")).unwrap();
    run_experiment(&config(&manifest, &c, 2)).unwrap();
    let fa = files(&a);
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(
        names,
        [
            "final.csv",
            "manifest.cfg",
            "seed_10.csv",
            "seed_11.csv",
            "seed_12.csv",
            "seed_13.csv",
            "summary.csv"
        ]
    );
    assert_eq!(fa, files(&b));
    assert_eq!(fa, files(&c));
}

#[test]
fn summary_agrees_with_two_pass_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_experiment(&config(SMALL, tmp.path(), 2)).unwrap();
    let finals: Vec<[f64; 10]> = summary
        .successes()
        .map(|(_, f)| {
            let mut row = [0.0; 10];
            row[..6].copy_from_slice(&f.theta.0);
            row[6..9].copy_from_slice(&f.v.0);
            row[9] = f.running_avg_reward;
            row
        })
        .collect();
    assert_eq!(finals.len(), 4);
    let last = summary.mean.len() - 1;
    for j in 0..SERIES.len() {
        let n = finals.len() as f64;
        let m = finals.iter().map(|r| r[j]).sum::<f64>() / n;
        let s = (finals.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(
            (summary.mean[last][j] - m).abs() <= 1e-12 * m.abs().max(1e-300),
            "{} mean",
            SERIES[j]
        );
        assert!(
            (summary.std[last][j] - s).abs() <= 1e-12 * s.abs().max(1e-300),
            "{} std",
            SERIES[j]
        );
    }
    let text = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("step,t,theta0_mean,theta0_lo,theta0_hi,"));
    assert_eq!(text.lines().count(), 1 + 7);
}

#[test]
fn diverging_seeds_are_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}algo.alpha_theta = 1000.0\n");
    let err = run_experiment(&config(&text, tmp.path(), 1)).unwrap_err();
    assert!(matches!(err, ExperimentError::AllSeedsFailed));
    let fin = fs::read_to_string(tmp.path().join("final.csv")).unwrap();
    assert_eq!(
        fin.lines().filter(|l| l.contains(",diverged,")).count(),
        4,
        "{fin}"
    );
}
