//! Multi-seed experiment runner and the command back ends.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytic::{
    coefficient_residuals, hjb_residual, k_to_optimal_params, solve_lq, KCoefficients,
    OptimalScore, SolveError,
};
use crate::config::{Algorithm, ConfigError, ExperimentConfig, ScoreInit, TestFn, ThetaInit};
use crate::diag::{
    ks_statistic_normal, martingale_loss, mean_var, orthogonality_residual, Constant, LaggedState,
    ParamGradient, ResidualReport,
};
use crate::format::{fmt9, fmt_g};
use crate::noise::NoiseSource;
use crate::offline::{run_offline, OfflineConfig, OfflineError};
use crate::online::{run_cqsm, AlgoConfig, LearnError, LearningRecord};
use crate::policy::{QParams, ScoreParams};
use crate::samplers::{ddpm_sample, langevin_chain, SamplerError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Column stems of the summary and final CSVs.
pub const SERIES: [&str; 10] = [
    "theta0",
    "theta1",
    "theta2",
    "theta3",
    "theta4",
    "theta5",
    "v0",
    "v1",
    "v2",
    "running_avg_reward",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("every seed failed")]
    AllSeedsFailed,
}

impl From<SolveError> for ExperimentError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::InvalidParams(lq) => ExperimentError::Config(ConfigError::Lq(lq)),
            other => ExperimentError::Numerical(other.to_string()),
        }
    }
}

impl From<LearnError> for ExperimentError {
    fn from(e: LearnError) -> Self {
        ExperimentError::Numerical(e.to_string())
    }
}

impl From<SamplerError> for ExperimentError {
    fn from(e: SamplerError) -> Self {
        ExperimentError::Numerical(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, ExperimentError> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

/// Cumulative time average `avg[k] = Σ_{i≤k} r_i Δt / ((k+1) Δt)`.
pub fn running_avg_reward(reward_rates: &[f64], dt: f64) -> Vec<f64> {
    let mut acc = 0.0;
    reward_rates
        .iter()
        .enumerate()
        .map(|(k, r)| {
            acc += r * dt;
            acc / ((k + 1) as f64 * dt)
        })
        .collect()
}

/// One-pass mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Sample standard deviation; 0 for a single observation.
    pub fn std(&self) -> f64 {
        match self.n {
            0 => f64::NAN,
            1 => 0.0,
            n => (self.m2 / (n - 1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub theta0: QParams,
    pub v0: ScoreParams,
    pub outcome: Result<SeedFinal, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedFinal {
    pub theta: QParams,
    pub v: ScoreParams,
    pub running_avg_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seeds: Vec<SeedResult>,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// Per row, mean over successful seeds of each entry of `SERIES`.
    pub mean: Vec<[f64; 10]>,
    pub std: Vec<[f64; 10]>,
    pub config_hash: String,
}

impl RunSummary {
    pub fn successes(&self) -> impl Iterator<Item = (u64, &SeedFinal)> {
        self.seeds
            .iter()
            .filter_map(|s| s.outcome.as_ref().ok().map(|f| (s.seed, f)))
    }
}

/// Initial critic and score of one seed. A uniform score start draws from
/// stream 1 of the seed; the run itself uses stream 0.
pub fn initial_params(cfg: &ExperimentConfig, seed: u64) -> (QParams, ScoreParams) {
    let theta = match cfg.theta0_mode {
        ThetaInit::Zeros => QParams::zeros(),
        ThetaInit::Explicit(t) => QParams(t),
    };
    let v = match cfg.v0_mode {
        ScoreInit::Explicit(v) => ScoreParams(v),
        ScoreInit::Uniform01 => {
            let mut noise = NoiseSource::with_stream(seed, 1);
            ScoreParams([noise.uniform(), noise.uniform(), noise.uniform()])
        }
    };
    (theta, v)
}

/// Runs the configured learning algorithm for one seed.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
) -> (QParams, ScoreParams, Result<LearningRecord, String>) {
    let (theta0, v0) = initial_params(cfg, seed);
    let algo = AlgoConfig {
        seed,
        beta: cfg.lq.beta,
        lambda: cfg.lq.lambda,
        ..cfg.algo.clone()
    };
    let record = match cfg.algorithm {
        Algorithm::Online => run_cqsm(&algo, &cfg.lq, theta0, v0).map_err(|e| e.to_string()),
        Algorithm::Offline => {
            let ocfg = OfflineConfig {
                algo,
                n_episodes: cfg.offline.n_episodes,
                episode_steps: cfg.offline.episode_steps,
                rule: cfg.offline.rule,
            };
            run_offline(&ocfg, &cfg.lq, theta0, v0).map_err(|e: OfflineError| e.to_string())
        }
    };
    (theta0, v0, record)
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.canonical().as_bytes()))
}

/// The manifest is the canonical config preceded by comment lines, so it
/// can be fed back as `--config`.
pub fn manifest_text(cfg: &ExperimentConfig) -> String {
    let seeds: Vec<String> = (0..cfg.n_seeds as u64)
        .map(|i| (cfg.base_seed + i).to_string())
        .collect();
    format!(
        "# cqsm {VERSION}\n# config_sha256 = {}\n# seeds = {}\n{}",
        config_hash(cfg),
        seeds.join(","),
        cfg.canonical()
    )
}

fn seed_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

fn write_record(path: &Path, record: &LearningRecord) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(io_err(path))?;
    record
        .write_csv(BufWriter::new(file))
        .map_err(csv_err(path))
}

fn row_values(row: &crate::online::RecordRow) -> [f64; 10] {
    let mut out = [0.0; 10];
    out[..6].copy_from_slice(&row.theta.0);
    out[6..9].copy_from_slice(&row.v.0);
    out[9] = row.running_avg_reward.unwrap_or(f64::NAN);
    out
}

/// Runs every seed, writes `seed_<s>.csv`, `summary.csv`, `final.csv`
/// and `manifest.cfg` under `cfg.output_dir`.
///
/// A seed that fails is reported in `final.csv` and left out of the
/// summary; the run only fails if no seed succeeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;
    cfg.lq.validate().map_err(ConfigError::Lq)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel)
        .build()
        .map_err(|e| ExperimentError::Numerical(e.to_string()))?;
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|i| cfg.base_seed + i).collect();
    let runs: Vec<(u64, QParams, ScoreParams, Result<LearningRecord, String>)> =
        pool.install(|| {
            seeds
                .par_iter()
                .map(|&seed| {
                    let (theta0, v0, record) = run_seed(cfg, seed);
                    log::info!("seed {seed} finished");
                    (seed, theta0, v0, record)
                })
                .collect()
        });
    for (seed, _, _, record) in &runs {
        match record {
            Ok(rec) => write_record(&seed_file(dir, *seed), rec)?,
            Err(e) => log::warn!("seed {seed} failed: {e}"),
        }
    }

    let ok: Vec<&LearningRecord> = runs.iter().filter_map(|r| r.3.as_ref().ok()).collect();
    if ok.is_empty() {
        write_final(dir, &runs)?;
        return Err(ExperimentError::AllSeedsFailed);
    }
    let n_rows = ok[0].rows.len();
    let mut steps = Vec::with_capacity(n_rows);
    let mut times = Vec::with_capacity(n_rows);
    let mut mean = Vec::with_capacity(n_rows);
    let mut std = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        let mut stats = [RunningStats::default(); 10];
        for rec in &ok {
            for (s, v) in stats.iter_mut().zip(row_values(&rec.rows[i])) {
                s.push(v);
            }
        }
        steps.push(ok[0].rows[i].step);
        times.push(ok[0].rows[i].t);
        mean.push(stats.map(|s| s.mean()));
        std.push(stats.map(|s| s.std()));
    }

    let path = dir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["step".to_string(), "t".to_string()];
    for name in SERIES {
        header.extend([
            format!("{name}_mean"),
            format!("{name}_lo"),
            format!("{name}_hi"),
        ]);
    }
    w.write_record(&header).map_err(csv_err(&path))?;
    for i in 0..n_rows {
        let mut rec = vec![steps[i].to_string(), fmt9(times[i])];
        for j in 0..SERIES.len() {
            let (m, s) = (mean[i][j], std[i][j]);
            if m.is_nan() {
                rec.extend([String::new(), String::new(), String::new()]);
            } else {
                rec.extend([fmt9(m), fmt9(m - 2.0 * s), fmt9(m + 2.0 * s)]);
            }
        }
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    write_final(dir, &runs)?;
    let manifest = dir.join("manifest.cfg");
    fs::write(&manifest, manifest_text(cfg)).map_err(io_err(&manifest))?;

    let seeds = runs
        .into_iter()
        .map(|(seed, theta0, v0, record)| SeedResult {
            seed,
            theta0,
            v0,
            outcome: record.map(|rec| SeedFinal {
                theta: rec.final_theta(),
                v: rec.final_v(),
                running_avg_reward: rec.final_running_avg_reward(),
            }),
        })
        .collect();
    Ok(RunSummary {
        seeds,
        steps,
        times,
        mean,
        std,
        config_hash: config_hash(cfg),
    })
}

fn write_final(
    dir: &Path,
    runs: &[(u64, QParams, ScoreParams, Result<LearningRecord, String>)],
) -> Result<(), ExperimentError> {
    let path = dir.join("final.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["seed", "status"];
    header.extend(&SERIES);
    header.push("error");
    w.write_record(&header).map_err(csv_err(&path))?;
    for (seed, _, _, record) in runs {
        let mut rec = vec![seed.to_string()];
        match record {
            Ok(r) => {
                rec.push("ok".into());
                rec.extend(r.final_theta().0.iter().map(|&x| fmt9(x)));
                rec.extend(r.final_v().0.iter().map(|&x| fmt9(x)));
                rec.push(fmt9(r.final_running_avg_reward()));
                rec.push(String::new());
            }
            Err(e) => {
                rec.push("diverged".into());
                rec.extend(std::iter::repeat_n(String::new(), SERIES.len()));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

/// Closed-form solution with its optimal parameters and residual norms.
#[derive(Debug, Clone, PartialEq)]
pub struct LqReport {
    pub k: KCoefficients,
    pub theta: QParams,
    pub v: ScoreParams,
    pub max_coefficient_residual: f64,
    /// Largest HJB residual on a 5×5 grid over `[−2, 2]²`.
    pub max_hjb_residual: f64,
}

pub fn solve_lq_command(cfg: &ExperimentConfig) -> Result<LqReport, ExperimentError> {
    let k = solve_lq(&cfg.lq)?;
    let (theta, v) = k_to_optimal_params(&k, cfg.lq.lambda)
        .map_err(|e| ExperimentError::Numerical(e.to_string()))?;
    let max_coefficient_residual = coefficient_residuals(&k, &cfg.lq)
        .iter()
        .fold(0.0, |m: f64, r| m.max(r.abs()));
    let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut max_hjb_residual: f64 = 0.0;
    for x in grid {
        for a in grid {
            max_hjb_residual = max_hjb_residual.max(hjb_residual(&k, &cfg.lq, x, a).abs());
        }
    }
    Ok(LqReport {
        k,
        theta,
        v,
        max_coefficient_residual,
        max_hjb_residual,
    })
}

impl LqReport {
    fn entries(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (i, k) in self.k.to_array().iter().enumerate() {
            out.push((format!("k{i}"), *k));
        }
        for (i, t) in self.theta.0.iter().enumerate() {
            out.push((format!("theta{i}"), *t));
        }
        for (i, v) in self.v.0.iter().enumerate() {
            out.push((format!("v{i}"), *v));
        }
        out.push((
            "max_coefficient_residual".into(),
            self.max_coefficient_residual,
        ));
        out.push(("max_hjb_residual".into(), self.max_hjb_residual));
        out
    }

    /// Labelled text with 8 significant digits.
    pub fn to_text(&self) -> String {
        let g = |x: f64| fmt_g(x, 8);
        let join = |v: &[f64]| v.iter().map(|&x| g(x)).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        s.push_str(&format!("k      = ({})\n", join(&self.k.to_array())));
        s.push_str(&format!("theta* = ({})\n", join(&self.theta.0)));
        s.push_str(&format!("v*     = ({})\n", join(&self.v.0)));
        s.push_str(&format!(
            "max |coefficient residual| = {}\n",
            g(self.max_coefficient_residual)
        ));
        s.push_str(&format!(
            "max |HJB residual| on grid = {}\n",
            g(self.max_hjb_residual)
        ));
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv_writer(path)?;
        w.write_record(["name", "value"]).map_err(csv_err(path))?;
        for (name, value) in self.entries() {
            w.write_record([name, fmt9(value)]).map_err(csv_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }
}

/// Orthogonality test of the analytic Q (plus `diag.offset`) under the
/// optimal score, with the martingale loss on the same trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleCheck {
    pub report: ResidualReport,
    pub loss: f64,
}

pub fn martingale_command(cfg: &ExperimentConfig) -> Result<MartingaleCheck, ExperimentError> {
    let k = solve_lq(&cfg.lq)?;
    let offset = cfg.diag.offset;
    let q = move |x: f64, a: f64| k.value(x, a) + offset;
    let score = OptimalScore {
        k,
        lambda: cfg.lq.lambda,
    };
    let n_steps = (cfg.diag.horizon / cfg.diag.dt).round() as usize;
    let algo = AlgoConfig {
        dt: cfg.diag.dt,
        n_steps,
        seed: cfg.diag.seed,
        beta: cfg.lq.beta,
        lambda: cfg.lq.lambda,
        ..cfg.algo.clone()
    };
    let n = cfg.diag.n_traj;
    let report = match cfg.diag.test {
        TestFn::Constant => orthogonality_residual(&q, &score, &Constant, &cfg.lq, &algo, n)?,
        TestFn::ParamGradient(index) => {
            orthogonality_residual(&q, &score, &ParamGradient { index }, &cfg.lq, &algo, n)?
        }
        TestFn::Lagged { lag, power } => {
            orthogonality_residual(&q, &score, &LaggedState { lag, power }, &cfg.lq, &algo, n)?
        }
    };
    let loss = martingale_loss(&q, &score, &cfg.lq, &algo, n)?;
    Ok(MartingaleCheck { report, loss })
}

impl MartingaleCheck {
    pub fn to_text(&self) -> String {
        let r = &self.report;
        format!(
            "estimate       = {}\nstd_error      = {}\nn_trajectories = {}\nz_score        = {}\nmartingale_loss = {}\n",
            fmt9(r.estimate),
            fmt9(r.std_error),
            r.n_trajectories,
            fmt9(r.z_score),
            fmt9(self.loss)
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv_writer(path)?;
        let r = &self.report;
        w.write_record([
            "estimate",
            "std_error",
            "n_trajectories",
            "z_score",
            "martingale_loss",
        ])
        .map_err(csv_err(path))?;
        w.write_record([
            fmt9(r.estimate),
            fmt9(r.std_error),
            r.n_trajectories.to_string(),
            fmt9(r.z_score),
            fmt9(self.loss),
        ])
        .map_err(csv_err(path))?;
        w.flush().map_err(io_err(path))
    }
}

/// Action samples at `sampling.x` under the optimal score, compared with
/// the Boltzmann target `N(−(k3 + k4 x)/k2, −λ/k2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerCheck {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub target_mean: f64,
    pub target_variance: f64,
    pub ks: f64,
}

pub fn sample_actions_command(cfg: &ExperimentConfig) -> Result<SamplerCheck, ExperimentError> {
    let k = solve_lq(&cfg.lq)?;
    let score = OptimalScore {
        k,
        lambda: cfg.lq.lambda,
    };
    let x = cfg.sampling.x;
    let mut noise = NoiseSource::new(cfg.base_seed);
    let samples = match cfg.sampling.kind.as_str() {
        "ddpm" => {
            let schedule = cfg.ddpm_schedule().map_err(ConfigError::Sampler)?;
            (0..cfg.sampling.n_samples)
                .map(|_| ddpm_sample(&score, x, &schedule, &mut noise))
                .collect::<Result<Vec<_>, _>>()?
        }
        _ => {
            let start = noise.standard_normal();
            langevin_chain(
                &score,
                x,
                start,
                &cfg.sampling.langevin,
                cfg.sampling.n_samples,
                &mut noise,
            )?
        }
    };
    let (mean, variance) = mean_var(&samples);
    let target_mean = -(k.k3 + k.k4 * x) / k.k2;
    let target_variance = -cfg.lq.lambda / k.k2;
    let ks = ks_statistic_normal(&samples, target_mean, target_variance.sqrt());
    Ok(SamplerCheck {
        samples,
        mean,
        variance,
        target_mean,
        target_variance,
        ks,
    })
}

impl SamplerCheck {
    pub fn to_text(&self) -> String {
        format!(
            "n_samples       = {}\nmean            = {}\ntarget_mean     = {}\nvariance        = {}\ntarget_variance = {}\nks_statistic    = {}\n",
            self.samples.len(),
            fmt9(self.mean),
            fmt9(self.target_mean),
            fmt9(self.variance),
            fmt9(self.target_variance),
            fmt9(self.ks)
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv_writer(path)?;
        w.write_record(["index", "a"]).map_err(csv_err(path))?;
        for (i, a) in self.samples.iter().enumerate() {
            w.write_record([i.to_string(), fmt9(*a)])
                .map_err(csv_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_average_examples() {
        assert_eq!(running_avg_reward(&[], 0.1), Vec::<f64>::new());
        assert_eq!(running_avg_reward(&[0.0, -2.0], 1.0), vec![0.0, -1.0]);
        for dt in [0.01, 0.1, 3.0] {
            for v in running_avg_reward(&[1.5; 7], dt) {
                assert!((v - 1.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn welford_matches_two_pass() {
        let mut noise = NoiseSource::new(9);
        let xs: Vec<f64> = (0..1000).map(|_| 1e3 + noise.standard_normal()).collect();
        let mut s = RunningStats::default();
        xs.iter().for_each(|&x| s.push(x));
        let (m, var) = mean_var(&xs);
        assert!((s.mean() - m).abs() <= 1e-12 * m.abs());
        assert!((s.std() - var.sqrt()).abs() <= 1e-12 * var.sqrt());
        let mut one = RunningStats::default();
        one.push(4.0);
        assert_eq!((one.mean(), one.std()), (4.0, 0.0));
    }

    #[test]
    fn uniform_start_is_per_seed_and_in_range() {
        let cfg = ExperimentConfig::default();
        let (_, a) = initial_params(&cfg, 3);
        let (_, b) = initial_params(&cfg, 3);
        let (_, c) = initial_params(&cfg, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.0.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn report_text_has_eight_digits() {
        let report = solve_lq_command(&ExperimentConfig::default()).unwrap();
        let text = report.to_text();
        assert!(text.contains("theta* = (-0.59047134, -0.23069812, -0.46141679, -0.35624157, -0.1511906, 0.1731235)"), "{text}");
        assert!(
            text.contains("v*     = (1.5291316, -1.511906, -3.5624157)"),
            "{text}"
        );
    }
}
