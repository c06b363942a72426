//! Plain-text experiment configuration.
//!
//! One `key = value` per line, `#` starts a comment, keys carry a section
//! prefix (`lq.`, `algo.`, `experiment.`, `offline.`, `diag.`, `sampling.`).
//! Missing keys take the benchmark defaults; unknown or repeated keys are
//! errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::lq::{LqError, LqParams};
use crate::offline::OfflineActorRule;
use crate::online::AlgoConfig;
use crate::samplers::{LangevinConfig, NoiseSchedule, SamplerError, SamplerKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Lq(#[from] LqError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaInit {
    Zeros,
    Explicit([f64; 6]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreInit {
    /// Each coordinate i.i.d. uniform on `[0, 1)`, drawn per seed.
    Uniform01,
    Explicit([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Online,
    Offline,
}

/// Test process used by `check-martingale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFn {
    Constant,
    ParamGradient(usize),
    Lagged { lag: usize, power: i32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSettings {
    pub n_episodes: usize,
    pub episode_steps: usize,
    pub rule: OfflineActorRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagSettings {
    pub n_traj: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Constant added to the analytic Q before testing.
    pub offset: f64,
    pub test: TestFn,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSettings {
    pub langevin: LangevinConfig,
    pub ddpm_steps: usize,
    pub ddpm_beta_start: f64,
    pub ddpm_beta_end: f64,
    /// Which sampler `sample-actions` exercises.
    pub kind: String,
    pub n_samples: usize,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub lq: LqParams,
    /// Learning settings. `beta`, `lambda` mirror `lq` and `seed` is set
    /// per run.
    pub algo: AlgoConfig,
    pub algorithm: Algorithm,
    pub offline: OfflineSettings,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub theta0_mode: ThetaInit,
    pub v0_mode: ScoreInit,
    pub output_dir: PathBuf,
    pub parallel: usize,
    pub diag: DiagSettings,
    pub sampling: SamplingSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let lq = LqParams::benchmark();
        Self {
            lq,
            algo: AlgoConfig {
                n_steps: 100_000,
                ..AlgoConfig::benchmark()
            },
            algorithm: Algorithm::Online,
            offline: OfflineSettings {
                n_episodes: 2000,
                episode_steps: 500,
                rule: OfflineActorRule::ScoreGradient,
            },
            n_seeds: 5,
            base_seed: 0,
            theta0_mode: ThetaInit::Zeros,
            v0_mode: ScoreInit::Uniform01,
            output_dir: PathBuf::from("out"),
            parallel: 1,
            diag: DiagSettings {
                n_traj: 500,
                dt: 0.01,
                horizon: 50.0,
                offset: 0.0,
                test: TestFn::Constant,
                seed: 0,
            },
            sampling: SamplingSettings {
                langevin: LangevinConfig::default(),
                ddpm_steps: 20,
                ddpm_beta_start: 1e-3,
                ddpm_beta_end: 0.19,
                kind: "langevin".into(),
                n_samples: 100_000,
                x: 0.0,
            },
        }
    }
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    let x: f64 = value
        .parse()
        .map_err(|_| invalid(key, value, "not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(key, value, "must be finite"))
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value
        .parse()
        .map_err(|_| invalid(key, value, "not a non-negative integer"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value
        .parse()
        .map_err(|_| invalid(key, value, "not a non-negative integer"))
}

fn parse_vec<const N: usize>(key: &str, value: &str) -> Result<[f64; N], ConfigError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(invalid(
            key,
            value,
            format!("expected {N} comma-separated numbers"),
        ));
    }
    let mut out = [0.0; N];
    for (o, s) in out.iter_mut().zip(parts) {
        *o = parse_f64(key, s)?;
    }
    Ok(out)
}

fn parse_test_fn(key: &str, value: &str) -> Result<TestFn, ConfigError> {
    if value == "constant" {
        return Ok(TestFn::Constant);
    }
    if let Some(i) = value.strip_prefix("theta") {
        let i = parse_usize(key, i)?;
        if i < 6 {
            return Ok(TestFn::ParamGradient(i));
        }
    }
    if let Some(rest) = value.strip_prefix("lag:") {
        if let Some((lag, power)) = rest.split_once(':') {
            let lag = parse_usize(key, lag)?;
            let power = power
                .parse()
                .map_err(|_| invalid(key, value, "power must be an integer"))?;
            return Ok(TestFn::Lagged { lag, power });
        }
    }
    Err(invalid(
        key,
        value,
        "expected `constant`, `theta<i>` or `lag:<lag>:<power>`",
    ))
}

fn test_fn_name(t: TestFn) -> String {
    match t {
        TestFn::Constant => "constant".into(),
        TestFn::ParamGradient(i) => format!("theta{i}"),
        TestFn::Lagged { lag, power } => format!("lag:{lag}:{power}"),
    }
}

fn join<const N: usize>(v: &[f64; N]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    text: raw.trim().into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    text: raw.trim().into(),
                });
            }
            if entries
                .insert(key.to_string(), (line_no, value.to_string()))
                .is_some()
            {
                return Err(ConfigError::Duplicate {
                    line: line_no,
                    key: key.into(),
                });
            }
        }

        let mut cfg = Self::default();
        let mut sampler_name = "direct_sde".to_string();
        for (key, (line, value)) in &entries {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "lq.A" => cfg.lq.a = parse_f64(k, v)?,
                "lq.B" => cfg.lq.b = parse_f64(k, v)?,
                "lq.C" => cfg.lq.c = parse_f64(k, v)?,
                "lq.D" => cfg.lq.d = parse_f64(k, v)?,
                "lq.M" => cfg.lq.m = parse_f64(k, v)?,
                "lq.N" => cfg.lq.n = parse_f64(k, v)?,
                "lq.R" => cfg.lq.r = parse_f64(k, v)?,
                "lq.P" => cfg.lq.p = parse_f64(k, v)?,
                "lq.Pp" => cfg.lq.p_prime = parse_f64(k, v)?,
                "lq.beta" => cfg.lq.beta = parse_f64(k, v)?,
                "lq.lambda" => cfg.lq.lambda = parse_f64(k, v)?,
                "algo.dt" => cfg.algo.dt = parse_f64(k, v)?,
                "algo.n_steps" => cfg.algo.n_steps = parse_usize(k, v)?,
                "algo.alpha_theta" => cfg.algo.alpha_theta = parse_f64(k, v)?,
                "algo.alpha_v" => cfg.algo.alpha_v = parse_f64(k, v)?,
                "algo.record_every" => cfg.algo.record_every = parse_usize(k, v)?,
                "algo.x0" => cfg.algo.x0 = parse_f64(k, v)?,
                "algo.a0" => cfg.algo.a0 = parse_f64(k, v)?,
                "algo.sampler" => match v {
                    "langevin" | "ddpm" | "direct_sde" => sampler_name = v.into(),
                    _ => return Err(invalid(k, v, "expected langevin, ddpm or direct_sde")),
                },
                "algo.algorithm" => {
                    cfg.algorithm = match v {
                        "online" => Algorithm::Online,
                        "offline" => Algorithm::Offline,
                        _ => return Err(invalid(k, v, "expected online or offline")),
                    }
                }
                "offline.n_episodes" => cfg.offline.n_episodes = parse_usize(k, v)?,
                "offline.episode_steps" => cfg.offline.episode_steps = parse_usize(k, v)?,
                "offline.actor_rule" => {
                    cfg.offline.rule = match v {
                        "martingale_loss" => OfflineActorRule::MartingaleLoss,
                        "score_gradient" => OfflineActorRule::ScoreGradient,
                        _ => {
                            return Err(invalid(k, v, "expected martingale_loss or score_gradient"))
                        }
                    }
                }
                "experiment.n_seeds" => cfg.n_seeds = parse_usize(k, v)?,
                "experiment.base_seed" => cfg.base_seed = parse_u64(k, v)?,
                "experiment.theta0" => {
                    cfg.theta0_mode = if v == "zeros" {
                        ThetaInit::Zeros
                    } else {
                        ThetaInit::Explicit(parse_vec(k, v)?)
                    }
                }
                "experiment.v0" => {
                    cfg.v0_mode = if v == "uniform01" {
                        ScoreInit::Uniform01
                    } else {
                        ScoreInit::Explicit(parse_vec(k, v)?)
                    }
                }
                "experiment.output_dir" => cfg.output_dir = PathBuf::from(v),
                "experiment.parallel" => cfg.parallel = parse_usize(k, v)?,
                "diag.n_traj" => cfg.diag.n_traj = parse_usize(k, v)?,
                "diag.dt" => cfg.diag.dt = parse_f64(k, v)?,
                "diag.horizon" => cfg.diag.horizon = parse_f64(k, v)?,
                "diag.offset" => cfg.diag.offset = parse_f64(k, v)?,
                "diag.test" => cfg.diag.test = parse_test_fn(k, v)?,
                "diag.seed" => cfg.diag.seed = parse_u64(k, v)?,
                "sampling.sampler" => match v {
                    "langevin" | "ddpm" => cfg.sampling.kind = v.into(),
                    _ => return Err(invalid(k, v, "expected langevin or ddpm")),
                },
                "sampling.langevin_dt" => cfg.sampling.langevin.dt = parse_f64(k, v)?,
                "sampling.langevin_steps" => cfg.sampling.langevin.n_steps = parse_usize(k, v)?,
                "sampling.langevin_thin" => cfg.sampling.langevin.thin = parse_usize(k, v)?,
                "sampling.ddpm_steps" => cfg.sampling.ddpm_steps = parse_usize(k, v)?,
                "sampling.ddpm_beta_start" => cfg.sampling.ddpm_beta_start = parse_f64(k, v)?,
                "sampling.ddpm_beta_end" => cfg.sampling.ddpm_beta_end = parse_f64(k, v)?,
                "sampling.n_samples" => cfg.sampling.n_samples = parse_usize(k, v)?,
                "sampling.x" => cfg.sampling.x = parse_f64(k, v)?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: *line,
                        key: key.clone(),
                    })
                }
            }
        }
        cfg.algo.sampler = match sampler_name.as_str() {
            "langevin" => SamplerKind::Langevin(cfg.sampling.langevin),
            "ddpm" => SamplerKind::Ddpm(cfg.ddpm_schedule()?),
            _ => SamplerKind::DirectSde,
        };
        cfg.sync_algo();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copies the discount and temperature from `lq` into `algo`.
    pub fn sync_algo(&mut self) {
        self.algo.beta = self.lq.beta;
        self.algo.lambda = self.lq.lambda;
    }

    pub fn ddpm_schedule(&self) -> Result<NoiseSchedule, SamplerError> {
        NoiseSchedule::linear(
            self.sampling.ddpm_steps,
            self.sampling.ddpm_beta_start,
            self.sampling.ddpm_beta_end,
        )
    }

    /// Checks everything except the LQ discount condition, which the
    /// commands report themselves.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks: [(&str, bool, String); 10] = [
            (
                "experiment.n_seeds",
                self.n_seeds >= 1,
                self.n_seeds.to_string(),
            ),
            (
                "experiment.parallel",
                self.parallel >= 1,
                self.parallel.to_string(),
            ),
            ("algo.dt", self.algo.dt > 0.0, self.algo.dt.to_string()),
            (
                "algo.alpha_theta",
                self.algo.alpha_theta > 0.0,
                self.algo.alpha_theta.to_string(),
            ),
            (
                "algo.alpha_v",
                self.algo.alpha_v > 0.0,
                self.algo.alpha_v.to_string(),
            ),
            (
                "algo.record_every",
                self.algo.record_every >= 1,
                self.algo.record_every.to_string(),
            ),
            (
                "diag.n_traj",
                self.diag.n_traj >= 2,
                self.diag.n_traj.to_string(),
            ),
            ("diag.dt", self.diag.dt > 0.0, self.diag.dt.to_string()),
            (
                "diag.horizon",
                self.diag.horizon >= self.diag.dt,
                self.diag.horizon.to_string(),
            ),
            (
                "sampling.n_samples",
                self.sampling.n_samples >= 2,
                self.sampling.n_samples.to_string(),
            ),
        ];
        for (key, ok, value) in checks {
            if !ok {
                return Err(invalid(key, &value, "out of range"));
            }
        }
        self.sampling.langevin.validate()?;
        self.ddpm_schedule()?;
        Ok(())
    }

    /// Every setting that influences results, in parseable form and a
    /// fixed order. Output location and thread count are left out since
    /// they do not change any output file.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let l = &self.lq;
        let a = &self.algo;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        for (k, v) in [
            ("lq.A", l.a),
            ("lq.B", l.b),
            ("lq.C", l.c),
            ("lq.D", l.d),
            ("lq.M", l.m),
            ("lq.N", l.n),
            ("lq.R", l.r),
            ("lq.P", l.p),
            ("lq.Pp", l.p_prime),
            ("lq.beta", l.beta),
            ("lq.lambda", l.lambda),
        ] {
            kv(k, format!("{v:?}"));
        }
        kv(
            "algo.algorithm",
            if self.algorithm == Algorithm::Online {
                "online"
            } else {
                "offline"
            }
            .into(),
        );
        kv("algo.dt", format!("{:?}", a.dt));
        kv("algo.n_steps", a.n_steps.to_string());
        kv("algo.alpha_theta", format!("{:?}", a.alpha_theta));
        kv("algo.alpha_v", format!("{:?}", a.alpha_v));
        kv("algo.sampler", a.sampler.name().into());
        kv("algo.record_every", a.record_every.to_string());
        kv("algo.x0", format!("{:?}", a.x0));
        kv("algo.a0", format!("{:?}", a.a0));
        kv("offline.n_episodes", self.offline.n_episodes.to_string());
        kv(
            "offline.episode_steps",
            self.offline.episode_steps.to_string(),
        );
        kv(
            "offline.actor_rule",
            match self.offline.rule {
                OfflineActorRule::MartingaleLoss => "martingale_loss",
                OfflineActorRule::ScoreGradient => "score_gradient",
            }
            .into(),
        );
        kv("experiment.n_seeds", self.n_seeds.to_string());
        kv("experiment.base_seed", self.base_seed.to_string());
        kv(
            "experiment.theta0",
            match &self.theta0_mode {
                ThetaInit::Zeros => "zeros".into(),
                ThetaInit::Explicit(t) => join(t),
            },
        );
        kv(
            "experiment.v0",
            match &self.v0_mode {
                ScoreInit::Uniform01 => "uniform01".into(),
                ScoreInit::Explicit(v) => join(v),
            },
        );
        kv("diag.n_traj", self.diag.n_traj.to_string());
        kv("diag.dt", format!("{:?}", self.diag.dt));
        kv("diag.horizon", format!("{:?}", self.diag.horizon));
        kv("diag.offset", format!("{:?}", self.diag.offset));
        kv("diag.test", test_fn_name(self.diag.test));
        kv("diag.seed", self.diag.seed.to_string());
        kv("sampling.sampler", self.sampling.kind.clone());
        kv(
            "sampling.langevin_dt",
            format!("{:?}", self.sampling.langevin.dt),
        );
        kv(
            "sampling.langevin_steps",
            self.sampling.langevin.n_steps.to_string(),
        );
        kv(
            "sampling.langevin_thin",
            self.sampling.langevin.thin.to_string(),
        );
        kv("sampling.ddpm_steps", self.sampling.ddpm_steps.to_string());
        kv(
            "sampling.ddpm_beta_start",
            format!("{:?}", self.sampling.ddpm_beta_start),
        );
        kv(
            "sampling.ddpm_beta_end",
            format!("{:?}", self.sampling.ddpm_beta_end),
        );
        kv("sampling.n_samples", self.sampling.n_samples.to_string());
        kv("sampling.x", format!("{:?}", self.sampling.x));
        s
    }
}
