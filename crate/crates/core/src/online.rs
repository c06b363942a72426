//! Online actor-critic Q-score matching.
//!
//! Each iteration steps the environment from `(x, a)`, draws `a'` at the new
//! state, forms the temporal difference
//! `δ = Q(x', a') − Q(x, a) + r Δt − λ/2 Ψ(x, a)² Δt − β Q(x, a) Δt`
//! and moves the critic along `δ ∂Q/∂θ` and the score towards
//! `λ⁻¹ ∂_a Q`.

use std::io::Write;

use thiserror::Error;

use crate::format::fmt9;
use crate::lq::{env_step, EnvError, LqParams};
use crate::noise::NoiseSource;
use crate::policy::{
    grad_a_q, grad_theta_q, grad_v_psi, psi_v, q_theta, QParams, Score, ScoreParams,
};
use crate::samplers::{SamplerError, SamplerKind};
use crate::sde::Trajectory;

/// Parameters larger than this in absolute value count as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub alpha_theta: f64,
    pub alpha_v: f64,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub sampler: SamplerKind,
    /// Keep every `record_every`-th step in the learning record.
    pub record_every: usize,
    pub x0: f64,
    /// Initial action for `DirectSde`; the other samplers draw it.
    pub a0: f64,
}

impl AlgoConfig {
    /// `Δt = 0.1`, `T = 10⁴`, `α_θ = α_v = 0.01`, `β = 1`, `λ = 0.1`,
    /// continuous action dynamics, start at the origin.
    pub fn benchmark() -> Self {
        Self {
            dt: 0.1,
            n_steps: 100_000,
            alpha_theta: 0.01,
            alpha_v: 0.01,
            beta: 1.0,
            lambda: 0.1,
            seed: 0,
            sampler: SamplerKind::DirectSde,
            record_every: 100,
            x0: 0.0,
            a0: 0.0,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let positive = [
            ("dt", self.dt),
            ("alpha_theta", self.alpha_theta),
            ("alpha_v", self.alpha_v),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(LearnError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.record_every == 0 {
            return Err(LearnError::InvalidConfig(
                "record_every must be positive".into(),
            ));
        }
        if !(self.x0.is_finite() && self.a0.is_finite()) {
            return Err(LearnError::InvalidConfig(
                "initial state and action must be finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("invalid algorithm configuration: {0}")]
    InvalidConfig(String),
    #[error("parameters diverged at step {step} (last temporal difference {last_delta})")]
    Diverged { step: usize, last_delta: f64 },
    #[error("environment failure at step {step}: {source}")]
    Env { step: usize, source: EnvError },
    #[error("sampler failure at step {step}: {source}")]
    Sampler { step: usize, source: SamplerError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnState {
    pub theta: QParams,
    pub v: ScoreParams,
    pub x: f64,
    pub a: f64,
    pub step: usize,
    pub cumulative_reward: f64,
    /// Reward rate `r(x, a)` of the most recent transition.
    pub last_reward: f64,
    pub last_delta: f64,
}

impl LearnState {
    pub fn new(theta: QParams, v: ScoreParams, x: f64, a: f64) -> Self {
        Self {
            theta,
            v,
            x,
            a,
            step: 0,
            cumulative_reward: 0.0,
            last_reward: f64::NAN,
            last_delta: 0.0,
        }
    }
}

/// Which parameters a step is allowed to change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Both,
    /// Policy evaluation: the score stays fixed.
    CriticOnly,
    /// Pure rollout with fixed parameters.
    Frozen,
}

/// `1 / max(1, √log t)`, with `log t` clamped at 0 so that `l = 1` on
/// `[0, e]`.
pub fn lr_schedule(t: f64) -> f64 {
    1.0 / t.ln().max(0.0).sqrt().max(1.0)
}

#[allow(clippy::too_many_arguments)]
pub fn td_delta(
    theta: &QParams,
    v: &ScoreParams,
    x: f64,
    a: f64,
    x_next: f64,
    a_next: f64,
    r: f64,
    dt: f64,
    beta: f64,
    lambda: f64,
) -> f64 {
    let q = q_theta(theta, x, a);
    let psi = psi_v(v, x, a);
    q_theta(theta, x_next, a_next) - q + r * dt - 0.5 * lambda * psi * psi * dt - beta * q * dt
}

/// Raw (unscaled) critic and actor directions at `(x, a)` for a given δ.
pub fn update_directions(
    theta: &QParams,
    v: &ScoreParams,
    x: f64,
    a: f64,
    delta: f64,
    lambda: f64,
) -> ([f64; 6], [f64; 3]) {
    let xi = grad_theta_q(theta, x, a);
    let d_theta = xi.map(|g| g * delta);
    let gap = grad_a_q(theta, x, a) / lambda - psi_v(v, x, a);
    let d_v = grad_v_psi(v, x, a).map(|g| g * gap);
    (d_theta, d_v)
}

/// One loop iteration with both parameter sets learning.
///
/// `env` maps `(x, a, noise)` to `(x', r(x, a))`. It is called before the
/// sampler, so the environment always consumes its noise first.
pub fn cqsm_step<E>(
    state: &LearnState,
    cfg: &AlgoConfig,
    env: &mut E,
    noise: &mut NoiseSource,
) -> Result<LearnState, LearnError>
where
    E: FnMut(f64, f64, &mut NoiseSource) -> Result<(f64, f64), EnvError>,
{
    step_with_mode(state, cfg, env, noise, UpdateMode::Both)
}

pub fn step_with_mode<E>(
    state: &LearnState,
    cfg: &AlgoConfig,
    env: &mut E,
    noise: &mut NoiseSource,
    mode: UpdateMode,
) -> Result<LearnState, LearnError>
where
    E: FnMut(f64, f64, &mut NoiseSource) -> Result<(f64, f64), EnvError>,
{
    let k = state.step;
    let (x, a) = (state.x, state.a);
    let (x_next, r) = env(x, a, noise).map_err(|source| LearnError::Env { step: k, source })?;
    let v = state.v;
    let a_next = cfg
        .sampler
        .next_action(&v, x, a, x_next, cfg.dt, noise)
        .map_err(|source| LearnError::Sampler { step: k, source })?;

    let delta = td_delta(
        &state.theta,
        &v,
        x,
        a,
        x_next,
        a_next,
        r,
        cfg.dt,
        cfg.beta,
        cfg.lambda,
    );
    let mut theta = state.theta;
    let mut v_new = v;
    if mode != UpdateMode::Frozen {
        let (d_theta, d_v) = update_directions(&state.theta, &v, x, a, delta, cfg.lambda);
        let l = lr_schedule(k as f64 * cfg.dt);
        for (t, d) in theta.0.iter_mut().zip(d_theta) {
            *t += l * cfg.alpha_theta * d;
        }
        if mode == UpdateMode::Both {
            for (p, d) in v_new.0.iter_mut().zip(d_v) {
                *p += l * cfg.alpha_v * d;
            }
        }
        let bad = |m: f64| m.is_nan() || m > DIVERGENCE_BOUND;
        if bad(theta.max_abs()) || bad(v_new.max_abs()) || !delta.is_finite() {
            return Err(LearnError::Diverged {
                step: k,
                last_delta: delta,
            });
        }
    }

    Ok(LearnState {
        theta,
        v: v_new,
        x: x_next,
        a: a_next,
        step: k + 1,
        cumulative_reward: state.cumulative_reward + r * cfg.dt,
        last_reward: r,
        last_delta: delta,
    })
}

/// One thinned row of a learning record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRow {
    pub step: usize,
    pub t: f64,
    pub theta: QParams,
    pub v: ScoreParams,
    /// Reward rate of the transition that ended at this step; absent at
    /// step 0.
    pub reward_rate: Option<f64>,
    pub running_avg_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningRecord {
    pub rows: Vec<RecordRow>,
    /// Every transition's reward rate, unthinned.
    pub reward_rates: Vec<f64>,
    pub final_state: LearnState,
    pub dt: f64,
}

pub const RECORD_HEADER: [&str; 13] = [
    "step",
    "t",
    "theta0",
    "theta1",
    "theta2",
    "theta3",
    "theta4",
    "theta5",
    "v0",
    "v1",
    "v2",
    "reward_rate",
    "running_avg_reward",
];

impl LearningRecord {
    pub fn final_theta(&self) -> QParams {
        self.final_state.theta
    }

    pub fn final_v(&self) -> ScoreParams {
        self.final_state.v
    }

    /// Time average of all reward rates seen, or NaN for an empty run.
    pub fn final_running_avg_reward(&self) -> f64 {
        if self.reward_rates.is_empty() {
            f64::NAN
        } else {
            self.final_state.cumulative_reward / (self.reward_rates.len() as f64 * self.dt)
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(RECORD_HEADER)?;
        for row in &self.rows {
            let mut rec = vec![row.step.to_string(), fmt9(row.t)];
            rec.extend(row.theta.0.iter().map(|&x| fmt9(x)));
            rec.extend(row.v.0.iter().map(|&x| fmt9(x)));
            rec.push(row.reward_rate.map(fmt9).unwrap_or_default());
            rec.push(row.running_avg_reward.map(fmt9).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the learning loop on the LQ environment.
pub fn run_cqsm(
    cfg: &AlgoConfig,
    p: &LqParams,
    theta0: QParams,
    v0: ScoreParams,
) -> Result<LearningRecord, LearnError> {
    run_with_mode(cfg, p, theta0, v0, UpdateMode::Both)
}

/// Same loop and noise stream as [`run_cqsm`] with restricted updates.
/// `UpdateMode::Frozen` with the optimal pair gives the reward baseline
/// on the same seed.
pub fn run_with_mode(
    cfg: &AlgoConfig,
    p: &LqParams,
    theta0: QParams,
    v0: ScoreParams,
    mode: UpdateMode,
) -> Result<LearningRecord, LearnError> {
    cfg.validate()?;
    let p = *p;
    let mut env = move |x: f64, a: f64, noise: &mut NoiseSource| env_step(&p, x, a, cfg.dt, noise);
    run_loop(cfg, &mut env, theta0, v0, mode)
}

/// The learning loop against an arbitrary environment.
pub fn run_loop<E>(
    cfg: &AlgoConfig,
    env: &mut E,
    theta0: QParams,
    v0: ScoreParams,
    mode: UpdateMode,
) -> Result<LearningRecord, LearnError>
where
    E: FnMut(f64, f64, &mut NoiseSource) -> Result<(f64, f64), EnvError>,
{
    cfg.validate()?;
    let mut noise = NoiseSource::new(cfg.seed);
    let a0 = cfg
        .sampler
        .initial_action(&v0, cfg.x0, cfg.a0, &mut noise)
        .map_err(|source| LearnError::Sampler { step: 0, source })?;
    let mut state = LearnState::new(theta0, v0, cfg.x0, a0);

    let n_rows = cfg.n_steps / cfg.record_every + 2;
    let mut rows = Vec::with_capacity(n_rows);
    let mut reward_rates = Vec::with_capacity(cfg.n_steps);
    rows.push(RecordRow {
        step: 0,
        t: 0.0,
        theta: theta0,
        v: v0,
        reward_rate: None,
        running_avg_reward: None,
    });

    for _ in 0..cfg.n_steps {
        state = step_with_mode(&state, cfg, env, &mut noise, mode)?;
        reward_rates.push(state.last_reward);
        if state.step.is_multiple_of(cfg.record_every) || state.step == cfg.n_steps {
            rows.push(RecordRow {
                step: state.step,
                t: state.step as f64 * cfg.dt,
                theta: state.theta,
                v: state.v,
                reward_rate: Some(state.last_reward),
                running_avg_reward: Some(state.cumulative_reward / (state.step as f64 * cfg.dt)),
            });
        }
    }
    Ok(LearningRecord {
        rows,
        reward_rates,
        final_state: state,
        dt: cfg.dt,
    })
}

/// Rolls out `n_steps` transitions on the LQ environment with a fixed
/// score, using the sampler and start state of `cfg`.
///
/// Noise is drawn in the same order as the learning loop: the initial
/// action, then per step the environment followed by the sampler.
pub fn rollout<S: Score + ?Sized>(
    p: &LqParams,
    score: &S,
    cfg: &AlgoConfig,
    n_steps: usize,
    noise: &mut NoiseSource,
) -> Result<Trajectory, LearnError> {
    let a0 = cfg
        .sampler
        .initial_action(score, cfg.x0, cfg.a0, noise)
        .map_err(|source| LearnError::Sampler { step: 0, source })?;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut actions = Vec::with_capacity(n_steps + 1);
    let mut rewards = Vec::with_capacity(n_steps);
    let (mut x, mut a) = (cfg.x0, a0);
    times.push(0.0);
    states.push(x);
    actions.push(a);
    for k in 0..n_steps {
        let (x_next, r) = env_step(p, x, a, cfg.dt, noise)
            .map_err(|source| LearnError::Env { step: k, source })?;
        let a_next = cfg
            .sampler
            .next_action(score, x, a, x_next, cfg.dt, noise)
            .map_err(|source| LearnError::Sampler { step: k, source })?;
        rewards.push(r);
        x = x_next;
        a = a_next;
        times.push((k + 1) as f64 * cfg.dt);
        states.push(x);
        actions.push(a);
    }
    Ok(Trajectory {
        times,
        states,
        actions,
        reward_rates: rewards,
        state_dim: 1,
        action_dim: 1,
        dt: cfg.dt,
        seed: noise.seed(),
    })
}
