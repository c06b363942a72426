//! Episodic Q-score matching through the martingale loss.
//!
//! For an episode on the grid `t_k = kΔt`, `k = 0..K`, the discounted
//! return-to-go net of the critic is
//! `G_k = −e^{−βt_k} Q(x_k, a_k) + Σ_{i≥k} e^{−βt_i} (r_i − λ/2 Ψ_i²) Δt`,
//! and the critic descends `½ Σ_k G_k² Δt`.

use thiserror::Error;

use crate::lq::LqParams;
use crate::noise::NoiseSource;
use crate::online::{
    lr_schedule, rollout, AlgoConfig, LearnError, LearnState, LearningRecord, RecordRow,
    DIVERGENCE_BOUND,
};
use crate::policy::{grad_a_q, grad_theta_q, grad_v_psi, psi_v, q_theta, QParams, ScoreParams};
use crate::sde::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum OfflineError {
    #[error("index {k} out of range for an episode with {len} transitions")]
    IndexOutOfRange { k: usize, len: usize },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("offline update diverged at episode {episode}")]
    Diverged { episode: usize },
}

/// One simulated episode and its discount factors `e^{−β t_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub discount_weights: Vec<f64>,
}

impl Episode {
    pub fn new(trajectory: Trajectory, beta: f64) -> Self {
        let discount_weights = trajectory.times.iter().map(|t| (-beta * t).exp()).collect();
        Self {
            trajectory,
            discount_weights,
        }
    }

    /// Number of transitions `K`.
    pub fn n_transitions(&self) -> usize {
        self.trajectory.n_transitions()
    }

    fn x(&self, k: usize) -> f64 {
        self.trajectory.states[k]
    }

    fn a(&self, k: usize) -> f64 {
        self.trajectory.actions[k]
    }
}

/// How the score parameters move in an offline update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfflineActorRule {
    /// Gradient of the martingale loss in `v`:
    /// `Σ_k [Σ_{i≥k} λ Ψ_i ∂Ψ_i/∂v Δt] G_k Δt`.
    MartingaleLoss,
    /// Discounted score-matching direction
    /// `Σ_k e^{−βt_k} (∂_a Q − λΨ) ∂Ψ/∂v Δt`.
    ScoreGradient,
}

/// Rolls out `n_steps` transitions under score `v` on the LQ environment.
pub fn sample_episode(
    p: &LqParams,
    v: &ScoreParams,
    cfg: &AlgoConfig,
    n_steps: usize,
    noise: &mut NoiseSource,
) -> Result<Episode, LearnError> {
    Ok(Episode::new(rollout(p, v, cfg, n_steps, noise)?, cfg.beta))
}

/// `G_k` for every `k < K`, by one backward suffix sum.
pub fn all_returns_to_go(ep: &Episode, theta: &QParams, v: &ScoreParams, lambda: f64) -> Vec<f64> {
    let n = ep.n_transitions();
    let dt = ep.trajectory.dt;
    let mut g = vec![0.0; n];
    let mut tail = 0.0;
    for k in (0..n).rev() {
        let (x, a) = (ep.x(k), ep.a(k));
        let psi = psi_v(v, x, a);
        let w = ep.discount_weights[k];
        tail += w * (ep.trajectory.reward_rates[k] - 0.5 * lambda * psi * psi) * dt;
        g[k] = -w * q_theta(theta, x, a) + tail;
    }
    g
}

pub fn episode_return_to_go(
    ep: &Episode,
    theta: &QParams,
    v: &ScoreParams,
    lambda: f64,
    k: usize,
) -> Result<f64, OfflineError> {
    let len = ep.n_transitions();
    if k >= len {
        return Err(OfflineError::IndexOutOfRange { k, len });
    }
    let dt = ep.trajectory.dt;
    let tail: f64 = (k..len)
        .map(|i| {
            let psi = psi_v(v, ep.x(i), ep.a(i));
            ep.discount_weights[i] * (ep.trajectory.reward_rates[i] - 0.5 * lambda * psi * psi) * dt
        })
        .sum();
    Ok(-ep.discount_weights[k] * q_theta(theta, ep.x(k), ep.a(k)) + tail)
}

/// `Σ_k e^{−βt_k} (∂_a Q − λΨ) ∂Ψ/∂v Δt` along the episode.
pub fn score_gradient_residual(
    theta: &QParams,
    v: &ScoreParams,
    lambda: f64,
    ep: &Episode,
) -> [f64; 3] {
    let dt = ep.trajectory.dt;
    let mut out = [0.0; 3];
    for k in 0..ep.n_transitions() {
        let (x, a) = (ep.x(k), ep.a(k));
        let gap = grad_a_q(theta, x, a) - lambda * psi_v(v, x, a);
        let g = grad_v_psi(v, x, a);
        for (o, gi) in out.iter_mut().zip(g) {
            *o += ep.discount_weights[k] * gap * gi * dt;
        }
    }
    out
}

/// Unscaled directions `(Δθ, Δv)` of one episode.
pub fn update_directions(
    ep: &Episode,
    theta: &QParams,
    v: &ScoreParams,
    lambda: f64,
    rule: OfflineActorRule,
) -> ([f64; 6], [f64; 3]) {
    let dt = ep.trajectory.dt;
    let g = all_returns_to_go(ep, theta, v, lambda);
    let mut d_theta = [0.0; 6];
    for (k, gk) in g.iter().enumerate() {
        for (d, xi) in d_theta
            .iter_mut()
            .zip(grad_theta_q(theta, ep.x(k), ep.a(k)))
        {
            *d += xi * gk * dt;
        }
    }
    let d_v = match rule {
        OfflineActorRule::ScoreGradient => score_gradient_residual(theta, v, lambda, ep),
        OfflineActorRule::MartingaleLoss => {
            let mut d_v = [0.0; 3];
            let mut h = [0.0; 3];
            for k in (0..g.len()).rev() {
                let (x, a) = (ep.x(k), ep.a(k));
                let psi = psi_v(v, x, a);
                for (hi, gi) in h.iter_mut().zip(grad_v_psi(v, x, a)) {
                    *hi += lambda * psi * gi * dt;
                }
                for (d, hi) in d_v.iter_mut().zip(h) {
                    *d += hi * g[k] * dt;
                }
            }
            d_v
        }
    };
    (d_theta, d_v)
}

/// One episode's gradient step with the martingale-loss actor rule.
pub fn offline_update(
    ep: &Episode,
    theta: &QParams,
    v: &ScoreParams,
    cfg: &AlgoConfig,
    episode_index: usize,
) -> Result<(QParams, ScoreParams), OfflineError> {
    offline_update_with(
        ep,
        theta,
        v,
        cfg,
        episode_index,
        OfflineActorRule::MartingaleLoss,
    )
}

pub fn offline_update_with(
    ep: &Episode,
    theta: &QParams,
    v: &ScoreParams,
    cfg: &AlgoConfig,
    episode_index: usize,
    rule: OfflineActorRule,
) -> Result<(QParams, ScoreParams), OfflineError> {
    let (d_theta, d_v) = update_directions(ep, theta, v, cfg.lambda, rule);
    let l = lr_schedule(episode_index as f64);
    let mut theta = *theta;
    let mut v = *v;
    for (t, d) in theta.0.iter_mut().zip(d_theta) {
        *t += l * cfg.alpha_theta * d;
    }
    for (p, d) in v.0.iter_mut().zip(d_v) {
        *p += l * cfg.alpha_v * d;
    }
    let bad = |m: f64| m.is_nan() || m > DIVERGENCE_BOUND;
    if bad(theta.max_abs()) || bad(v.max_abs()) {
        return Err(OfflineError::Diverged {
            episode: episode_index,
        });
    }
    Ok((theta, v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineConfig {
    /// Time step, discount, rates, seed, sampler and start state.
    pub algo: AlgoConfig,
    pub n_episodes: usize,
    /// Transitions per episode `K`; the horizon is `K Δt`.
    pub episode_steps: usize,
    pub rule: OfflineActorRule,
}

/// Sequential offline training. Rows of the record are indexed by episode;
/// the reward columns hold each episode's mean reward rate and the running
/// mean over episodes.
pub fn run_offline(
    cfg: &OfflineConfig,
    p: &LqParams,
    theta0: QParams,
    v0: ScoreParams,
) -> Result<LearningRecord, OfflineError> {
    cfg.algo.validate()?;
    let mut noise = NoiseSource::new(cfg.algo.seed);
    let (mut theta, mut v) = (theta0, v0);
    let mut rows = vec![RecordRow {
        step: 0,
        t: 0.0,
        theta,
        v,
        reward_rate: None,
        running_avg_reward: None,
    }];
    let mut reward_rates = Vec::with_capacity(cfg.n_episodes);
    let mut total = 0.0;
    for j in 0..cfg.n_episodes {
        let ep = sample_episode(p, &v, &cfg.algo, cfg.episode_steps, &mut noise)?;
        (theta, v) = offline_update_with(&ep, &theta, &v, &cfg.algo, j, cfg.rule)?;
        let rates = &ep.trajectory.reward_rates;
        let mean = if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        };
        reward_rates.push(mean);
        total += mean;
        let episode = j + 1;
        if episode % cfg.algo.record_every == 0 || episode == cfg.n_episodes {
            rows.push(RecordRow {
                step: episode,
                t: episode as f64 * cfg.episode_steps as f64 * cfg.algo.dt,
                theta,
                v,
                reward_rate: Some(mean),
                running_avg_reward: Some(total / episode as f64),
            });
        }
    }
    let final_state = LearnState {
        theta,
        v,
        x: f64::NAN,
        a: f64::NAN,
        step: cfg.n_episodes,
        cumulative_reward: total,
        last_reward: reward_rates.last().copied().unwrap_or(f64::NAN),
        last_delta: 0.0,
    };
    // `dt = 1` makes `final_running_avg_reward` the mean over episodes.
    Ok(LearningRecord {
        rows,
        reward_rates,
        final_state,
        dt: 1.0,
    })
}
