//! Martingale diagnostics for candidate Q-functions.
//!
//! For a score `Ψ` and a candidate `q`, the discounted process
//! `M_t = e^{−βt} q(X_t, a_t) + ∫_0^t e^{−βs} (r − λ/2 Ψ²) ds`
//! is a martingale exactly when `q` is the Q-function of `Ψ`. The
//! diagnostics test `E Σ_k ξ_k ΔM_k = 0` for a few test processes `ξ`,
//! estimating the mean over independent trajectories.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::lq::LqParams;
use crate::noise::NoiseSource;
use crate::online::{rollout, AlgoConfig, LearnError};
use crate::policy::{grad_theta_q, QParams, Score};
use crate::sde::Trajectory;

/// Monte Carlo estimate of a mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub estimate: f64,
    pub std_error: f64,
    pub n_trajectories: usize,
    /// `estimate / std_error`, or 0 when both vanish.
    pub z_score: f64,
}

impl ResidualReport {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let estimate = samples.iter().sum::<f64>() / n as f64;
        let std_error = jackknife_std_error(samples);
        let z_score = if std_error > 0.0 {
            estimate / std_error
        } else if estimate == 0.0 {
            0.0
        } else {
            estimate.signum() * f64::INFINITY
        };
        Self {
            estimate,
            std_error,
            n_trajectories: n,
            z_score,
        }
    }
}

/// Jackknife standard error of the sample mean. For the mean this equals
/// `s / √n` with `s` the sample standard deviation.
pub fn jackknife_std_error(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::NAN;
    }
    let total: f64 = samples.iter().sum();
    let leave_one_out: Vec<f64> = samples
        .iter()
        .map(|s| (total - s) / (n - 1) as f64)
        .collect();
    let mean_loo = leave_one_out.iter().sum::<f64>() / n as f64;
    let ss: f64 = leave_one_out.iter().map(|m| (m - mean_loo).powi(2)).sum();
    ((n - 1) as f64 / n as f64 * ss).sqrt()
}

/// Past of a trajectory up to and including sample `k`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub times: &'a [f64],
    pub states: &'a [f64],
    pub actions: &'a [f64],
    pub k: usize,
}

impl History<'_> {
    pub fn x(&self) -> f64 {
        self.states[self.k]
    }

    pub fn a(&self) -> f64 {
        self.actions[self.k]
    }
}

/// An adapted test process `ξ_k`, a function of the path up to `t_k`.
pub trait TestProcess: Sync {
    fn eval(&self, h: &History<'_>) -> f64;
}

impl<F: Fn(&History<'_>) -> f64 + Sync> TestProcess for F {
    fn eval(&self, h: &History<'_>) -> f64 {
        self(h)
    }
}

/// `ξ ≡ 1`.
#[derive(Debug, Clone, Copy)]
pub struct Constant;

impl TestProcess for Constant {
    fn eval(&self, _: &History<'_>) -> f64 {
        1.0
    }
}

/// One component of the critic features `∂Q^θ/∂θ` at the current pair.
#[derive(Debug, Clone, Copy)]
pub struct ParamGradient {
    pub index: usize,
}

impl TestProcess for ParamGradient {
    fn eval(&self, h: &History<'_>) -> f64 {
        grad_theta_q(&QParams::zeros(), h.x(), h.a())[self.index]
    }
}

/// `x_{k−lag}^power`, zero before enough history exists.
#[derive(Debug, Clone, Copy)]
pub struct LaggedState {
    pub lag: usize,
    pub power: i32,
}

impl TestProcess for LaggedState {
    fn eval(&self, h: &History<'_>) -> f64 {
        if h.k < self.lag {
            0.0
        } else {
            h.states[h.k - self.lag].powi(self.power)
        }
    }
}

fn simulate_batch<S, T, F>(
    p: &LqParams,
    score: &S,
    cfg: &AlgoConfig,
    n_traj: usize,
    per_path: F,
) -> Result<Vec<T>, LearnError>
where
    S: Score + Sync + ?Sized,
    T: Send,
    F: Fn(&Trajectory) -> T + Sync,
{
    cfg.validate()?;
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut noise = NoiseSource::with_stream(cfg.seed, i as u64);
            rollout(p, score, cfg, cfg.n_steps, &mut noise).map(|tr| per_path(&tr))
        })
        .collect()
}

/// `Σ_k ξ_k [e^{−βt_{k+1}} q_{k+1} − e^{−βt_k} q_k + e^{−βt_k}(r_k − λ/2 Ψ_k²) Δt]`
/// along one path.
pub fn path_orthogonality<Q, S, X>(
    tr: &Trajectory,
    q: &Q,
    score: &S,
    xi: &X,
    beta: f64,
    lambda: f64,
) -> f64
where
    Q: Fn(f64, f64) -> f64 + ?Sized,
    S: Score + ?Sized,
    X: TestProcess + ?Sized,
{
    let dt = tr.dt;
    let mut sum = 0.0;
    let mut w = 1.0;
    let mut q_k = q(tr.states[0], tr.actions[0]);
    for k in 0..tr.n_transitions() {
        let (x, a) = (tr.states[k], tr.actions[k]);
        let w_next = (-beta * tr.times[k + 1]).exp();
        let q_next = q(tr.states[k + 1], tr.actions[k + 1]);
        let psi = score.score(x, a);
        let dm =
            w_next * q_next - w * q_k + w * (tr.reward_rates[k] - 0.5 * lambda * psi * psi) * dt;
        let h = History {
            times: &tr.times,
            states: &tr.states,
            actions: &tr.actions,
            k,
        };
        sum += xi.eval(&h) * dm;
        w = w_next;
        q_k = q_next;
    }
    sum
}

/// Mean of [`path_orthogonality`] over `n_traj` trajectories from
/// `(cfg.x0, a0)` with horizon `cfg.n_steps · cfg.dt`. Trajectory `i`
/// draws from stream `i` of `cfg.seed`.
pub fn orthogonality_residual<Q, S, X>(
    q: &Q,
    score: &S,
    xi: &X,
    p: &LqParams,
    cfg: &AlgoConfig,
    n_traj: usize,
) -> Result<ResidualReport, LearnError>
where
    Q: Fn(f64, f64) -> f64 + Sync + ?Sized,
    S: Score + Sync + ?Sized,
    X: TestProcess + ?Sized,
{
    if n_traj < 2 {
        return Err(LearnError::InvalidConfig(
            "at least two trajectories are needed".into(),
        ));
    }
    let samples = simulate_batch(p, score, cfg, n_traj, |tr| {
        path_orthogonality(tr, q, score, xi, cfg.beta, cfg.lambda)
    })?;
    Ok(ResidualReport::from_samples(&samples))
}

/// `½ Σ_k G_k² Δt` along one path, `G_k` being the discounted return-to-go
/// net of `e^{−βt_k} q(x_k, a_k)`.
pub fn path_martingale_loss<Q, S>(tr: &Trajectory, q: &Q, score: &S, beta: f64, lambda: f64) -> f64
where
    Q: Fn(f64, f64) -> f64 + ?Sized,
    S: Score + ?Sized,
{
    let dt = tr.dt;
    let mut tail = 0.0;
    let mut loss = 0.0;
    for k in (0..tr.n_transitions()).rev() {
        let (x, a) = (tr.states[k], tr.actions[k]);
        let w = (-beta * tr.times[k]).exp();
        let psi = score.score(x, a);
        tail += w * (tr.reward_rates[k] - 0.5 * lambda * psi * psi) * dt;
        let g = tail - w * q(x, a);
        loss += 0.5 * g * g * dt;
    }
    loss
}

/// Martingale loss averaged over `n_traj` trajectories.
pub fn martingale_loss<Q, S>(
    q: &Q,
    score: &S,
    p: &LqParams,
    cfg: &AlgoConfig,
    n_traj: usize,
) -> Result<f64, LearnError>
where
    Q: Fn(f64, f64) -> f64 + Sync + ?Sized,
    S: Score + Sync + ?Sized,
{
    if n_traj == 0 {
        return Err(LearnError::InvalidConfig(
            "at least one trajectory is needed".into(),
        ));
    }
    let losses = simulate_batch(p, score, cfg, n_traj, |tr| {
        path_martingale_loss(tr, q, score, cfg.beta, cfg.lambda)
    })?;
    Ok(losses.iter().sum::<f64>() / n_traj as f64)
}

/// Per-trajectory discounted returns `Σ_k e^{−βt_k}(r_k − λ/2 Ψ_k²) Δt`.
/// Stream `i` of `cfg.seed` drives trajectory `i`, so two scores evaluated
/// with the same `cfg` share common random numbers.
pub fn discounted_returns<S>(
    score: &S,
    p: &LqParams,
    cfg: &AlgoConfig,
    n_traj: usize,
) -> Result<Vec<f64>, LearnError>
where
    S: Score + Sync + ?Sized,
{
    simulate_batch(p, score, cfg, n_traj, |tr| {
        let dt = tr.dt;
        (0..tr.n_transitions())
            .map(|k| {
                let psi = score.score(tr.states[k], tr.actions[k]);
                (-cfg.beta * tr.times[k]).exp()
                    * (tr.reward_rates[k] - 0.5 * cfg.lambda * psi * psi)
                    * dt
            })
            .sum()
    })
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and
/// `N(mean, sd²)`.
pub fn ks_statistic_normal(samples: &[f64], mean: f64, sd: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("standard deviation must be positive");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Standard error of the mean of a correlated series from `n_batches`
/// non-overlapping batch means. Trailing samples that do not fill a batch
/// are dropped.
pub fn batch_means_std_error(samples: &[f64], n_batches: usize) -> f64 {
    let size = samples.len() / n_batches;
    if n_batches < 2 || size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = samples
        .chunks_exact(size)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let (_, var) = mean_var(&means);
    (var / n_batches as f64).sqrt()
}

/// Sample mean and unbiased variance.
pub fn mean_var(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cfg() -> AlgoConfig {
        AlgoConfig {
            dt: 0.1,
            n_steps: 50,
            seed: 1,
            ..AlgoConfig::benchmark()
        }
    }

    #[test]
    fn jackknife_matches_textbook_formula() {
        let s = [1.0, 4.0, -2.0, 0.5, 3.25];
        let (_, var) = mean_var(&s);
        assert!((jackknife_std_error(&s) - (var / 5.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn batch_means_on_independent_data() {
        let s: Vec<f64> = (0..8).map(f64::from).collect();
        // batch means 0.5, 2.5, 4.5, 6.5
        let want = (mean_var(&[0.5, 2.5, 4.5, 6.5]).1 / 4.0).sqrt();
        assert!((batch_means_std_error(&s, 4) - want).abs() < 1e-15);
        assert!(batch_means_std_error(&s, 1).is_nan());
    }

    #[test]
    fn zero_everything_gives_zero() {
        // zero reward, zero score, zero candidate
        let p = LqParams {
            m: 0.0,
            n: 1e-300,
            r: 0.0,
            p: 0.0,
            p_prime: 0.0,
            ..LqParams::benchmark()
        };
        let q = |_: f64, _: f64| 0.0;
        let score = |_: f64, _: f64| 0.0;
        let mut cfg = zero_cfg();
        cfg.lambda = p.lambda;
        let rep = orthogonality_residual(&q, &score, &Constant, &p, &cfg, 8).unwrap();
        assert!(rep.estimate.abs() < 1e-280);
        assert!(martingale_loss(&q, &score, &p, &cfg, 4).unwrap() < 1e-280);
    }

    #[test]
    fn test_processes() {
        let times = [0.0, 0.1, 0.2];
        let states = [2.0, 3.0, 4.0];
        let actions = [1.0, -1.0, 0.5];
        let h = History {
            times: &times,
            states: &states,
            actions: &actions,
            k: 1,
        };
        assert_eq!(Constant.eval(&h), 1.0);
        assert_eq!(ParamGradient { index: 4 }.eval(&h), -3.0);
        assert_eq!(ParamGradient { index: 0 }.eval(&h), 4.5);
        assert_eq!(LaggedState { lag: 1, power: 2 }.eval(&h), 4.0);
        assert_eq!(LaggedState { lag: 2, power: 1 }.eval(&h), 0.0);
    }

    #[test]
    fn loss_is_order_invariant_and_batches_reproducible() {
        let p = LqParams::benchmark();
        let cfg = zero_cfg();
        let q = |x: f64, a: f64| -0.5 * x * x - 0.2 * a * a;
        let score = |_: f64, a: f64| -4.0 * a;
        let r1 = orthogonality_residual(&q, &score, &Constant, &p, &cfg, 16).unwrap();
        let r2 = orthogonality_residual(&q, &score, &Constant, &p, &cfg, 16).unwrap();
        assert_eq!(r1, r2);
        let losses = simulate_batch(&p, &score, &cfg, 16, |tr| {
            path_martingale_loss(tr, &q, &score, 1.0, 0.1)
        })
        .unwrap();
        let mut rev = losses.clone();
        rev.reverse();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&losses) - mean(&rev)).abs() < 1e-12);
        assert!((martingale_loss(&q, &score, &p, &cfg, 16).unwrap() - mean(&losses)).abs() < 1e-12);
        assert!(losses.iter().all(|l| *l >= 0.0));
    }

    #[test]
    fn ks_statistic_examples() {
        assert!((ks_statistic_normal(&[0.0], 0.0, 1.0) - 0.5).abs() < 1e-15);
        let grid: Vec<f64> = (1..1000)
            .map(|i| {
                let u = i as f64 / 1000.0;
                Normal::new(0.0, 1.0).unwrap().inverse_cdf(u)
            })
            .collect();
        assert!(ks_statistic_normal(&grid, 0.0, 1.0) < 2e-3);
        assert!(ks_statistic_normal(&grid, 1.0, 1.0) > 0.3);
    }
}
