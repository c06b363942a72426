//! Drawing an action at a fixed state from a score function.
//!
//! Two samplers are provided:
//!
//! * Langevin: Euler–Maruyama on `da = Ψ(x, a) dt + √2 dB` with `x` frozen.
//!   For `Ψ = λ⁻¹∂_a Q` the stationary law is `∝ exp(Q(x, ·)/λ)`.
//! * DDPM: the reverse denoising chain
//!   `a^{t−1} = (a^t + (1−α_t)/√(1−ᾱ_t) Ψ(x, a^t)) / √α_t + σ_t Z`
//!   with `σ_t² = β_t`, started from `a^T ∼ N(0, 1)`.

use thiserror::Error;

use crate::noise::NoiseSource;
use crate::policy::Score;

/// Smallest admissible `1 − ᾱ_t`.
const MIN_ONE_MINUS_ALPHA_BAR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid sampler setting: {0}")]
    InvalidSetting(String),
    #[error("sampler produced a non-finite action at iteration {iteration}")]
    NonFinite { iteration: usize },
}

/// Variance schedule of the DDPM chain.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the schedule from per-step variances `β_t ∈ [0, 1)`.
    pub fn new(betas: Vec<f64>) -> Result<Self, SamplerError> {
        if betas.is_empty() {
            return Err(SamplerError::InvalidSchedule(
                "schedule must have at least one step".into(),
            ));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(SamplerError::InvalidSchedule(format!(
                "beta {b} outside [0, 1)"
            )));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Linearly spaced `β_t` from `beta_start` to `beta_end`.
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, SamplerError> {
        make_linear_schedule(t_steps, beta_start, beta_end)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `σ_t = √β_t`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.betas[t].sqrt()
    }
}

impl Default for NoiseSchedule {
    /// 20 steps, `β` linear from `1e-3` to `0.19`.
    fn default() -> Self {
        make_linear_schedule(20, 1e-3, 0.19).expect("default schedule is valid")
    }
}

pub fn make_linear_schedule(
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, SamplerError> {
    if t_steps == 0 {
        return Err(SamplerError::InvalidSchedule(
            "t_steps must be positive".into(),
        ));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(SamplerError::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas = if t_steps == 1 {
        vec![beta_start]
    } else {
        let step = (beta_end - beta_start) / (t_steps - 1) as f64;
        (0..t_steps).map(|i| beta_start + step * i as f64).collect()
    };
    NoiseSchedule::new(betas)
}

/// Settings of the Langevin sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinConfig {
    pub dt: f64,
    /// Steps per independent draw (burn-in from the starting point).
    pub n_steps: usize,
    /// Steps between retained samples when running one long chain.
    pub thin: usize,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            n_steps: 2000,
            thin: 10,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SamplerError::InvalidSetting(format!(
                "langevin dt must be positive, got {}",
                self.dt
            )));
        }
        if self.n_steps == 0 || self.thin == 0 {
            return Err(SamplerError::InvalidSetting(
                "langevin step counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[inline]
fn langevin_step<S: Score + ?Sized>(score: &S, x: f64, a: f64, dt: f64, z: f64) -> f64 {
    a + score.score(x, a) * dt + (2.0 * dt).sqrt() * z
}

/// Runs `n_steps` of the Langevin chain at fixed `x` from `a0` and returns
/// the final iterate.
pub fn langevin_sample<S: Score + ?Sized>(
    score: &S,
    x: f64,
    a0: f64,
    dt: f64,
    n_steps: usize,
    noise: &mut NoiseSource,
) -> Result<f64, SamplerError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SamplerError::InvalidSetting(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if n_steps == 0 {
        return Err(SamplerError::InvalidSetting(
            "n_steps must be positive".into(),
        ));
    }
    let mut a = a0;
    for i in 0..n_steps {
        a = langevin_step(score, x, a, dt, noise.standard_normal());
        if !a.is_finite() {
            return Err(SamplerError::NonFinite { iteration: i });
        }
    }
    Ok(a)
}

/// One long Langevin chain: `cfg.n_steps` burn-in steps from `a0`, then
/// `n_samples` draws spaced `cfg.thin` steps apart.
pub fn langevin_chain<S: Score + ?Sized>(
    score: &S,
    x: f64,
    a0: f64,
    cfg: &LangevinConfig,
    n_samples: usize,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>, SamplerError> {
    cfg.validate()?;
    let mut a = langevin_sample(score, x, a0, cfg.dt, cfg.n_steps, noise)?;
    let mut out = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        a = langevin_sample(score, x, a, cfg.dt, cfg.thin, noise).map_err(|_| {
            SamplerError::NonFinite {
                iteration: cfg.n_steps + s * cfg.thin,
            }
        })?;
        out.push(a);
    }
    Ok(out)
}

/// One reverse step from `a_t` at schedule index `t` (0-based, so index
/// `t` holds `β_{t+1}`) with standard normal draw `z`.
pub fn ddpm_reverse_step<S: Score + ?Sized>(
    score: &S,
    x: f64,
    a_t: f64,
    schedule: &NoiseSchedule,
    t: usize,
    z: f64,
) -> Result<f64, SamplerError> {
    let alpha = schedule.alphas[t];
    let one_minus_bar = 1.0 - schedule.alpha_bars[t];
    let drift = if schedule.betas[t] == 0.0 {
        0.0
    } else {
        if one_minus_bar < MIN_ONE_MINUS_ALPHA_BAR {
            return Err(SamplerError::InvalidSchedule(format!(
                "1 - alpha_bar = {one_minus_bar} at step {t} is below {MIN_ONE_MINUS_ALPHA_BAR}"
            )));
        }
        (1.0 - alpha) / one_minus_bar.sqrt() * score.score(x, a_t)
    };
    Ok((a_t + drift) / alpha.sqrt() + schedule.sigma(t) * z)
}

/// Draws `a⁰` by running the full reverse chain from `a^T ∼ N(0, 1)`.
///
/// Noise is drawn in the order `a^T`, then one `Z` per reverse step from
/// `t = T` down to `t = 1`.
pub fn ddpm_sample<S: Score + ?Sized>(
    score: &S,
    x: f64,
    schedule: &NoiseSchedule,
    noise: &mut NoiseSource,
) -> Result<f64, SamplerError> {
    let mut a = noise.standard_normal();
    for t in (0..schedule.len()).rev() {
        a = ddpm_reverse_step(score, x, a, schedule, t, noise.standard_normal())?;
        if !a.is_finite() {
            return Err(SamplerError::NonFinite {
                iteration: schedule.len() - 1 - t,
            });
        }
    }
    Ok(a)
}

/// Exact law of the DDPM output for the affine score `Ψ(a) = −κ a + c`
/// from `a^T ∼ N(0, 1)`. Each reverse step maps `a ↦ g a + h + σ Z`, so
/// mean and variance follow a scalar recursion.
pub fn ddpm_affine_law(kappa: f64, c: f64, schedule: &NoiseSchedule) -> (f64, f64) {
    let (mut mean, mut var) = (0.0, 1.0);
    for t in (0..schedule.len()).rev() {
        let alpha = schedule.alphas[t];
        let w = if schedule.betas[t] == 0.0 {
            0.0
        } else {
            (1.0 - alpha) / (1.0 - schedule.alpha_bars[t]).sqrt()
        };
        let g = (1.0 - w * kappa) / alpha.sqrt();
        let h = w * c / alpha.sqrt();
        mean = g * mean + h;
        var = g * g * var + schedule.betas[t];
    }
    (mean, var)
}

/// How actions are produced while interacting with the environment.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplerKind {
    /// Fresh Langevin draw at every new state, started from `N(0, 1)`.
    Langevin(LangevinConfig),
    /// Fresh DDPM draw at every new state.
    Ddpm(NoiseSchedule),
    /// The action is one more coordinate of the joint SDE and is carried
    /// forward by an Euler–Maruyama step of `da = Ψ dt + √2 dB`.
    DirectSde,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Langevin(_) => "langevin",
            SamplerKind::Ddpm(_) => "ddpm",
            SamplerKind::DirectSde => "direct_sde",
        }
    }

    /// An action at `x` drawn from scratch. `fallback` is returned for
    /// `DirectSde`, which has no way to sample without a previous action.
    pub fn initial_action<S: Score + ?Sized>(
        &self,
        score: &S,
        x: f64,
        fallback: f64,
        noise: &mut NoiseSource,
    ) -> Result<f64, SamplerError> {
        match self {
            SamplerKind::Langevin(cfg) => {
                cfg.validate()?;
                let start = noise.standard_normal();
                langevin_sample(score, x, start, cfg.dt, cfg.n_steps, noise)
            }
            SamplerKind::Ddpm(schedule) => ddpm_sample(score, x, schedule, noise),
            SamplerKind::DirectSde => Ok(fallback),
        }
    }

    /// The action paired with `x_next` after the environment moved from
    /// `(x, a)` over a step of length `dt`.
    pub fn next_action<S: Score + ?Sized>(
        &self,
        score: &S,
        x: f64,
        a: f64,
        x_next: f64,
        dt: f64,
        noise: &mut NoiseSource,
    ) -> Result<f64, SamplerError> {
        match self {
            SamplerKind::DirectSde => {
                let a_next = langevin_step(score, x, a, dt, noise.standard_normal());
                if a_next.is_finite() {
                    Ok(a_next)
                } else {
                    Err(SamplerError::NonFinite { iteration: 0 })
                }
            }
            _ => self.initial_action(score, x_next, a, noise),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_examples() {
        let s = make_linear_schedule(1, 0.05, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.05]);
        let s = make_linear_schedule(2, 0.1, 0.1).unwrap();
        assert!((s.alpha_bars()[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars()[1] - 0.81).abs() < 1e-15);
        let s = NoiseSchedule::default();
        assert_eq!(s.len(), 20);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        for (a, b) in s.alphas().iter().zip(s.betas()) {
            assert_eq!(*a, 1.0 - b);
        }
    }

    #[test]
    fn schedule_bounds() {
        assert!(make_linear_schedule(0, 0.1, 0.2).is_err());
        assert!(make_linear_schedule(5, 0.0, 0.2).is_err());
        assert!(make_linear_schedule(5, 0.3, 0.2).is_err());
        assert!(make_linear_schedule(5, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::new(vec![]).is_err());
    }

    #[test]
    fn degenerate_schedule_is_identity() {
        let s = NoiseSchedule::new(vec![0.0]).unwrap();
        let zero = |_: f64, _: f64| 0.0;
        assert_eq!(
            ddpm_reverse_step(&zero, 0.0, 0.734, &s, 0, 1.9).unwrap(),
            0.734
        );
    }

    #[test]
    fn one_step_hand_value() {
        let s = NoiseSchedule::new(vec![0.19]).unwrap();
        let c = 2.5;
        let score = move |_: f64, _: f64| c;
        let got = ddpm_reverse_step(&score, 0.0, 0.0, &s, 0, 0.0).unwrap();
        let want = 0.19f64.sqrt() / 0.9 * c;
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn affine_law_one_step() {
        let s = NoiseSchedule::new(vec![0.19]).unwrap();
        let (m, v) = ddpm_affine_law(0.5, 2.0, &s);
        let w = 0.19 / 0.19f64.sqrt();
        let g = (1.0 - 0.5 * w) / 0.9;
        assert!((m - w * 2.0 / 0.9).abs() < 1e-15);
        assert!((v - (g * g + 0.19)).abs() < 1e-15);
    }

    #[test]
    fn langevin_deterministic_flow_reaches_mode() {
        // zero noise limit: integrate the drift only
        let (k2, k3, k4, lambda, x) = (-0.46, -0.36, -0.15, 0.1, 0.7);
        let score = move |x: f64, a: f64| (k2 * a + k3 + k4 * x) / lambda;
        let mut a = 3.0;
        for _ in 0..5000 {
            a = langevin_step(&score, x, a, 0.01, 0.0);
        }
        assert!((a - (-(k3 + k4 * x) / k2)).abs() < 1e-10);
    }

    #[test]
    fn samplers_are_reproducible() {
        let score = |x: f64, a: f64| -2.0 * a + x;
        let s = NoiseSchedule::default();
        let draw = |seed| {
            let mut n = NoiseSource::new(seed);
            (
                langevin_sample(&score, 0.5, 0.0, 0.01, 300, &mut n).unwrap(),
                ddpm_sample(&score, 0.5, &s, &mut n).unwrap(),
            )
        };
        let (a, b) = (draw(11), draw(11));
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn langevin_rejects_bad_settings() {
        let score = |_: f64, a: f64| -a;
        let mut n = NoiseSource::new(0);
        assert!(langevin_sample(&score, 0.0, 0.0, 0.0, 10, &mut n).is_err());
        assert!(langevin_sample(&score, 0.0, 0.0, 0.1, 0, &mut n).is_err());
        let blow_up = |_: f64, a: f64| a * a * 1e300;
        assert!(matches!(
            langevin_sample(&blow_up, 0.0, 10.0, 1.0, 10, &mut n),
            Err(SamplerError::NonFinite { .. })
        ));
    }
}
