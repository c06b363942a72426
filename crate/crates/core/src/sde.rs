//! Euler–Maruyama simulation of the coupled state–action diffusion
//!
//! ```text
//! dX = b_X(X, a) dt + σ_X(X, a) dB^X
//! da = Ψ(X, a) dt  + σ_a(X, a) dB^a
//! ```
//!
//! Diffusion coefficients are diagonal: `σ_X` and `σ_a` return one amplitude
//! per coordinate. Every coefficient is checked for finiteness before it is
//! used, and a non-finite value aborts the step.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::format::fmt9;
use crate::noise::NoiseSource;

/// Coefficient functions of the joint state–action SDE.
///
/// Implementations write into `out`, whose length equals the state dimension
/// for the `state_*` methods and the action dimension for the `action_*`
/// methods.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn state_drift(&self, x: &[f64], a: &[f64], out: &mut [f64]);
    fn state_diffusion(&self, x: &[f64], a: &[f64], out: &mut [f64]);
    fn action_score(&self, x: &[f64], a: &[f64], out: &mut [f64]);
    fn action_diffusion(&self, x: &[f64], a: &[f64], out: &mut [f64]);
}

/// One-dimensional state and action, each coefficient given as a closure.
#[derive(Clone, Copy)]
pub struct ScalarSde<Bx, Sx, Ps, Sa> {
    pub drift: Bx,
    pub diffusion: Sx,
    pub score: Ps,
    pub action_diffusion: Sa,
}

impl<Bx, Sx, Ps, Sa> Dynamics for ScalarSde<Bx, Sx, Ps, Sa>
where
    Bx: Fn(f64, f64) -> f64,
    Sx: Fn(f64, f64) -> f64,
    Ps: Fn(f64, f64) -> f64,
    Sa: Fn(f64, f64) -> f64,
{
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn state_drift(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        out[0] = (self.drift)(x[0], a[0]);
    }
    fn state_diffusion(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        out[0] = (self.diffusion)(x[0], a[0]);
    }
    fn action_score(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        out[0] = (self.score)(x[0], a[0]);
    }
    fn action_diffusion(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        out[0] = (self.action_diffusion)(x[0], a[0]);
    }
}

/// Which coefficient produced a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    StateDrift,
    StateDiffusion,
    ActionScore,
    ActionDiffusion,
    Reward,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::StateDrift => "state drift",
            Field::StateDiffusion => "state diffusion",
            Field::ActionScore => "action score",
            Field::ActionDiffusion => "action diffusion",
            Field::Reward => "reward",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SdeError {
    #[error("{field} is not finite{}", step_suffix(*.step))]
    NonFinite { field: Field, step: Option<usize> },
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("at least one step is required")]
    NoSteps,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn step_suffix(step: Option<usize>) -> String {
    step.map(|k| format!(" at step {k}")).unwrap_or_default()
}

impl SdeError {
    fn at_step(self, k: usize) -> Self {
        match self {
            SdeError::NonFinite { field, .. } => SdeError::NonFinite {
                field,
                step: Some(k),
            },
            other => other,
        }
    }
}

fn check_finite(values: &[f64], field: Field) -> Result<(), SdeError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SdeError::NonFinite { field, step: None })
    }
}

/// Scratch space for repeated steps without allocation.
struct Workspace {
    drift: Vec<f64>,
    sigma_x: Vec<f64>,
    score: Vec<f64>,
    sigma_a: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, d: usize) -> Self {
        Self {
            drift: vec![0.0; n],
            sigma_x: vec![0.0; n],
            score: vec![0.0; d],
            sigma_a: vec![0.0; d],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn em_step_into<D: Dynamics + ?Sized>(
    dynamics: &D,
    x: &[f64],
    a: &[f64],
    dt: f64,
    zx: &[f64],
    za: &[f64],
    ws: &mut Workspace,
    x_out: &mut [f64],
    a_out: &mut [f64],
) -> Result<(), SdeError> {
    dynamics.state_drift(x, a, &mut ws.drift);
    check_finite(&ws.drift, Field::StateDrift)?;
    dynamics.state_diffusion(x, a, &mut ws.sigma_x);
    check_finite(&ws.sigma_x, Field::StateDiffusion)?;
    dynamics.action_score(x, a, &mut ws.score);
    check_finite(&ws.score, Field::ActionScore)?;
    dynamics.action_diffusion(x, a, &mut ws.sigma_a);
    check_finite(&ws.sigma_a, Field::ActionDiffusion)?;

    let sqrt_dt = dt.sqrt();
    for i in 0..x.len() {
        x_out[i] = x[i] + ws.drift[i] * dt + ws.sigma_x[i] * sqrt_dt * zx[i];
    }
    for j in 0..a.len() {
        a_out[j] = a[j] + ws.score[j] * dt + ws.sigma_a[j] * sqrt_dt * za[j];
    }
    check_finite(x_out, Field::StateDiffusion)?;
    check_finite(a_out, Field::ActionDiffusion)
}

fn check_dims<D: Dynamics + ?Sized>(dynamics: &D, x: &[f64], a: &[f64]) -> Result<(), SdeError> {
    if x.len() != dynamics.state_dim() {
        return Err(SdeError::DimensionMismatch {
            expected: dynamics.state_dim(),
            got: x.len(),
        });
    }
    if a.len() != dynamics.action_dim() {
        return Err(SdeError::DimensionMismatch {
            expected: dynamics.action_dim(),
            got: a.len(),
        });
    }
    Ok(())
}

/// One Euler–Maruyama step of the joint SDE with caller-supplied standard
/// normal draws `zx`, `za`.
pub fn em_step<D: Dynamics + ?Sized>(
    dynamics: &D,
    x: &[f64],
    a: &[f64],
    dt: f64,
    zx: &[f64],
    za: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), SdeError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SdeError::InvalidTimeStep(dt));
    }
    check_dims(dynamics, x, a)?;
    check_dims(dynamics, zx, za)?;
    let mut ws = Workspace::new(x.len(), a.len());
    let mut x_out = vec![0.0; x.len()];
    let mut a_out = vec![0.0; a.len()];
    em_step_into(dynamics, x, a, dt, zx, za, &mut ws, &mut x_out, &mut a_out)?;
    Ok((x_out, a_out))
}

/// Sampled path of the joint process on a uniform time grid.
///
/// States and actions are stored row-major: sample `k` of the state is
/// `states[k * state_dim..(k + 1) * state_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    /// `reward(states[k], actions[k])`, one per transition.
    pub reward_rates: Vec<f64>,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Trajectory {
    /// Number of samples (transitions + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_transitions(&self) -> usize {
        self.reward_rates.len()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn action(&self, k: usize) -> &[f64] {
        &self.actions[k * self.action_dim..(k + 1) * self.action_dim]
    }

    /// Writes `t,x,a,r` rows (vector components get numbered columns). The
    /// reward column is empty on the final sample.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(component_names("x", self.state_dim));
        header.extend(component_names("a", self.action_dim));
        header.push("r".to_string());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![fmt9(self.times[k])];
            row.extend(self.state(k).iter().map(|&v| fmt9(v)));
            row.extend(self.action(k).iter().map(|&v| fmt9(v)));
            row.push(
                self.reward_rates
                    .get(k)
                    .map(|&r| fmt9(r))
                    .unwrap_or_default(),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn component_names(prefix: &str, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![prefix.to_string()]
    } else {
        (0..dim).map(|i| format!("{prefix}{i}")).collect()
    }
}

/// Simulates `n_steps` Euler–Maruyama steps from `(x0, a0)`.
///
/// Each step draws the state noise first, then the action noise, from
/// `NoiseSource::new(seed)`.
pub fn simulate<D, R>(
    dynamics: &D,
    reward: R,
    x0: &[f64],
    a0: &[f64],
    dt: f64,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory, SdeError>
where
    D: Dynamics + ?Sized,
    R: Fn(&[f64], &[f64]) -> f64,
{
    let mut noise = NoiseSource::new(seed);
    simulate_with(dynamics, reward, x0, a0, dt, n_steps, &mut noise)
}

/// [`simulate`] drawing from an existing noise source.
pub fn simulate_with<D, R>(
    dynamics: &D,
    reward: R,
    x0: &[f64],
    a0: &[f64],
    dt: f64,
    n_steps: usize,
    noise: &mut NoiseSource,
) -> Result<Trajectory, SdeError>
where
    D: Dynamics + ?Sized,
    R: Fn(&[f64], &[f64]) -> f64,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SdeError::InvalidTimeStep(dt));
    }
    if n_steps == 0 {
        return Err(SdeError::NoSteps);
    }
    check_dims(dynamics, x0, a0)?;
    let (n, d) = (x0.len(), a0.len());

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity((n_steps + 1) * n);
    let mut actions = Vec::with_capacity((n_steps + 1) * d);
    let mut rewards = Vec::with_capacity(n_steps);
    times.push(0.0);
    states.extend_from_slice(x0);
    actions.extend_from_slice(a0);

    let mut ws = Workspace::new(n, d);
    let mut zx = vec![0.0; n];
    let mut za = vec![0.0; d];
    let mut x_next = vec![0.0; n];
    let mut a_next = vec![0.0; d];
    for k in 0..n_steps {
        let x = &states[k * n..(k + 1) * n];
        let a = &actions[k * d..(k + 1) * d];
        let r = reward(x, a);
        if !r.is_finite() {
            return Err(SdeError::NonFinite {
                field: Field::Reward,
                step: Some(k),
            });
        }
        noise.fill_normal(&mut zx);
        noise.fill_normal(&mut za);
        em_step_into(
            dynamics,
            x,
            a,
            dt,
            &zx,
            &za,
            &mut ws,
            &mut x_next,
            &mut a_next,
        )
        .map_err(|e| e.at_step(k))?;
        rewards.push(r);
        times.push((k + 1) as f64 * dt);
        states.extend_from_slice(&x_next);
        actions.extend_from_slice(&a_next);
    }

    Ok(Trajectory {
        times,
        states,
        actions,
        reward_rates: rewards,
        state_dim: n,
        action_dim: d,
        dt,
        seed: noise.seed(),
    })
}
