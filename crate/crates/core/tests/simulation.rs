//! Euler–Maruyama simulation of the joint state–action process.

use cqsm::analytic::{optimal_score, solve_lq};
use cqsm::lq::{env_step_with, lq_reward};
use cqsm::sde::{em_step, simulate, ScalarSde};
use cqsm::{LqParams, NoiseSource};

#[test]
fn noiseless_simulation_matches_forward_euler() {
    let sde = ScalarSde {
        drift: |x: f64, a: f64| -x + 0.5 * a.sin(),
        diffusion: |_: f64, _: f64| 0.0,
        score: |x: f64, a: f64| x * x - a,
        action_diffusion: |_: f64, _: f64| 0.0,
    };
    let (dt, n) = (0.01, 500);
    let tr = simulate(&sde, |_, _| 0.0, &[1.0], &[0.3], dt, n, 5).unwrap();
    let (mut x, mut a) = (1.0f64, 0.3f64);
    for k in 0..n {
        let (dx, da) = (-x + 0.5 * a.sin(), x * x - a);
        x += dx * dt;
        a += da * dt;
        assert_eq!(tr.states[k + 1], x);
        assert_eq!(tr.actions[k + 1], a);
    }
}

#[test]
fn trajectories_depend_only_on_inputs() {
    let p = LqParams::benchmark();
    let k = solve_lq(&p).unwrap();
    let sde = p.dynamics(move |x, a| optimal_score(&k, 0.1, x, a));
    let reward = |x: &[f64], a: &[f64]| lq_reward(&p, x[0], a[0]);
    let a = simulate(&sde, reward, &[0.5], &[0.0], 0.05, 1000, 17).unwrap();
    let b = simulate(&sde, reward, &[0.5], &[0.0], 0.05, 1000, 17).unwrap();
    let c = simulate(&sde, reward, &[0.5], &[0.0], 0.05, 1000, 18).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.states, c.states);
    assert!(a
        .reward_rates
        .iter()
        .enumerate()
        .all(|(i, r)| *r == lq_reward(&p, a.states[i], a.actions[i])));
}

#[test]
fn controlled_state_has_bounded_second_moment() {
    let p = LqParams::benchmark();
    let k = solve_lq(&p).unwrap();
    let sde = p.dynamics(move |x, a| optimal_score(&k, p.lambda, x, a));
    let tr = simulate(&sde, |_, _| 0.0, &[0.0], &[0.0], 0.01, 1_000_000, 3).unwrap();
    let tail = &tr.states[100_000..];
    let m2 = tail.iter().map(|x| x * x).sum::<f64>() / tail.len() as f64;
    let late = &tr.states[900_000..];
    let m2_late = late.iter().map(|x| x * x).sum::<f64>() / late.len() as f64;
    // dX = -X dt + a dB with stationary action variance near λ/|k₂|
    assert!(m2.is_finite() && m2 < 1.0, "E[X²] ≈ {m2}");
    assert!((m2_late - m2).abs() < 0.5 * m2, "{m2_late} vs {m2}");
}

/// RMS endpoint gap between step `dt` and step `dt/2` driven by the same
/// Brownian path.
fn strong_gap(p: &LqParams, dt: f64, horizon: f64, n_paths: u64) -> f64 {
    let n = (horizon / dt).round() as usize;
    let a = 0.5;
    let mut total = 0.0;
    for path in 0..n_paths {
        let mut noise = NoiseSource::with_stream(99, path);
        let (mut fine, mut coarse) = (1.0, 1.0);
        for _ in 0..n {
            let (z1, z2) = (noise.standard_normal(), noise.standard_normal());
            fine = env_step_with(p, fine, a, dt / 2.0, z1).unwrap().0;
            fine = env_step_with(p, fine, a, dt / 2.0, z2).unwrap().0;
            coarse = env_step_with(p, coarse, a, dt, (z1 + z2) / std::f64::consts::SQRT_2)
                .unwrap()
                .0;
        }
        total += (fine - coarse).powi(2);
    }
    (total / n_paths as f64).sqrt()
}

#[test]
fn endpoint_gap_shrinks_with_step() {
    // state-dependent noise so the scheme is not exact
    let p = LqParams {
        c: 0.5,
        beta: 2.0,
        ..LqParams::benchmark()
    };
    let gaps: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| strong_gap(&p, dt, 2.0, 4000))
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] < w[0], "{gaps:?}");
    }
    let rate = (gaps[0] / gaps[3]).log2() / 3.0;
    assert!(rate > 0.4, "observed order {rate}, gaps {gaps:?}");
}

#[test]
fn gaussian_source_moments() {
    let mut noise = NoiseSource::new(2024);
    let n = 1_000_000;
    let mut z = vec![0.0; n];
    noise.fill_normal(&mut z);
    let mean = z.iter().sum::<f64>() / n as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    assert!((var - 1.0).abs() < 0.01);
}

#[test]
fn single_step_uses_supplied_draws() {
    let p = LqParams::benchmark();
    let sde = p.dynamics(|_, a| -a);
    let (x, a) = em_step(&sde, &[1.0], &[0.5], 0.1, &[0.2], &[-0.4]).unwrap();
    let dx = (-1.0 + 0.0) * 0.1 + 0.5 * 0.1f64.sqrt() * 0.2;
    assert!((x[0] - (1.0 + dx)).abs() < 1e-15);
    assert!((a[0] - (0.5 - 0.05 + 2f64.sqrt() * 0.1f64.sqrt() * -0.4)).abs() < 1e-15);
}
