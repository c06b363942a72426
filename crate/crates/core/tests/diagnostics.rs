//! Martingale orthogonality diagnostics under exact and perturbed Q.

use cqsm::analytic::{solve_lq, OptimalScore};
use cqsm::diag::{martingale_loss, orthogonality_residual, Constant, LaggedState, ParamGradient};
use cqsm::online::AlgoConfig;
use cqsm::LqParams;

fn setup(dt: f64, horizon: f64, seed: u64) -> (LqParams, OptimalScore, AlgoConfig) {
    let p = LqParams::benchmark();
    let k = solve_lq(&p).unwrap();
    let cfg = AlgoConfig {
        dt,
        n_steps: (horizon / dt).round() as usize,
        seed,
        ..AlgoConfig::benchmark()
    };
    (
        p,
        OptimalScore {
            k,
            lambda: p.lambda,
        },
        cfg,
    )
}

#[test]
fn z_scores_are_calibrated_under_true_q() {
    let mut inside = 0;
    let mut worst: f64 = 0.0;
    for rep in 0..50 {
        let (p, score, cfg) = setup(0.01, 20.0, 1000 + rep);
        let k = score.k;
        let r = orthogonality_residual(&|x, a| k.value(x, a), &score, &Constant, &p, &cfg, 100)
            .unwrap();
        worst = worst.max(r.z_score.abs());
        inside += usize::from(r.z_score.abs() < 2.0);
    }
    assert!(worst < 3.0, "max |z| = {worst}");
    let frac = inside as f64 / 50.0;
    assert!(
        (0.90..=0.99).contains(&frac),
        "fraction with |z| < 2 = {frac}"
    );
}

#[test]
fn bias_shrinks_with_step() {
    let mut est = Vec::new();
    for dt in [0.2, 0.1, 0.05] {
        let (p, score, cfg) = setup(dt, 20.0, 77);
        let k = score.k;
        let r = orthogonality_residual(
            &|x, a| k.value(x, a),
            &score,
            &ParamGradient { index: 2 },
            &p,
            &cfg,
            4000,
        )
        .unwrap();
        est.push((r.estimate, r.std_error));
    }
    for w in est.windows(2) {
        assert!(w[1].0.abs() <= w[0].0.abs() + 2.0 * w[1].1, "{est:?}");
    }
    assert!(est[2].0.abs() < est[0].0.abs(), "{est:?}");
}

#[test]
fn shifted_q_is_rejected() {
    let (p, score, cfg) = setup(0.01, 20.0, 5);
    let k = score.k;
    let r = orthogonality_residual(
        &|x, a| k.value(x, a) + 0.5,
        &score,
        &Constant,
        &p,
        &cfg,
        200,
    )
    .unwrap();
    assert!(r.z_score.abs() > 3.0, "z = {}", r.z_score);
    let lag = orthogonality_residual(
        &|x, a| k.value(x, a),
        &score,
        &LaggedState { lag: 5, power: 1 },
        &p,
        &cfg,
        200,
    )
    .unwrap();
    assert!(lag.z_score.abs() < 3.0, "z = {}", lag.z_score);
}

#[test]
fn loss_is_smaller_at_true_q() {
    let (p, score, cfg) = setup(0.05, 20.0, 9);
    let k = score.k;
    let exact = martingale_loss(&|x, a| k.value(x, a), &score, &p, &cfg, 200).unwrap();
    let shifted = martingale_loss(&|x, a| k.value(x, a) + 0.5, &score, &p, &cfg, 200).unwrap();
    let scaled = martingale_loss(&|x, a| 1.2 * k.value(x, a), &score, &p, &cfg, 200).unwrap();
    assert!(
        exact < shifted && exact < scaled,
        "{exact} {shifted} {scaled}"
    );
}
