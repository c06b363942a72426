//! Scalar linear-quadratic environment.
//!
//! State dynamics `dX = (A X + B a) dt + (C X + D a) dB` and reward rate
//! `r(x, a) = -(M/2 x² + R x a + N/2 a² + P x + P' a)`, with the action
//! process driven by a score function and unit-temperature noise `σ_a = √2`.

use thiserror::Error;

use crate::noise::NoiseSource;
use crate::sde::ScalarSde;

/// Action noise amplitude. With this choice the stationary action law at a
/// fixed state is the Boltzmann density `∝ exp(Q(x, ·) / λ)`.
pub const ACTION_DIFFUSION: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub m: f64,
    pub n: f64,
    pub r: f64,
    pub p: f64,
    pub p_prime: f64,
    /// Discount rate (1/time).
    pub beta: f64,
    /// Weight of the quadratic score penalty `λ/2 |Ψ|²`.
    pub lambda: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum LqError {
    #[error("parameter {name} = {value} is invalid: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error(
        "discount rate beta = {beta} must exceed 2A + C^2 = {bound} \
         (discount admissibility condition); otherwise discounted rewards diverge"
    )]
    DiscountTooSmall { beta: f64, bound: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("environment produced a non-finite value from x = {x}, a = {a}")]
    NonFinite { x: f64, a: f64 },
}

impl LqParams {
    /// Stochastic benchmark instance: `A = -1, B = C = 0, D = 1,
    /// M = N = P' = 2, R = P = 1, β = 1, λ = 0.1`.
    pub fn benchmark() -> Self {
        Self {
            a: -1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            m: 2.0,
            n: 2.0,
            r: 1.0,
            p: 1.0,
            p_prime: 2.0,
            beta: 1.0,
            lambda: 0.1,
        }
    }

    /// The benchmark with `C = D = 0`: the state evolves deterministically
    /// given the action path.
    pub fn benchmark_deterministic() -> Self {
        Self {
            c: 0.0,
            d: 0.0,
            ..Self::benchmark()
        }
    }

    /// `β - 2A - C²`, positive exactly when the discount condition holds.
    pub fn discount_margin(&self) -> f64 {
        self.beta - 2.0 * self.a - self.c * self.c
    }

    pub fn validate(&self) -> Result<(), LqError> {
        let fields = [
            ("A", self.a),
            ("B", self.b),
            ("C", self.c),
            ("D", self.d),
            ("M", self.m),
            ("N", self.n),
            ("R", self.r),
            ("P", self.p),
            ("Pp", self.p_prime),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(LqError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite",
                });
            }
        }
        if self.m < 0.0 {
            return Err(LqError::InvalidParameter {
                name: "M",
                value: self.m,
                reason: "must be >= 0",
            });
        }
        if self.n <= 0.0 {
            return Err(LqError::InvalidParameter {
                name: "N",
                value: self.n,
                reason: "must be > 0",
            });
        }
        if self.beta <= 0.0 {
            return Err(LqError::InvalidParameter {
                name: "beta",
                value: self.beta,
                reason: "must be > 0",
            });
        }
        if self.lambda <= 0.0 {
            return Err(LqError::InvalidParameter {
                name: "lambda",
                value: self.lambda,
                reason: "must be > 0",
            });
        }
        if self.discount_margin() <= 0.0 {
            return Err(LqError::DiscountTooSmall {
                beta: self.beta,
                bound: 2.0 * self.a + self.c * self.c,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn reward(&self, x: f64, a: f64) -> f64 {
        lq_reward(self, x, a)
    }

    #[inline]
    pub fn drift(&self, x: f64, a: f64) -> f64 {
        self.a * x + self.b * a
    }

    #[inline]
    pub fn diffusion(&self, x: f64, a: f64) -> f64 {
        self.c * x + self.d * a
    }

    /// Joint state–action SDE with the given action score.
    #[allow(clippy::type_complexity)]
    pub fn dynamics<S>(
        &self,
        score: S,
    ) -> ScalarSde<
        impl Fn(f64, f64) -> f64 + '_,
        impl Fn(f64, f64) -> f64 + '_,
        S,
        impl Fn(f64, f64) -> f64,
    >
    where
        S: Fn(f64, f64) -> f64,
    {
        ScalarSde {
            drift: move |x, a| self.drift(x, a),
            diffusion: move |x, a| self.diffusion(x, a),
            score,
            action_diffusion: |_, _| ACTION_DIFFUSION,
        }
    }
}

/// Quadratic reward rate `-(M/2 x² + R x a + N/2 a² + P x + P' a)`.
#[inline]
pub fn lq_reward(p: &LqParams, x: f64, a: f64) -> f64 {
    -(0.5 * p.m * x * x + p.r * x * a + 0.5 * p.n * a * a + p.p * x + p.p_prime * a)
}

/// One environment step with an explicit standard normal draw `z`.
///
/// Returns the next state and the reward *rate* at the pre-step pair; the
/// caller multiplies by `dt` when accumulating reward.
pub fn env_step_with(
    p: &LqParams,
    x: f64,
    a: f64,
    dt: f64,
    z: f64,
) -> Result<(f64, f64), EnvError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EnvError::InvalidTimeStep(dt));
    }
    let x_next = x + p.drift(x, a) * dt + p.diffusion(x, a) * dt.sqrt() * z;
    let r = lq_reward(p, x, a);
    if x_next.is_finite() && r.is_finite() {
        Ok((x_next, r))
    } else {
        Err(EnvError::NonFinite { x, a })
    }
}

/// One environment step drawing its noise from `noise`.
pub fn env_step(
    p: &LqParams,
    x: f64,
    a: f64,
    dt: f64,
    noise: &mut NoiseSource,
) -> Result<(f64, f64), EnvError> {
    let z = noise.standard_normal();
    env_step_with(p, x, a, dt, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reward_examples() {
        let p = LqParams::benchmark();
        assert_eq!(lq_reward(&p, 0.0, 0.0), 0.0);
        assert_eq!(lq_reward(&p, 1.0, 1.0), -6.0);
        assert_eq!(lq_reward(&p, 2.0, 0.0), -6.0);
    }

    #[test]
    fn step_examples() {
        let p = LqParams::benchmark();
        let (x, r) = env_step_with(&p, 1.0, 0.0, 0.1, 0.0).unwrap();
        assert!((x - 0.9).abs() < 1e-15);
        assert_eq!(r, -2.0);
        // σ_X = D a vanishes at a = 0, so the draw does not matter
        assert_eq!(env_step_with(&p, 1.0, 0.0, 0.1, 3.7).unwrap(), (x, r));

        for dt in [0.01, 0.1, 1.0] {
            assert_eq!(env_step_with(&p, 0.0, 0.0, dt, 1.234).unwrap(), (0.0, 0.0));
        }
    }

    #[test]
    fn deterministic_variant_ignores_noise() {
        let p = LqParams::benchmark_deterministic();
        let base = env_step_with(&p, 0.7, -1.3, 0.1, 0.0).unwrap();
        for z in [-3.0, -0.5, 0.1, 2.2] {
            assert_eq!(env_step_with(&p, 0.7, -1.3, 0.1, z).unwrap(), base);
        }
    }

    #[test]
    fn validation() {
        assert!(LqParams::benchmark().validate().is_ok());
        assert!(LqParams::benchmark_deterministic().validate().is_ok());
        let p = LqParams {
            beta: 0.5,
            a: 0.5,
            ..LqParams::benchmark()
        };
        assert!(matches!(
            p.validate(),
            Err(LqError::DiscountTooSmall { .. })
        ));
        let p = LqParams {
            n: 0.0,
            ..LqParams::benchmark()
        };
        assert!(matches!(
            p.validate(),
            Err(LqError::InvalidParameter { name: "N", .. })
        ));
        let p = LqParams {
            lambda: -0.1,
            ..LqParams::benchmark()
        };
        assert!(p.validate().is_err());
        let p = LqParams {
            m: f64::NAN,
            ..LqParams::benchmark()
        };
        assert!(p.validate().is_err());
        assert!(env_step_with(&LqParams::benchmark(), 0.0, 0.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn step_reward_equals_reward(x in -10.0..10.0f64, a in -10.0..10.0f64, z in -4.0..4.0f64) {
            let p = LqParams::benchmark();
            let (_, r) = env_step_with(&p, x, a, 0.1, z).unwrap();
            prop_assert_eq!(r, lq_reward(&p, x, a));
        }
    }
}
