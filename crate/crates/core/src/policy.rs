//! Linear-in-features critic and exponential-slope score.
//!
//! The critic is
//! `Q^θ(x, a) = ½θ₀x² + θ₁x + ½θ₂a² + θ₃a + θ₄xa + θ₅`
//! which matches the analytic LQ Q-function coefficient for coefficient
//! (`θᵢ = kᵢ`). The score is `Ψ^v(x, a) = -e^{v₀} a + v₁ x + v₂`; the
//! exponential keeps the action drift mean-reverting for every `v`.

/// Anything that can be evaluated as an action value with an action gradient.
pub trait ActionValue {
    fn value(&self, x: f64, a: f64) -> f64;
    fn grad_action(&self, x: f64, a: f64) -> f64;
}

/// An action score `Ψ(x, a)`.
pub trait Score {
    fn score(&self, x: f64, a: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64> Score for F {
    fn score(&self, x: f64, a: f64) -> f64 {
        self(x, a)
    }
}

/// Critic parameters `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParams(pub [f64; 6]);

/// Score parameters `v = (v_log, v_x, v_c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParams(pub [f64; 3]);

impl QParams {
    pub const LEN: usize = 6;

    pub fn zeros() -> Self {
        Self([0.0; 6])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|t| t.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, t| m.max(t.abs()))
    }

    #[inline]
    pub fn value(&self, x: f64, a: f64) -> f64 {
        q_theta(self, x, a)
    }

    #[inline]
    pub fn grad_params(&self, x: f64, a: f64) -> [f64; 6] {
        grad_theta_q(self, x, a)
    }

    #[inline]
    pub fn grad_action(&self, x: f64, a: f64) -> f64 {
        grad_a_q(self, x, a)
    }
}

impl ActionValue for QParams {
    fn value(&self, x: f64, a: f64) -> f64 {
        q_theta(self, x, a)
    }
    fn grad_action(&self, x: f64, a: f64) -> f64 {
        grad_a_q(self, x, a)
    }
}

impl ScoreParams {
    pub const LEN: usize = 3;

    pub fn zeros() -> Self {
        Self([0.0; 3])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|t| t.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, t| m.max(t.abs()))
    }

    /// The (strictly negative) coefficient of `a` in the score.
    pub fn action_slope(&self) -> f64 {
        -self.0[0].exp()
    }

    #[inline]
    pub fn score(&self, x: f64, a: f64) -> f64 {
        psi_v(self, x, a)
    }

    #[inline]
    pub fn grad_params(&self, x: f64, a: f64) -> [f64; 3] {
        grad_v_psi(self, x, a)
    }
}

impl Score for ScoreParams {
    fn score(&self, x: f64, a: f64) -> f64 {
        psi_v(self, x, a)
    }
}

#[inline]
pub fn q_theta(theta: &QParams, x: f64, a: f64) -> f64 {
    let t = &theta.0;
    0.5 * t[0] * x * x + t[1] * x + 0.5 * t[2] * a * a + t[3] * a + t[4] * x * a + t[5]
}

/// `∂Q^θ/∂θ = (½x², x, ½a², a, xa, 1)`; the critic is linear in `θ`.
#[inline]
pub fn grad_theta_q(_theta: &QParams, x: f64, a: f64) -> [f64; 6] {
    [0.5 * x * x, x, 0.5 * a * a, a, x * a, 1.0]
}

#[inline]
pub fn grad_a_q(theta: &QParams, x: f64, a: f64) -> f64 {
    let t = &theta.0;
    t[2] * a + t[3] + t[4] * x
}

#[inline]
pub fn psi_v(v: &ScoreParams, x: f64, a: f64) -> f64 {
    -v.0[0].exp() * a + v.0[1] * x + v.0[2]
}

#[inline]
pub fn grad_v_psi(v: &ScoreParams, x: f64, a: f64) -> [f64; 3] {
    [-v.0[0].exp() * a, x, 1.0]
}
