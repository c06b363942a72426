//! Closed-form Q-function of the scalar LQ problem.
//!
//! The optimal Q-function is the quadratic
//! `Q(x, a) = ½k₀x² + k₁x + ½k₂a² + k₃a + k₄xa + k₅`
//! whose coefficients solve the six equations obtained by matching the
//! monomials `x², x, a², a, xa, 1` in
//!
//! ```text
//! βQ − Q_x b − Q_a²/(2λ) − ½σ_X² Q_xx − ½σ_a² Q_aa − r = 0,   σ_a² = 2.
//! ```
//!
//! Given `k₄`, the `x²` equation yields `k₀`, and the `a²` equation is a
//! quadratic in `k₂` whose negative root is taken. The remaining `xa`
//! equation is then a scalar function of `k₄` alone; its roots are found by a
//! grid scan plus bracketed refinement, and `k₁, k₃, k₅` follow by
//! back-substitution. Of the resulting solutions only the concave one is the
//! Q-function; the others are discarded.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::lq::{LqError, LqParams};
use crate::policy::{ActionValue, QParams, Score, ScoreParams};
use crate::roots::{bisect_secant, scan_sign_changes, Crossing};

/// Search interval and grid spacing for `k₄`.
const K4_RANGE: (f64, f64) = (-50.0, 50.0);
const K4_GRID: f64 = 0.25;
/// Tolerance on the `xa` residual during refinement.
const ROOT_TOL: f64 = 1e-12;
/// Every candidate must satisfy all six equations to this accuracy.
const ACCEPT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KCoefficients {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
}

impl KCoefficients {
    pub fn from_array(k: [f64; 6]) -> Self {
        Self {
            k0: k[0],
            k1: k[1],
            k2: k[2],
            k3: k[3],
            k4: k[4],
            k5: k[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.k0, self.k1, self.k2, self.k3, self.k4, self.k5]
    }

    /// `k₀k₂ − k₄²`, the determinant of the Hessian of `Q`.
    pub fn hessian_det(&self) -> f64 {
        self.k0 * self.k2 - self.k4 * self.k4
    }

    /// Negative semidefinite Hessian with `k₂ < 0`. Strict concavity
    /// (`k₀ < 0`, `det > 0`) holds whenever `M > 0`; the semidefinite case
    /// covers problems with no state cost at all.
    pub fn is_concave(&self) -> bool {
        self.k2 < 0.0 && self.k0 <= 0.0 && self.hessian_det() >= 0.0
    }

    pub fn is_strictly_concave(&self) -> bool {
        self.k2 < 0.0 && self.k0 < 0.0 && self.hessian_det() > 0.0
    }

    pub fn value(&self, x: f64, a: f64) -> f64 {
        q_star(self, x, a)
    }
}

impl ActionValue for KCoefficients {
    fn value(&self, x: f64, a: f64) -> f64 {
        q_star(self, x, a)
    }
    fn grad_action(&self, x: f64, a: f64) -> f64 {
        self.k2 * a + self.k3 + self.k4 * x
    }
}

/// The optimal score `λ⁻¹ ∂Q/∂a` of a quadratic Q-function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalScore {
    pub k: KCoefficients,
    pub lambda: f64,
}

impl Score for OptimalScore {
    fn score(&self, x: f64, a: f64) -> f64 {
        optimal_score(&self.k, self.lambda, x, a)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    InvalidParams(#[from] LqError),
    #[error("no root of the xa coefficient equation found for k4 in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },
    #[error("no concave solution: all {n_roots} coefficient solutions are convex or indefinite")]
    NoConcaveSolution { n_roots: usize },
    #[error("linear system for the policy Q-function is singular")]
    Singular,
}

#[derive(Debug, Error, PartialEq)]
pub enum MappingError {
    #[error("k2 = {0} must be negative to define the score log-slope")]
    NonNegativeK2(f64),
}

/// Residuals of the six coefficient equations, in the order
/// `x², x, a², a, xa, constant`. All vanish at a solution.
pub fn coefficient_residuals(k: &KCoefficients, p: &LqParams) -> [f64; 6] {
    let KCoefficients {
        k0,
        k1,
        k2,
        k3,
        k4,
        k5,
    } = *k;
    let LqParams {
        a,
        b,
        c,
        d,
        m,
        n,
        r,
        p: pp,
        p_prime,
        beta,
        lambda,
    } = *p;
    [
        0.5 * beta * k0 - a * k0 - k4 * k4 / (2.0 * lambda) - 0.5 * c * c * k0 + 0.5 * m,
        beta * k1 - a * k1 - k3 * k4 / lambda + pp,
        0.5 * beta * k2 - k4 * b - k2 * k2 / (2.0 * lambda) - 0.5 * k0 * d * d + 0.5 * n,
        beta * k3 - b * k1 - k2 * k3 / lambda + p_prime,
        beta * k4 - k0 * b - k4 * a - k2 * k4 / lambda - k0 * c * d + r,
        beta * k5 - k2 - k3 * k3 / (2.0 * lambda),
    ]
}

/// Pointwise residual of the HJB equation for the quadratic with
/// coefficients `k`, evaluated directly from its derivatives.
pub fn hjb_residual(k: &KCoefficients, p: &LqParams, x: f64, a: f64) -> f64 {
    let q = q_star(k, x, a);
    let q_x = k.k0 * x + k.k1 + k.k4 * a;
    let q_a = k.k2 * a + k.k3 + k.k4 * x;
    let sigma_x = p.diffusion(x, a);
    let sigma_a_sq = 2.0;
    p.beta * q
        - q_x * p.drift(x, a)
        - q_a * q_a / (2.0 * p.lambda)
        - 0.5 * sigma_x * sigma_x * k.k0
        - 0.5 * sigma_a_sq * k.k2
        - p.reward(x, a)
}

fn k0_of(p: &LqParams, k4: f64) -> f64 {
    (k4 * k4 / p.lambda - p.m) / p.discount_margin()
}

/// `k₂` as the negative root of the `a²` equation, or `None` outside the
/// domain where that root is real.
fn k2_of(p: &LqParams, k4: f64) -> Option<f64> {
    let varpi = k4 * p.b + 0.5 * p.d * p.d * k0_of(p, k4);
    let radicand = 0.25 * p.beta * p.beta + (p.n - 2.0 * varpi) / p.lambda;
    (radicand >= 0.0).then(|| 0.5 * p.beta * p.lambda - p.lambda * radicand.sqrt())
}

fn xa_residual(p: &LqParams, k4: f64) -> f64 {
    match k2_of(p, k4) {
        Some(k2) => {
            let k0 = k0_of(p, k4);
            p.beta * k4 - k0 * p.b - k4 * p.a - k2 * k4 / p.lambda - k0 * p.c * p.d + p.r
        }
        None => f64::NAN,
    }
}

fn back_substitute(p: &LqParams, k4: f64) -> Option<KCoefficients> {
    let k0 = k0_of(p, k4);
    let k2 = k2_of(p, k4)?;
    let LqParams {
        a,
        b,
        p: pp,
        p_prime,
        beta,
        lambda,
        ..
    } = *p;
    let denom = (beta - a) * (beta - b * k4 / (lambda * (beta - a)) - k2 / lambda);
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    let k3 = -(b * pp + p_prime * (beta - a)) / denom;
    let k1 = k3 * k4 / (lambda * (beta - a)) - pp / (beta - a);
    let k5 = (2.0 * lambda * k2 + k3 * k3) / (2.0 * lambda * beta);
    let k = KCoefficients {
        k0,
        k1,
        k2,
        k3,
        k4,
        k5,
    };
    k.to_array().iter().all(|v| v.is_finite()).then_some(k)
}

fn max_abs_residual(k: &KCoefficients, p: &LqParams) -> f64 {
    coefficient_residuals(k, p)
        .iter()
        .fold(0.0, |m, r| m.max(r.abs()))
}

/// Every solution of the coefficient system found in the `k₄` search
/// interval, concave or not.
pub fn all_solutions(p: &LqParams) -> Result<Vec<KCoefficients>, SolveError> {
    p.validate()?;
    let f = |k4: f64| xa_residual(p, k4);
    let mut out: Vec<KCoefficients> = Vec::new();
    for crossing in scan_sign_changes(f, K4_RANGE.0, K4_RANGE.1, K4_GRID) {
        let k4 = match crossing {
            Crossing::Exact(k4) => k4,
            Crossing::Bracket(lo, hi) => match bisect_secant(f, lo, hi, ROOT_TOL) {
                Ok(k4) => k4,
                Err(_) => continue,
            },
        };
        if let Some(k) = back_substitute(p, k4) {
            if max_abs_residual(&k, p) < ACCEPT_TOL
                && !out.iter().any(|o| (o.k4 - k.k4).abs() < 1e-9)
            {
                out.push(k);
            }
        }
    }
    Ok(out)
}

/// Solves for the concave quadratic Q-function of the LQ problem.
///
/// If several concave solutions exist the most strongly concave one (largest
/// `k₀k₂ − k₄²`) is returned and a warning is logged.
pub fn solve_lq(p: &LqParams) -> Result<KCoefficients, SolveError> {
    let roots = all_solutions(p)?;
    if roots.is_empty() {
        return Err(SolveError::NoRoot {
            lo: K4_RANGE.0,
            hi: K4_RANGE.1,
        });
    }
    let mut concave: Vec<KCoefficients> = roots
        .iter()
        .copied()
        .filter(KCoefficients::is_concave)
        .collect();
    if concave.is_empty() {
        return Err(SolveError::NoConcaveSolution {
            n_roots: roots.len(),
        });
    }
    if concave.len() > 1 {
        log::warn!(
            "{} concave coefficient solutions; keeping the most concave",
            concave.len()
        );
    }
    concave.sort_by(|a, b| b.hessian_det().total_cmp(&a.hessian_det()));
    Ok(concave[0])
}

#[inline]
pub fn q_star(k: &KCoefficients, x: f64, a: f64) -> f64 {
    0.5 * k.k0 * x * x + k.k1 * x + 0.5 * k.k2 * a * a + k.k3 * a + k.k4 * x * a + k.k5
}

#[inline]
pub fn optimal_score(k: &KCoefficients, lambda: f64, x: f64, a: f64) -> f64 {
    (k.k2 * a + k.k3 + k.k4 * x) / lambda
}

/// Maps analytic coefficients to the learnable parameterizations:
/// `θᵢ = kᵢ` and `v = (ln(−k₂/λ), k₄/λ, k₃/λ)`.
pub fn k_to_optimal_params(
    k: &KCoefficients,
    lambda: f64,
) -> Result<(QParams, ScoreParams), MappingError> {
    if k.k2.is_nan() || k.k2 >= 0.0 {
        return Err(MappingError::NonNegativeK2(k.k2));
    }
    Ok((
        QParams(k.to_array()),
        ScoreParams([(-k.k2 / lambda).ln(), k.k4 / lambda, k.k3 / lambda]),
    ))
}

/// Q-function of a fixed linear score `Ψ^v` (policy evaluation).
///
/// For `Ψ = −κa + vₓx + v_c` the Q-function is again quadratic and its
/// coefficients solve the *linear* system obtained by matching monomials in
/// `βQ − L^Ψ Q − r + λ/2 Ψ² = 0`. The `(k₀, k₂, k₄)` block decouples from
/// `(k₁, k₃)`, which decouples from `k₅`.
pub fn evaluate_linear_score(p: &LqParams, v: &ScoreParams) -> Result<KCoefficients, SolveError> {
    p.validate()?;
    let LqParams {
        a,
        b,
        c,
        d,
        m,
        n,
        r,
        p: pp,
        p_prime,
        beta,
        lambda,
    } = *p;
    let kappa = v.0[0].exp();
    let (vx, vc) = (v.0[1], v.0[2]);

    #[rustfmt::skip]
    let quad = Matrix3::new(
        0.5 * beta - a - 0.5 * c * c, 0.0,                 -vx,
        -0.5 * d * d,                 0.5 * beta + kappa,  -b,
        -b - c * d,                   -vx,                 beta - a + kappa,
    );
    let quad_rhs = Vector3::new(
        -0.5 * m - 0.5 * lambda * vx * vx,
        -0.5 * n - 0.5 * lambda * kappa * kappa,
        -r + lambda * kappa * vx,
    );
    let sol = quad.lu().solve(&quad_rhs).ok_or(SolveError::Singular)?;
    let (k0, k2, k4) = (sol[0], sol[1], sol[2]);

    #[rustfmt::skip]
    let lin = Matrix2::new(
        beta - a, -vx,
        -b,       beta + kappa,
    );
    let lin_rhs = Vector2::new(
        -pp - lambda * vx * vc + k4 * vc,
        -p_prime + lambda * kappa * vc + k2 * vc,
    );
    let sol = lin.lu().solve(&lin_rhs).ok_or(SolveError::Singular)?;
    let (k1, k3) = (sol[0], sol[1]);
    let k5 = (k3 * vc + k2 - 0.5 * lambda * vc * vc) / beta;
    let k = KCoefficients {
        k0,
        k1,
        k2,
        k3,
        k4,
        k5,
    };
    if k.to_array().iter().all(|x| x.is_finite()) {
        Ok(k)
    } else {
        Err(SolveError::Singular)
    }
}

/// Pointwise residual of the policy-evaluation equation
/// `βQ − L^Ψ Q − r + λ/2 Ψ²` for a quadratic `Q` and arbitrary score.
pub fn evaluation_residual<S: Score>(
    k: &KCoefficients,
    p: &LqParams,
    score: &S,
    x: f64,
    a: f64,
) -> f64 {
    let psi = score.score(x, a);
    let q_x = k.k0 * x + k.k1 + k.k4 * a;
    let q_a = k.k2 * a + k.k3 + k.k4 * x;
    let sigma_x = p.diffusion(x, a);
    let generator = q_x * p.drift(x, a) + q_a * psi + 0.5 * sigma_x * sigma_x * k.k0 + k.k2;
    p.beta * q_star(k, x, a) - generator - p.reward(x, a) + 0.5 * p.lambda * psi * psi
}
