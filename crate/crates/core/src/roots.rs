//! Scalar root finding: grid scan for sign changes, then safeguarded
//! secant refinement inside each bracket.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RootError {
    #[error("f does not change sign on [{a}, {b}] (f(a) = {fa}, f(b) = {fb})")]
    NoSignChange { a: f64, fa: f64, b: f64, fb: f64 },
    #[error("f is not finite at {x}")]
    NotFinite { x: f64 },
}

/// Finds a root of `f` in `[a, b]`, where `f(a)` and `f(b)` have opposite
/// signs, to `|f(x)| <= tol` or until the bracket collapses to rounding
/// level.
///
/// Each iteration takes the secant (false-position) point of the bracket;
/// whenever the previous iteration failed to halve the bracket, a bisection
/// step is forced. This keeps secant's fast local convergence while
/// retaining bisection's guaranteed progress.
pub fn bisect_secant<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, RootError> {
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    if !f_lo.is_finite() {
        return Err(RootError::NotFinite { x: lo });
    }
    if !f_hi.is_finite() {
        return Err(RootError::NotFinite { x: hi });
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(RootError::NoSignChange {
            a: lo,
            fa: f_lo,
            b: hi,
            fb: f_hi,
        });
    }

    let mut force_bisect = false;
    let mut best = if f_lo.abs() < f_hi.abs() {
        (lo, f_lo)
    } else {
        (hi, f_hi)
    };
    for _ in 0..200 {
        let width = hi - lo;
        let secant = hi - f_hi * (hi - lo) / (f_hi - f_lo);
        let mid = lo + 0.5 * width;
        let c = if force_bisect || !(secant > lo && secant < hi) {
            mid
        } else {
            secant
        };
        let fc = f(c);
        if !fc.is_finite() {
            return Err(RootError::NotFinite { x: c });
        }
        if fc.abs() < best.1.abs() {
            best = (c, fc);
        }
        if fc.abs() <= tol {
            return Ok(c);
        }
        if fc.signum() == f_lo.signum() {
            lo = c;
            f_lo = fc;
        } else {
            hi = c;
            f_hi = fc;
        }
        force_bisect = hi - lo > 0.5 * width;
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(best.0)
}

/// A place where a scan detected a root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    /// `f` is exactly zero at a grid point.
    Exact(f64),
    /// `f` changes sign between the two points.
    Bracket(f64, f64),
}

/// Scans `[lo, hi]` on a grid of spacing `step` and reports every sign
/// change. Where `f` stops being finite (leaves its domain) between two
/// grid points, the domain edge is located by bisection and the last finite
/// point near it is treated as an extra grid point, so roots between the
/// last grid point and the edge are not lost.
pub fn scan_sign_changes<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64) -> Vec<Crossing> {
    let n = ((hi - lo) / step).round() as usize;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = lo + i as f64 * step;
        let fx = f(x);
        if let Some(&(px, pfx)) = points.last() {
            if pfx.is_finite() != fx.is_finite() {
                // Edge refinement: keep the finite side of [px, x].
                let (mut fin, mut inf) = if pfx.is_finite() { (px, x) } else { (x, px) };
                for _ in 0..80 {
                    let m = 0.5 * (fin + inf);
                    if f(m).is_finite() {
                        fin = m;
                    } else {
                        inf = m;
                    }
                }
                points.push((fin, f(fin)));
            }
        }
        points.push((x, fx));
    }

    let mut out = Vec::new();
    for w in points.windows(2) {
        let (x0, f0) = w[0];
        let (x1, f1) = w[1];
        if f0 == 0.0 {
            out.push(Crossing::Exact(x0));
        } else if f0.is_finite() && f1.is_finite() && f1 != 0.0 && f0.signum() != f1.signum() {
            out.push(Crossing::Bracket(x0, x1));
        }
    }
    if let Some(&(x, fx)) = points.last() {
        if fx == 0.0 {
            out.push(Crossing::Exact(x));
        }
    }
    out.dedup();
    out
}
