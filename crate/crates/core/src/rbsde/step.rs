//! One implicit step of the backward scheme.
//!
//! Given `c = E[Y_{k+1} + dV_{k+1} | A]`, solve `g(y) = y - dt f(t_k, y, z) = c`
//! and then project onto `[L_k, U_k]`. With `dt max(mu, 0) <= 1/2` we have
//! `g' >= 1/2`, so the root is unique and lies within `2 |g(c) - c|` of `c`.

use crate::error::{Error, Result};
use crate::generator::{Generator, Point};

/// Residual tolerance `|g(y) - c| <= ROOT_TOL max(1, |c|)`.
pub const ROOT_TOL: f64 = 1e-13;
/// Cap on safeguarded Newton/bisection rounds.
pub const ROOT_MAX_ROUNDS: usize = 200;
/// Largest admissible `dt * max(mu, 0)`.
pub const MAX_DT_MU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub y: f64,
    pub d_plus: f64,
    pub d_minus: f64,
}

pub(crate) fn check_step_size(step: usize, dt: f64, mu: f64) -> Result<()> {
    let product = dt * mu.max(0.0);
    if product > MAX_DT_MU {
        return Err(Error::StepSizeTooLarge { step, product });
    }
    Ok(())
}

/// Finds `y` with `g(y) = c` for a strictly increasing `g` with slope at least 1/2.
pub(crate) fn solve_increasing(g: impl Fn(f64) -> f64, c: f64, step: usize, atom: usize) -> Result<f64> {
    let tol = ROOT_TOL * c.abs().max(1.0);
    let r0 = g(c) - c;
    if r0.abs() <= tol {
        return Ok(c);
    }
    let mut width = 2.0 * r0.abs() * (1.0 + 1e-9) + tol;
    let (mut lo, mut hi);
    let mut expansions = 0;
    loop {
        if r0 < 0.0 {
            lo = c;
            hi = c + width;
        } else {
            lo = c - width;
            hi = c;
        }
        if g(lo) - c <= 0.0 && g(hi) - c >= 0.0 {
            break;
        }
        expansions += 1;
        width *= 2.0;
        if expansions > 60 || !width.is_finite() {
            return Err(Error::RootBracketFailure { step, atom });
        }
    }

    // Explicit Euler guess y = c + dt f(c) = c - r0.
    let mut y = (c - r0).clamp(lo, hi);
    for _ in 0..ROOT_MAX_ROUNDS {
        let r = g(y) - c;
        if !r.is_finite() {
            return Err(Error::RootBracketFailure { step, atom });
        }
        if r.abs() <= tol {
            return Ok(y);
        }
        if r < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        let h = 1e-7 * y.abs().max(1.0);
        let slope = (g(y + h) - g(y - h)) / (2.0 * h);
        let newton = y - r / slope;
        y = if slope.is_finite() && slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    // Bracket collapsed to rounding level: return the better endpoint.
    let (rl, rh) = ((g(lo) - c).abs(), (g(hi) - c).abs());
    Ok(if rl <= rh { lo } else { hi })
}

/// Implicit step with projection on the barriers.
pub fn implicit_step(
    c: f64,
    at: &Point<'_>,
    f: &Generator,
    z: &[f64],
    lower: Option<f64>,
    upper: Option<f64>,
) -> Result<StepResult> {
    check_step_size(at.step, at.dt, f.mu())?;
    let g = |y: f64| y - at.dt * f.eval(at, y, z);
    let mut y = solve_increasing(g, c, at.step, at.atom)?;
    let mut d_plus = 0.0;
    let mut d_minus = 0.0;
    if let Some(l) = lower {
        if y < l {
            y = l;
            d_plus = (g(l) - c).max(0.0);
        }
    }
    if let Some(u) = upper {
        if y > u {
            y = u;
            d_minus = (c - g(u)).max(0.0);
        }
    }
    Ok(StepResult { y, d_plus, d_minus })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(dt: f64) -> Point<'static> {
        Point { step: 0, time: 0.0, dt, outcome: 0, atom: 0, densities: &[] }
    }

    #[test]
    fn zero_driver_returns_c() {
        let r = implicit_step(0.7, &pt(1.0), &Generator::zero(), &[], None, None).unwrap();
        assert_eq!(r, StepResult { y: 0.7, d_plus: 0.0, d_minus: 0.0 });
    }

    #[test]
    fn lower_clamp() {
        let r = implicit_step(0.0, &pt(1.0), &Generator::zero(), &[], Some(1.0), None).unwrap();
        assert_eq!(r, StepResult { y: 1.0, d_plus: 1.0, d_minus: 0.0 });
    }

    #[test]
    fn upper_clamp() {
        let r = implicit_step(3.0, &pt(1.0), &Generator::zero(), &[], Some(0.0), Some(2.0)).unwrap();
        assert_eq!(r, StepResult { y: 2.0, d_plus: 0.0, d_minus: 1.0 });
    }

    #[test]
    fn linear_decay_closed_form() {
        // y + 0.5 y = 1
        let r = implicit_step(1.0, &pt(0.5), &Generator::linear(-1.0, 0.0), &[], None, None).unwrap();
        assert!((r.y - 1.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn cubic_root() {
        let f = Generator::cubic(2.0, 0.0);
        let r = implicit_step(5.0, &pt(0.3), &f, &[], None, None).unwrap();
        let g = r.y + 0.3 * 2.0 * r.y.powi(3);
        assert!((g - 5.0).abs() <= 5e-13);
    }

    #[test]
    fn step_size_guard() {
        let f = Generator::linear(2.0, 0.0);
        assert!(matches!(
            implicit_step(1.0, &pt(0.3), &f, &[], None, None),
            Err(Error::StepSizeTooLarge { .. })
        ));
        assert!(implicit_step(1.0, &pt(0.25), &f, &[], None, None).is_ok());
    }

    #[test]
    fn stiff_penalty_is_solved() {
        // y - n (1 - y)^+ = 0 with n = 2^20: y = n / (1 + n)
        let n = (1u64 << 20) as f64;
        let f = Generator::two_sided_penalty(n, 0.0, 1.0, f64::INFINITY);
        let r = implicit_step(0.0, &pt(1.0), &f, &[], None, None).unwrap();
        assert!((r.y - n / (1.0 + n)).abs() < 1e-15);
    }

    #[test]
    fn undeclared_increase_is_reported() {
        let liar = Generator::new("liar", 0.0, 0.0, false, |_, y, _| 4.0 * y);
        // g(y) = y - 4y = -3y is decreasing: no bracket can be found
        assert!(matches!(
            implicit_step(1.0, &pt(1.0), &liar, &[], None, None),
            Err(Error::RootBracketFailure { .. })
        ));
    }
}
