//! Estimates and inequality checks.
//!
//! * exponential scaling of data and drivers,
//! * the `L^p` a priori estimate with its driver-integral companion,
//! * the scalar convexity inequality for `|x|^p` and its pathwise discrete
//!   expansion (on a grid `[X]^c = 0`, so the jump sum carries everything),
//! * the bracket-plus-compensator bound for supermartingales,
//! * the Mokobodski witness, the reflection jump formula and the upper bound
//!   on `dR+` for semimartingale barriers,
//! * the empirical constants these checks are asserted against.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtration::FilteredSpace;
use crate::generator::{Generator, Point};
use crate::martrep::MartingaleBasis;
use crate::process::{doob_decomposition, quadratic_variation, AdaptedProcess};
use crate::rbsde::{driver_along, RbsdeInput, Solution};

fn scale_rows(space: &FilteredSpace, x: &AdaptedProcess, alpha: f64) -> AdaptedProcess {
    x.map(|k, _, v| (alpha * space.time(k)).exp() * v)
}

/// `X^alpha_k = e^{alpha t_k} X_k`.
pub fn alpha_process(space: &FilteredSpace, x: &AdaptedProcess, alpha: f64) -> AdaptedProcess {
    scale_rows(space, x, alpha)
}

/// `V^alpha` with `dV^alpha_k = e^{alpha t_k} dV_k`, `V^alpha_0 = 0`.
pub fn alpha_fv(space: &FilteredSpace, v: &AdaptedProcess, alpha: f64) -> AdaptedProcess {
    if alpha == 0.0 {
        return v.clone();
    }
    let mut rows = vec![v.step(0).to_vec()];
    for k in 1..=space.steps() {
        let e = (alpha * space.time(k)).exp();
        let row = rows[k - 1]
            .iter()
            .zip(v.increment(k))
            .map(|(acc, d)| acc + e * d)
            .collect();
        rows.push(row);
    }
    AdaptedProcess::new(space, rows).expect("scaled increments stay adapted")
}

/// `f^alpha(t, y, z) = e^{alpha t} f(t, e^{-alpha t} y, e^{-alpha t} z) - alpha y`.
/// Its monotonicity constant is `mu - alpha` (floored at 0); `lambda` is unchanged.
pub fn alpha_generator(g: &Generator, alpha: f64) -> Generator {
    let inner = g.clone();
    Generator::new(
        format!("{}^alpha({alpha})", g.name()),
        (g.mu() - alpha).max(0.0),
        g.lambda(),
        g.depends_on_z(),
        move |pt, y, z| {
            let e = (alpha * pt.time).exp();
            let zs: Vec<f64> = z.iter().map(|v| v / e).collect();
            e * inner.eval(pt, y / e, &zs) - alpha * y
        },
    )
}

/// Data transform `(xi, f, V, L, U) -> (xi^alpha, f^alpha, V^alpha, L^alpha, U^alpha)`.
pub fn alpha_transform(space: &FilteredSpace, input: &RbsdeInput, alpha: f64) -> RbsdeInput {
    let e_t = (alpha * space.horizon()).exp();
    RbsdeInput {
        xi: input.xi.iter().map(|x| e_t * x).collect(),
        generator: alpha_generator(&input.generator, alpha),
        v: alpha_fv(space, &input.v, alpha),
        lower: input.lower.as_ref().map(|l| scale_rows(space, l, alpha)),
        upper: input.upper.as_ref().map(|u| scale_rows(space, u, alpha)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    /// `E sup |Y^alpha|^p + E [M]_N^{p/2}`.
    pub lhs: f64,
    /// `E(|xi^alpha|^p + (sum |dV^alpha|)^p + (sum e^{alpha t} f_t dt)^p)`,
    /// with the reflection folded into `V`.
    pub rhs: f64,
    pub ratio: f64,
    /// `E (sum |f(t, Y, Z)| dt)^p`.
    pub driver_lhs: f64,
    pub driver_ratio: f64,
    pub alpha: f64,
    pub p: f64,
    /// Digest of `Y` identifying the instance.
    pub digest: String,
}

const RATIO_FLOOR: f64 = 1e-300;

fn point<'a>(space: &FilteredSpace, k: usize, a: usize, dens: &'a [f64]) -> Point<'a> {
    Point {
        step: k,
        time: space.time(k),
        dt: space.dt(k),
        outcome: space.representative(k, a),
        atom: a,
        densities: dens,
    }
}

/// `f_t = |f(t, 0, Z_t)|`, which satisfies `y^ f(t, y, Z_t) <= f_t + mu |y|`
/// for every generator obeying its declared monotonicity.
pub fn canonical_bound(space: &FilteredSpace, basis: &MartingaleBasis, g: &Generator, sol: &Solution) -> AdaptedProcess {
    let n = space.steps();
    AdaptedProcess::from_atoms(space, |k, a| {
        if k == n {
            return 0.0;
        }
        let dens = basis.densities(k, a);
        g.eval(&point(space, k, a, &dens), 0.0, sol.z.get(k, a)).abs()
    })
}

fn probe_hypothesis_a(
    space: &FilteredSpace,
    basis: &MartingaleBasis,
    g: &Generator,
    sol: &Solution,
    f_bound: &AdaptedProcess,
) -> Result<()> {
    for k in 0..space.steps() {
        for a in 0..space.n_atoms(k) {
            let dens = basis.densities(k, a);
            let pt = point(space, k, a, &dens);
            let w = pt.outcome;
            let yk = sol.y.at(k, w);
            let fb = f_bound.at(k, w);
            let mut ys = vec![0.0, yk, -yk];
            for j in -2..=2 {
                let m = 10f64.powi(j);
                ys.push(m);
                ys.push(-m);
            }
            for y in ys {
                let f = g.eval(&pt, y, sol.z.get(k, a));
                let lhs = if y == 0.0 { 0.0 } else { y.signum() * f };
                let rhs = fb + g.mu() * y.abs();
                if lhs > rhs + 1e-12 * (1.0 + lhs.abs() + rhs.abs()) {
                    return Err(Error::HypothesisUnverified(format!(
                        "growth bound fails at step {k}, atom {a}, y = {y}: {lhs} > {rhs}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Evaluates the `L^p` estimate for a solution. The reflection is treated as
/// part of the finite-variation driver: `Y` solves the unreflected equation
/// with `V + R+ - R-`.
pub fn check_lp_estimate(
    space: &FilteredSpace,
    basis: &MartingaleBasis,
    input: &RbsdeInput,
    sol: &Solution,
    p: f64,
    alpha: f64,
    f_bound: &AdaptedProcess,
) -> Result<EstimateReport> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::InvalidArgument(format!("estimate exponent {p} outside (1, 2]")));
    }
    let g = &input.generator;
    let need = if g.depends_on_z() { g.mu() + g.lambda().powi(2) } else { g.mu() };
    if alpha < need {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} below the required {need}")));
    }
    space.check_process(f_bound)?;
    probe_hypothesis_a(space, basis, g, sol, f_bound)?;

    let n = space.steps();
    let e = |k: usize| (alpha * space.time(k)).exp();
    let net = sol.r.net();
    let mut lhs_w = Vec::with_capacity(space.n_outcomes());
    let mut rhs_w = Vec::with_capacity(space.n_outcomes());
    let mut drv_w = Vec::with_capacity(space.n_outcomes());
    let qv = quadratic_variation(space, &sol.m)?;
    let fy = driver_along(space, basis, g, sol);
    for w in 0..space.n_outcomes() {
        let sup = (0..=n).map(|k| (e(k) * sol.y.at(k, w)).abs()).fold(0.0, f64::max);
        lhs_w.push(sup.powf(p) + qv.at(n, w).powf(p / 2.0));
        let var: f64 = (1..=n)
            .map(|k| e(k) * ((input.v.at(k, w) - input.v.at(k - 1, w)) + (net.at(k, w) - net.at(k - 1, w))).abs())
            .sum();
        let bound: f64 = (0..n).map(|k| e(k) * f_bound.at(k, w) * space.dt(k)).sum();
        rhs_w.push((e(n) * input.xi[w]).abs().powf(p) + var.powf(p) + bound.powf(p));
        let drv: f64 = (0..n).map(|k| fy.at(k, w).abs() * space.dt(k)).sum();
        drv_w.push(drv.powf(p));
    }
    let lhs = space.expectation(&lhs_w);
    let rhs = space.expectation(&rhs_w);
    let driver_lhs = space.expectation(&drv_w);
    let ratio = |x: f64| if x == 0.0 { 0.0 } else { x / rhs.max(RATIO_FLOOR) };
    Ok(EstimateReport {
        lhs,
        rhs,
        ratio: ratio(lhs),
        driver_lhs,
        driver_ratio: ratio(driver_lhs),
        alpha,
        p,
        digest: crate::report::digest(sol.y.rows().iter().flatten()),
    })
}

/// `phi(x) - phi(y) - phi'(y)(x - y) >= 1/2 1{|x| v |y| != 0} phi''(|x| v |y|) (x - y)^2`
/// for `phi = |.|^p`, up to a relative rounding tolerance.
pub fn scalar_convexity_check(x: f64, y: f64, p: f64) -> bool {
    let (lhs, rhs) = scalar_convexity_terms(x, y, p);
    lhs >= rhs - 1e-12 * (1.0 + lhs.abs() + rhs.abs())
}

/// Both sides of the scalar convexity inequality.
pub fn scalar_convexity_terms(x: f64, y: f64, p: f64) -> (f64, f64) {
    let phi = |v: f64| v.abs().powf(p);
    let dphi = |v: f64| if v == 0.0 { 0.0 } else { p * v.abs().powf(p - 1.0) * v.signum() };
    let m = x.abs().max(y.abs());
    let lhs = phi(x) - phi(y) - dphi(y) * (x - y);
    let rhs = if m == 0.0 {
        0.0
    } else {
        0.5 * p * (p - 1.0) * m.powf(p - 2.0) * (x - y).powi(2)
    };
    (lhs, rhs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TanakaReport {
    /// Largest `| (|X_t|^p - |X_s|^p) - (drift + martingale + jump sums) |`.
    pub worst_gap: f64,
    /// Smallest jump term `d|X|^p - p |X|^{p-1} X^ dX`; never negative.
    pub min_jump_term: f64,
    pub scale: f64,
}

impl TanakaReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_gap <= tol * (1.0 + self.scale) && self.min_jump_term >= -tol * (1.0 + self.scale)
    }
}

/// Pathwise `p`-power expansion of `X = x0 + K + M` between grid indices
/// `s <= t`:
/// `|X_t|^p - |X_s|^p = sum p |X_k|^{p-1} X^_k (dK + dM)_{k+1} + sum (d|X|^p - p |X_k|^{p-1} X^_k dX)_{k+1}`.
pub fn tanaka_power_check(
    space: &FilteredSpace,
    x0: f64,
    k_fv: &AdaptedProcess,
    m: &AdaptedProcess,
    p: f64,
    s: usize,
    t: usize,
) -> Result<TanakaReport> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::InvalidArgument(format!("exponent {p} outside (1, 2)")));
    }
    if s > t || t > space.steps() {
        return Err(Error::IndexOutOfRange {
            what: "expansion end",
            index: t,
            limit: space.steps(),
        });
    }
    space.check_process(k_fv)?;
    space.check_process(m)?;
    let x = k_fv.zip_with(m, |a, b| x0 + a + b);
    let pw = |v: f64| v.abs().powf(p);
    let dphi = |v: f64| if v == 0.0 { 0.0 } else { p * v.abs().powf(p - 1.0) * v.signum() };
    let mut rep = TanakaReport {
        worst_gap: 0.0,
        min_jump_term: f64::INFINITY,
        scale: 0.0,
    };
    for w in 0..space.n_outcomes() {
        let mut drift = 0.0;
        let mut mart = 0.0;
        let mut jumps = 0.0;
        for j in s..t {
            let (xj, xn) = (x.at(j, w), x.at(j + 1, w));
            let d = dphi(xj);
            drift += d * (k_fv.at(j + 1, w) - k_fv.at(j, w));
            mart += d * (m.at(j + 1, w) - m.at(j, w));
            let term = pw(xn) - pw(xj) - d * (xn - xj);
            rep.min_jump_term = rep.min_jump_term.min(term);
            jumps += term;
            rep.scale = rep.scale.max(pw(xn)).max(pw(xj));
        }
        let lhs = pw(x.at(t, w)) - pw(x.at(s, w));
        rep.worst_gap = rep.worst_gap.max((lhs - (drift + mart + jumps)).abs());
    }
    if rep.min_jump_term == f64::INFINITY {
        rep.min_jump_term = 0.0;
    }
    Ok(rep)
}

/// `(E [S]_N + E K_N^2) / E sup |S|^2` for a supermartingale `S = S_0 - K + M`.
pub fn lemma_lm12_ratio(space: &FilteredSpace, s: &AdaptedProcess) -> Result<f64> {
    let doob = doob_decomposition(space, s)?;
    let qv = quadratic_variation(space, s)?;
    let kn: Vec<f64> = doob.compensator.terminal().iter().map(|k| k * k).collect();
    let sup: Vec<f64> = (0..space.n_outcomes())
        .map(|w| (0..=space.steps()).map(|k| s.at(k, w).abs()).fold(0.0, f64::max).powi(2))
        .collect();
    let num = space.expectation(qv.terminal()) + space.expectation(&kn);
    let den = space.expectation(&sup);
    Ok(if num == 0.0 { 0.0 } else { num / den.max(RATIO_FLOOR) })
}

/// Outcome of the Mokobodski check.
#[derive(Clone, Debug, PartialEq)]
pub enum Mokobodski {
    /// `X = clamp(0, L, U)` sits between the barriers; `driver_l1` is
    /// `E sum |f(t_k, X_k, 0)| dt` and `driver_minus_l1` the same for `f^-`.
    Witness {
        x: AdaptedProcess,
        driver_l1: f64,
        driver_minus_l1: f64,
    },
    Refuted {
        step: usize,
        outcome: usize,
        lower: f64,
        upper: f64,
    },
}

pub fn check_h5_h6(space: &FilteredSpace, basis: &MartingaleBasis, input: &RbsdeInput) -> Result<Mokobodski> {
    let n = space.steps();
    for k in 0..n {
        for w in 0..space.n_outcomes() {
            if let (Some(l), Some(u)) = (input.lower_at(k, w), input.upper_at(k, w)) {
                if l > u {
                    return Ok(Mokobodski::Refuted {
                        step: k,
                        outcome: w,
                        lower: l,
                        upper: u,
                    });
                }
            }
        }
    }
    let x = AdaptedProcess::from_atoms(space, |k, a| {
        let w = space.representative(k, a);
        let lo = input.lower_at(k, w).unwrap_or(f64::NEG_INFINITY);
        let hi = input.upper_at(k, w).unwrap_or(f64::INFINITY);
        if k == n {
            0.0
        } else {
            0.0f64.max(lo).min(hi)
        }
    });
    let zero = vec![0.0; basis.basis_count()];
    let mut abs_w = vec![0.0; space.n_outcomes()];
    let mut neg_w = vec![0.0; space.n_outcomes()];
    for k in 0..n {
        for a in 0..space.n_atoms(k) {
            let dens = basis.densities(k, a);
            let pt = point(space, k, a, &dens);
            let f = input.generator.eval(&pt, x.at(k, pt.outcome), &zero);
            for &w in space.atom(k, a) {
                abs_w[w] += f.abs() * pt.dt;
                neg_w[w] += (-f).max(0.0) * pt.dt;
            }
        }
    }
    Ok(Mokobodski::Witness {
        driver_l1: space.expectation(&abs_w),
        driver_minus_l1: space.expectation(&neg_w),
        x,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpReport {
    /// Steps at which `dR+ > 0`.
    pub events: usize,
    /// Largest `|dR+_{k+1} - (E[Y_{k+1} + dV_{k+1} | F_k] - L_k)^-|` over events.
    pub worst_deviation: f64,
    /// `2 max_k dt_k sup |f(t_k, Y_k, Z_k)|`.
    pub tolerance: f64,
}

/// Size of the lower reflection at its active steps against the predicted
/// jump `(pY + pV - L_-)^-`.
pub fn jump_formula_check(space: &FilteredSpace, basis: &MartingaleBasis, input: &RbsdeInput, sol: &Solution) -> Result<JumpReport> {
    let lower = input
        .lower
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("jump formula needs a lower barrier".into()))?;
    let f = driver_along(space, basis, &input.generator, sol);
    let mut rep = JumpReport {
        events: 0,
        worst_deviation: 0.0,
        tolerance: 0.0,
    };
    let sup_f = f.rows().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..space.steps() {
        rep.tolerance = rep.tolerance.max(2.0 * space.dt(k) * sup_f);
        let next: Vec<f64> = sol
            .y
            .step(k + 1)
            .iter()
            .zip(input.v.increment(k + 1))
            .map(|(y, d)| y + d)
            .collect();
        let c = space.atom_means(&next, k)?;
        for a in 0..space.n_atoms(k) {
            let w = space.representative(k, a);
            let dp = sol.r.plus.at(k + 1, w) - sol.r.plus.at(k, w);
            if dp > 0.0 {
                rep.events += 1;
                let predicted = (lower.at(k, w) - c[a]).max(0.0);
                rep.worst_deviation = rep.worst_deviation.max((dp - predicted).abs());
            }
        }
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReflectionBoundReport {
    /// `max (dR+_{k+1} - bound_{k+1})` with the sign-consistent bound
    /// `1{Y_k = L_k} (-f(t_k, L_k, Z_k) dt - dV^p_{k+1} + dA^p_{k+1})^+`.
    pub worst_excess: f64,
    /// Same with the bound `1{Y_k = L_k} (f dt + dV^p - dA^p)^+`.
    pub flipped_worst_excess: f64,
    /// Steps where `Y` sits on `L`.
    pub contacts: usize,
}

/// Upper bound on the lower reflection when `L = L_0 - A + N` with `A` of
/// finite variation and `N` a martingale (`A_0 = 0`). Requires `xi >= L_N`.
pub fn reflection_bound_check(
    space: &FilteredSpace,
    basis: &MartingaleBasis,
    input: &RbsdeInput,
    sol: &Solution,
    a: &AdaptedProcess,
) -> Result<ReflectionBoundReport> {
    let lower = input
        .lower
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("reflection bound needs a lower barrier".into()))?;
    let ap = space.dual_predictable_projection(a)?;
    let vp = space.dual_predictable_projection(&input.v)?;
    let f = driver_along(space, basis, &input.generator, sol);
    let mut rep = ReflectionBoundReport {
        worst_excess: f64::NEG_INFINITY,
        flipped_worst_excess: f64::NEG_INFINITY,
        contacts: 0,
    };
    for k in 0..space.steps() {
        for at in 0..space.n_atoms(k) {
            let w = space.representative(k, at);
            let (y, l) = (sol.y.at(k, w), lower.at(k, w));
            let on = (y - l).abs() <= 1e-12 * (1.0 + l.abs());
            rep.contacts += usize::from(on);
            let drive = f.at(k, w) * space.dt(k) + (vp.at(k + 1, w) - vp.at(k, w)) - (ap.at(k + 1, w) - ap.at(k, w));
            let (bound, flipped) = if on { ((-drive).max(0.0), drive.max(0.0)) } else { (0.0, 0.0) };
            let dp = sol.r.plus.at(k + 1, w) - sol.r.plus.at(k, w);
            rep.worst_excess = rep.worst_excess.max(dp - bound);
            rep.flipped_worst_excess = rep.flipped_worst_excess.max(dp - flipped);
        }
    }
    Ok(rep)
}

/// Calibrated no-regression constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConstants {
    pub c_lm12: f64,
    /// `C*(p)` keyed by the exponent as written (`"1.25"`, `"1.5"`, `"2"`).
    pub c_star: BTreeMap<String, f64>,
    /// Bound for `E (sum |f(t, Y, Z)| dt)^p` over the data norms, same keys.
    pub c_driver: BTreeMap<String, f64>,
    pub calibration: Calibration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub seed: u64,
    pub instances: usize,
    /// Constants are `margin * observed maximum`.
    pub margin: f64,
    pub observed_lm12: f64,
    pub observed_star: BTreeMap<String, f64>,
    pub observed_driver: BTreeMap<String, f64>,
}

/// Exponents the estimate constants are calibrated for.
pub const ESTIMATE_EXPONENTS: [(&str, f64); 3] = [("1.25", 1.25), ("1.5", 1.5), ("2", 2.0)];

const BUNDLED_CONSTANTS: &str = include_str!("../fixtures/empirical_constants.json");

impl EmpiricalConstants {
    pub fn bundled() -> Result<Self> {
        Ok(serde_json::from_str(BUNDLED_CONSTANTS)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constants serialize") + "\n"
    }

    pub fn star(&self, key: &str) -> Result<f64> {
        self.c_star.get(key).copied().ok_or_else(|| Error::Config {
            key: format!("c_star.{key}"),
            message: "missing constant".into(),
        })
    }

    pub fn driver(&self, key: &str) -> Result<f64> {
        self.c_driver.get(key).copied().ok_or_else(|| Error::Config {
            key: format!("c_driver.{key}"),
            message: "missing constant".into(),
        })
    }
}
