//! Reflected BSDE solvers on a finite filtered space.
//!
//! The discrete equation on step `(k, k+1]` reads
//!
//! ```text
//! Y_k = Y_{k+1} + f(t_k, Y_k, Z_k) dt_k + dV_{k+1} + dR_{k+1} - dM_{k+1}
//! ```
//!
//! with `dR_{k+1} = dR+_{k+1} - dR-_{k+1}` measurable with respect to `F_k`
//! (predictable), `M` a martingale and `Z` its representation coefficients.
//! `Z_k` only depends on `Y_{k+1}`, so each step is one scalar implicit solve
//! per atom followed by a projection on `[L_k, U_k]`.
//!
//! Grid conventions: a left limit `Y_{t-}` at grid time `t_k` is `Y_{k-1}`,
//! and a predictable quantity at `t_k` is `F_{k-1}`-measurable.

mod penalty;
mod picard;
mod step;
mod verify;

use std::sync::Arc;

pub use penalty::{dyadic_schedule, penalization_sweep, ConvergenceReport, ConvergenceRow};
pub use picard::{solve_picard, PicardConfig, PicardReport};
pub use step::{implicit_step, StepResult, MAX_DT_MU, ROOT_MAX_ROUNDS, ROOT_TOL};
pub use verify::{verify_solution, InvariantReport};

use crate::error::{Error, Result};
use crate::filtration::FilteredSpace;
use crate::generator::{Generator, Point};
use crate::martrep::{MartingaleBasis, ZCoefficients};
use crate::process::{AdaptedProcess, FvDecomposition, PredictableProcess};

/// Data of `RBSDE(xi, f + dV, L, U)`.
#[derive(Clone, Debug)]
pub struct RbsdeInput {
    /// Terminal value, outcome-indexed.
    pub xi: Vec<f64>,
    pub generator: Generator,
    /// Finite-variation driver, `V_0 = 0`.
    pub v: AdaptedProcess,
    pub lower: Option<AdaptedProcess>,
    pub upper: Option<AdaptedProcess>,
}

impl RbsdeInput {
    pub fn new(space: &FilteredSpace, xi: Vec<f64>, generator: Generator) -> Self {
        Self {
            xi,
            generator,
            v: AdaptedProcess::zeros(space),
            lower: None,
            upper: None,
        }
    }

    pub fn with_v(mut self, v: AdaptedProcess) -> Self {
        self.v = v;
        self
    }

    pub fn with_lower(mut self, lower: AdaptedProcess) -> Self {
        self.lower = Some(lower);
        self
    }

    pub fn with_upper(mut self, upper: AdaptedProcess) -> Self {
        self.upper = Some(upper);
        self
    }

    pub fn with_generator(mut self, generator: Generator) -> Self {
        self.generator = generator;
        self
    }

    /// Shape, `V_0 = 0`, measurability of `xi`, and `L <= U` before `N`.
    pub fn validate(&self, space: &FilteredSpace) -> Result<()> {
        if self.xi.len() != space.n_outcomes() {
            return Err(Error::Shape(format!(
                "xi has {} values for {} outcomes",
                self.xi.len(),
                space.n_outcomes()
            )));
        }
        space.check_process(&self.v)?;
        if self.v.step(0).iter().any(|&x| x != 0.0) {
            return Err(Error::InvalidArgument("V must start at 0".into()));
        }
        for b in self.lower.iter().chain(&self.upper) {
            space.check_process(b)?;
        }
        if let (Some(l), Some(u)) = (&self.lower, &self.upper) {
            for k in 0..space.steps() {
                for w in 0..space.n_outcomes() {
                    if l.at(k, w) > u.at(k, w) {
                        return Err(Error::BarrierCrossing {
                            step: k,
                            outcome: w,
                            lower: l.at(k, w),
                            upper: u.at(k, w),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn lower_at(&self, k: usize, w: usize) -> Option<f64> {
        self.lower.as_ref().map(|l| l.at(k, w))
    }

    pub(crate) fn upper_at(&self, k: usize, w: usize) -> Option<f64> {
        self.upper.as_ref().map(|u| u.at(k, w))
    }
}

/// `(Y, Z, M, R)` with `R = R+ - R-`. For a single lower barrier `R- = 0`
/// and `R+` is the increasing reflecting process `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub y: AdaptedProcess,
    pub z: ZCoefficients,
    pub m: AdaptedProcess,
    pub r: FvDecomposition,
}

impl Solution {
    /// `R+` (named `K` in the one-barrier problem).
    pub fn k(&self) -> &PredictableProcess {
        &self.r.plus
    }

    pub fn r_minus(&self) -> &PredictableProcess {
        &self.r.minus
    }
}

/// Unreflected solution of the penalized equation with realized penalty
/// processes `K^n_k = sum n (Y - L)^- dt` and `A^{n,m}_k = sum m (Y - U)^+ dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct PenalizedSolution {
    pub y: AdaptedProcess,
    pub z: ZCoefficients,
    pub m: AdaptedProcess,
    pub k: PredictableProcess,
    pub a: PredictableProcess,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Rule {
    Reflect,
    Penalize { n: f64, m: f64 },
}

/// Raw backward-sweep output; rows are outcome-indexed.
#[derive(Clone)]
pub(crate) struct Buffers {
    pub y: Vec<Vec<f64>>,
    pub z: ZCoefficients,
    /// `dm[k]` holds `dM_{k+1}` (for `k < N`).
    pub dm: Vec<Vec<f64>>,
    /// `dplus[k]`, `dminus[k]`: increments acting on `(k, k+1]`.
    pub dplus: Vec<Vec<f64>>,
    pub dminus: Vec<Vec<f64>>,
}

impl Buffers {
    pub fn new(space: &FilteredSpace, basis: &MartingaleBasis, xi: &[f64]) -> Self {
        let n = space.n_outcomes();
        let steps = space.steps();
        let mut y = vec![vec![0.0; n]; steps + 1];
        y[steps] = xi.to_vec();
        Self {
            y,
            z: ZCoefficients::zeros(space, basis.basis_count()),
            dm: vec![vec![0.0; n]; steps],
            dplus: vec![vec![0.0; n]; steps],
            dminus: vec![vec![0.0; n]; steps],
        }
    }
}

pub(crate) struct Sweep<'a> {
    pub space: &'a FilteredSpace,
    pub basis: &'a MartingaleBasis,
    pub input: &'a RbsdeInput,
    /// Driver actually used in the implicit solve.
    pub driver: &'a Generator,
    pub rule: Rule,
}

impl Sweep<'_> {
    /// Fills steps `from..to` of `buf`, assuming `buf.y[to]` is set.
    pub fn run(&self, from: usize, to: usize, buf: &mut Buffers) -> Result<()> {
        let space = self.space;
        for k in (from..to).rev() {
            step::check_step_size(k, space.dt(k), self.driver.mu())?;
            let dv = self.input.v.increment(k + 1);
            for a in 0..space.n_atoms(k) {
                let w0 = space.representative(k, a);
                let q = &self.basis.atom(k, a).child_probs;
                let x: Vec<f64> = space
                    .children(k, a)
                    .iter()
                    .map(|&b| {
                        let wb = space.representative(k + 1, b);
                        buf.y[k + 1][wb] + dv[wb]
                    })
                    .collect();
                let c: f64 = q.iter().zip(&x).map(|(p, v)| p * v).sum();
                let centred: Vec<f64> = x.iter().map(|v| v - c).collect();
                let z = self.basis.coefficients(k, a, &centred);
                let dens = self.basis.densities(k, a);
                let at = Point {
                    step: k,
                    time: space.time(k),
                    dt: space.dt(k),
                    outcome: w0,
                    atom: a,
                    densities: &dens,
                };
                let res = match self.rule {
                    Rule::Reflect => implicit_step(
                        c,
                        &at,
                        self.driver,
                        &z,
                        self.input.lower_at(k, w0),
                        self.input.upper_at(k, w0),
                    )?,
                    Rule::Penalize { n, m } => {
                        let r = implicit_step(c, &at, self.driver, &z, None, None)?;
                        let dt = at.dt;
                        StepResult {
                            y: r.y,
                            d_plus: self.input.lower_at(k, w0).map_or(0.0, |l| dt * n * (l - r.y).max(0.0)),
                            d_minus: self.input.upper_at(k, w0).map_or(0.0, |u| dt * m * (r.y - u).max(0.0)),
                        }
                    }
                };
                for &w in space.atom(k, a) {
                    buf.y[k][w] = res.y;
                    buf.dplus[k][w] = res.d_plus;
                    buf.dminus[k][w] = res.d_minus;
                    buf.dm[k][w] = centred[space.child_position(k, w)];
                }
                buf.z.set(k, a, z);
            }
        }
        Ok(())
    }
}

fn cumulate(space: &FilteredSpace, incs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = space.n_outcomes();
    let mut rows = vec![vec![0.0; n]];
    for inc in incs {
        let last = rows.last().expect("nonempty");
        let next = last.iter().zip(inc).map(|(a, b)| a + b).collect();
        rows.push(next);
    }
    rows
}

pub(crate) fn assemble(space: &FilteredSpace, buf: Buffers) -> Result<Solution> {
    let y = AdaptedProcess::new(space, buf.y)?;
    let m = AdaptedProcess::new(space, cumulate(space, &buf.dm))?;
    let plus = PredictableProcess::new(space, cumulate(space, &buf.dplus))?;
    let minus = PredictableProcess::new(space, cumulate(space, &buf.dminus))?;
    Ok(Solution {
        y,
        z: buf.z,
        m,
        r: FvDecomposition { plus, minus },
    })
}

/// Solves `RBSDE(xi, f + dV, L, U)` by backward induction with projection on
/// the barriers. `Z` is computed exactly at each step (no inner iteration).
pub fn solve_reflected(space: &FilteredSpace, basis: &MartingaleBasis, input: &RbsdeInput) -> Result<Solution> {
    input.validate(space)?;
    let mut buf = Buffers::new(space, basis, &input.xi);
    Sweep {
        space,
        basis,
        input,
        driver: &input.generator,
        rule: Rule::Reflect,
    }
    .run(0, space.steps(), &mut buf)?;
    assemble(space, buf)
}

/// Solves the penalized (unreflected) equation with driver
/// `f + n (y - L)^- - m (y - U)^+`. A penalty on a missing barrier is ignored.
pub fn solve_penalized(
    space: &FilteredSpace,
    basis: &MartingaleBasis,
    input: &RbsdeInput,
    n: f64,
    m: f64,
) -> Result<PenalizedSolution> {
    input.validate(space)?;
    if !(n >= 0.0 && m >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalties must be nonnegative, got ({n}, {m})")));
    }
    let driver = input.generator.penalized(
        n,
        input.lower.clone().map(Arc::new),
        m,
        input.upper.clone().map(Arc::new),
    );
    let mut buf = Buffers::new(space, basis, &input.xi);
    Sweep {
        space,
        basis,
        input,
        driver: &driver,
        rule: Rule::Penalize { n, m },
    }
    .run(0, space.steps(), &mut buf)?;
    let sol = assemble(space, buf)?;
    Ok(PenalizedSolution {
        y: sol.y,
        z: sol.z,
        m: sol.m,
        k: sol.r.plus,
        a: sol.r.minus,
    })
}

/// `f(t_k, Y_k, Z_k)` along a solution for `k < N`; the row at `N` is zero.
/// Constant on atoms of `F_k`.
pub fn driver_along(space: &FilteredSpace, basis: &MartingaleBasis, generator: &Generator, sol: &Solution) -> AdaptedProcess {
    let n = space.steps();
    AdaptedProcess::from_atoms(space, |k, a| {
        if k == n {
            return 0.0;
        }
        let dens = basis.densities(k, a);
        let w0 = space.representative(k, a);
        let at = Point {
            step: k,
            time: space.time(k),
            dt: space.dt(k),
            outcome: w0,
            atom: a,
            densities: &dens,
        };
        generator.eval(&at, sol.y.at(k, w0), sol.z.get(k, a))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::counterexample_space;

    fn counterexample_input(space: &FilteredSpace) -> RbsdeInput {
        let lower = AdaptedProcess::new(space, vec![vec![2.0; 2], vec![0.0; 2], vec![0.0; 2]]).unwrap();
        RbsdeInput::new(space, vec![5.0, 1.0], Generator::zero()).with_lower(lower)
    }

    #[test]
    fn counterexample_value() {
        let s = counterexample_space();
        let b = MartingaleBasis::build(&s);
        let sol = solve_reflected(&s, &b, &counterexample_input(&s)).unwrap();
        assert_eq!(sol.y.rows(), &[vec![3.0, 3.0], vec![5.0, 1.0], vec![5.0, 1.0]]);
        assert!(sol.k().rows().iter().flatten().all(|&v| v == 0.0));
        assert_eq!(sol.m.rows(), &[vec![0.0, 0.0], vec![2.0, -2.0], vec![2.0, -2.0]]);
    }

    #[test]
    fn one_step_penalized_closed_form() {
        // y = n (1 - y): y = n / (1 + n)
        let s = FilteredSpace::tree(vec![0.0, 1.0], |_, _| vec![0.5, 0.5]).unwrap();
        let b = MartingaleBasis::build(&s);
        let lower = AdaptedProcess::constant(&s, 1.0);
        let input = RbsdeInput::new(&s, vec![1.0, -1.0], Generator::zero()).with_lower(lower);
        for n in [1.0, 3.0, 1000.0] {
            let p = solve_penalized(&s, &b, &input, n, 0.0).unwrap();
            assert!((p.y.at(0, 0) - n / (1.0 + n)).abs() < 1e-15);
            assert!((p.k.at(1, 0) - n * (1.0 - n / (1.0 + n))).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_penalty_is_unreflected() {
        let s = counterexample_space();
        let b = MartingaleBasis::build(&s);
        let input = counterexample_input(&s).with_generator(Generator::linear(-0.5, 0.1));
        let p = solve_penalized(&s, &b, &input, 0.0, 0.0).unwrap();
        let mut free = input.clone();
        free.lower = None;
        let u = solve_reflected(&s, &b, &free).unwrap();
        assert_eq!(p.y, u.y);
        assert!(p.k.rows().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn large_penalty_on_counterexample() {
        let s = counterexample_space();
        let b = MartingaleBasis::build(&s);
        let p = solve_penalized(&s, &b, &counterexample_input(&s), 1e6, 0.0).unwrap();
        assert!((p.y.at(0, 0) - 3.0).abs() < 1e-5);
    }

    #[test]
    fn barrier_crossing_is_rejected() {
        let s = counterexample_space();
        let b = MartingaleBasis::build(&s);
        let input = counterexample_input(&s).with_upper(AdaptedProcess::constant(&s, 1.0));
        assert!(matches!(
            solve_reflected(&s, &b, &input),
            Err(Error::BarrierCrossing { step: 0, .. })
        ));
    }

    #[test]
    fn upper_barrier_pushes_down() {
        let s = counterexample_space();
        let b = MartingaleBasis::build(&s);
        let upper = AdaptedProcess::new(&s, vec![vec![2.5; 2], vec![4.0; 2], vec![9.0; 2]]).unwrap();
        let input = counterexample_input(&s).with_upper(upper);
        let sol = solve_reflected(&s, &b, &input).unwrap();
        // step 1: Y = min(xi, 4); step 0: clamp(E = 2.5, 2, 2.5) = 2.5
        assert_eq!(sol.y.step(1), &[4.0, 1.0]);
        assert_eq!(sol.y.step(0), &[2.5, 2.5]);
        assert_eq!(sol.r_minus().at(2, 0), 1.0);
        assert_eq!(sol.r_minus().at(2, 1), 0.0);
    }
}
