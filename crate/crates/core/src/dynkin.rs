//! Dynkin games for the two-barrier problem.
//!
//! The maximizer stops with `tau` and collects `L`, the minimizer stops with
//! `sigma` and pays `U`; both accrue the running reward `f(t, Y, Z) dt + dV`
//! evaluated along the solved `Y`. Ties `tau = sigma < N` pay `L`.
//! Game values are computed by backward induction and by exhaustive
//! sup-inf / inf-sup over stopping-time pairs, evaluated independently.

use crate::error::{Error, Result};
use crate::filtration::{FilteredSpace, StoppingTime};
use crate::martrep::MartingaleBasis;
use crate::process::AdaptedProcess;
use crate::rbsde::{driver_along, RbsdeInput, Solution};

/// Payoff data of the game started at grid index `start`.
#[derive(Clone, Debug)]
pub struct GamePayoff {
    pub start: usize,
    /// `run[k][w] = f(t_k, Y_k, Z_k) dt_k + dV_{k+1}` for `k < N`.
    run: Vec<Vec<f64>>,
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
    xi: Vec<f64>,
}

impl GamePayoff {
    /// Missing barriers become `-inf` / `+inf`, so the corresponding player
    /// never stops before the horizon.
    pub fn new(space: &FilteredSpace, basis: &MartingaleBasis, input: &RbsdeInput, sol: &Solution, start: usize) -> Result<Self> {
        let n = space.steps();
        if start > n {
            return Err(Error::IndexOutOfRange {
                what: "start index",
                index: start,
                limit: n,
            });
        }
        let f = driver_along(space, basis, &input.generator, sol);
        let run = (0..n)
            .map(|k| {
                let dv = input.v.increment(k + 1);
                (0..space.n_outcomes())
                    .map(|w| f.at(k, w) * space.dt(k) + dv[w])
                    .collect()
            })
            .collect();
        let barrier = |b: &Option<AdaptedProcess>, fill: f64| match b {
            Some(p) => p.rows().to_vec(),
            None => vec![vec![fill; space.n_outcomes()]; n + 1],
        };
        Ok(Self {
            start,
            run,
            lower: barrier(&input.lower, f64::NEG_INFINITY),
            upper: barrier(&input.upper, f64::INFINITY),
            xi: input.xi.clone(),
        })
    }

    fn horizon(&self) -> usize {
        self.run.len()
    }

    fn pay_at(&self, w: usize, s: usize, t: usize) -> f64 {
        let n = self.horizon();
        let stop = s.min(t);
        let running: f64 = (self.start..stop).map(|k| self.run[k][w]).sum();
        let terminal = if stop == n {
            self.xi[w]
        } else if t <= s {
            self.lower[t][w]
        } else {
            self.upper[s][w]
        };
        running + terminal
    }

    /// Pathwise payoff for the minimizer's `sigma` and the maximizer's `tau`
    /// (both clamped below at `start`).
    pub fn payoff(&self, sigma: &StoppingTime, tau: &StoppingTime) -> Vec<f64> {
        (0..self.xi.len())
            .map(|w| self.pay_at(w, sigma.at(w).max(self.start), tau.at(w).max(self.start)))
            .collect()
    }
}

/// `W_N = xi`, `W_k = clamp(E[W_{k+1} + dV_{k+1} | F_k] + f(t_k, Y_k, Z_k) dt, L_k, U_k)`.
pub fn game_value_induction(space: &FilteredSpace, gp: &GamePayoff) -> Result<AdaptedProcess> {
    let n = space.steps();
    let mut rows = vec![Vec::new(); n + 1];
    rows[n] = gp.xi.clone();
    for k in (0..n).rev() {
        let next: Vec<f64> = rows[k + 1].iter().zip(&gp.run[k]).map(|(a, b)| a + b).collect();
        let c = space.cond_expect(&next, k)?;
        rows[k] = (0..space.n_outcomes())
            .map(|w| c[w].max(gp.lower[k][w]).min(gp.upper[k][w]))
            .collect();
    }
    AdaptedProcess::new(space, rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameValues {
    /// `sup_tau inf_sigma E[R(sigma, tau) | F_start]` per atom of level `start`.
    pub lower: Vec<f64>,
    /// `inf_sigma sup_tau E[R(sigma, tau) | F_start]`.
    pub upper: Vec<f64>,
    /// The minimizer's `sigma` attaining the upper value and the maximizer's
    /// `tau` attaining the lower value.
    pub sigma: StoppingTime,
    pub tau: StoppingTime,
}

/// Exhaustive sup-inf and inf-sup. Requires `count^2 <= max_count`.
pub fn game_value_enum(space: &FilteredSpace, gp: &GamePayoff, max_count: u128) -> Result<GameValues> {
    let count = space.count_stopping_times(gp.start)?;
    let pairs = count.saturating_mul(count);
    if pairs > max_count {
        return Err(Error::CountExceeded {
            count: pairs,
            limit: max_count,
        });
    }
    let times = space.enumerate_stopping_times(gp.start, count)?;
    let atoms = space.n_atoms(gp.start);
    // means[s][t][atom]
    let means: Vec<Vec<Vec<f64>>> = times
        .iter()
        .map(|s| {
            times
                .iter()
                .map(|t| space.atom_means(&gp.payoff(s, t), gp.start))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    // Per atom, stopping rules on different atoms combine freely, so the
    // extremal rule for each atom can be chosen independently.
    let mut lower = vec![f64::NEG_INFINITY; atoms];
    let mut upper = vec![f64::INFINITY; atoms];
    let mut tau_pick = vec![0usize; atoms];
    let mut sigma_pick = vec![0usize; atoms];
    for ti in 0..times.len() {
        for a in 0..atoms {
            let worst = (0..times.len()).map(|si| means[si][ti][a]).fold(f64::INFINITY, f64::min);
            if worst > lower[a] {
                lower[a] = worst;
                tau_pick[a] = ti;
            }
        }
    }
    for si in 0..times.len() {
        for a in 0..atoms {
            let best = (0..times.len()).map(|ti| means[si][ti][a]).fold(f64::NEG_INFINITY, f64::max);
            if best < upper[a] {
                upper[a] = best;
                sigma_pick[a] = si;
            }
        }
    }
    let glue = |pick: &[usize]| {
        let values = (0..space.n_outcomes())
            .map(|w| times[pick[space.atom_of(gp.start, w)]].at(w))
            .collect();
        StoppingTime::new(space, values)
    };
    Ok(GameValues {
        lower,
        upper,
        sigma: glue(&sigma_pick)?,
        tau: glue(&tau_pick)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::counterexample_space;
    use crate::generator::Generator;
    use crate::rbsde::solve_reflected;

    fn setup(space: &FilteredSpace, input: &RbsdeInput) -> (MartingaleBasis, Solution) {
        let basis = MartingaleBasis::build(space);
        let sol = solve_reflected(space, &basis, input).unwrap();
        (basis, sol)
    }

    #[test]
    fn terminal_and_immediate_payoffs() {
        let s = counterexample_space();
        let lower = AdaptedProcess::from_atoms(&s, |k, _| if k == 0 { 2.0 } else { 0.0 });
        let input = RbsdeInput::new(&s, vec![5.0, 1.0], Generator::zero()).with_lower(lower);
        let (b, sol) = setup(&s, &input);
        let gp = GamePayoff::new(&s, &b, &input, &sol, 0).unwrap();
        let n = StoppingTime::constant(&s, 2);
        let zero = StoppingTime::constant(&s, 0);
        assert_eq!(gp.payoff(&n, &n), vec![5.0, 1.0]);
        assert_eq!(gp.payoff(&n, &zero), vec![2.0, 2.0]);
        // tie at 0 pays L
        assert_eq!(gp.payoff(&zero, &zero), vec![2.0, 2.0]);
    }

    #[test]
    fn counterexample_game_has_value_three() {
        let s = counterexample_space();
        let lower = AdaptedProcess::from_atoms(&s, |k, _| if k == 0 { 2.0 } else { 0.0 });
        let upper = lower.map(|_, _, v| v + 10.0);
        let input = RbsdeInput::new(&s, vec![5.0, 1.0], Generator::zero())
            .with_lower(lower)
            .with_upper(upper);
        let (b, sol) = setup(&s, &input);
        let gp = GamePayoff::new(&s, &b, &input, &sol, 0).unwrap();
        let w = game_value_induction(&s, &gp).unwrap();
        assert_eq!(w.step(0), &[3.0, 3.0]);
        let v = game_value_enum(&s, &gp, 100).unwrap();
        assert_eq!(v.lower, vec![3.0]);
        assert_eq!(v.upper, vec![3.0]);
    }

    #[test]
    fn one_step_without_binding_barrier() {
        let s = FilteredSpace::tree(vec![0.0, 1.0], |_, _| vec![0.25, 0.75]).unwrap();
        let input = RbsdeInput::new(&s, vec![4.0, 0.0], Generator::zero())
            .with_lower(AdaptedProcess::constant(&s, -1.0))
            .with_upper(AdaptedProcess::constant(&s, 2.0));
        let (b, sol) = setup(&s, &input);
        let gp = GamePayoff::new(&s, &b, &input, &sol, 0).unwrap();
        let v = game_value_enum(&s, &gp, 10).unwrap();
        assert_eq!(v.lower, vec![1.0]);
        assert_eq!(v.upper, vec![1.0]);
    }

    #[test]
    fn enumeration_limit_is_enforced() {
        let s = counterexample_space();
        let input = RbsdeInput::new(&s, vec![5.0, 1.0], Generator::zero());
        let (b, sol) = setup(&s, &input);
        let gp = GamePayoff::new(&s, &b, &input, &sol, 0).unwrap();
        assert!(matches!(game_value_enum(&s, &gp, 24), Err(Error::CountExceeded { .. })));
    }
}
