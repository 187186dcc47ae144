//! Snell envelopes and optimal stopping.
//!
//! The value of stopping the reward `L` (with terminal payment `xi` and
//! running gain `dV`) is computed two ways: by backward induction
//! `Y_k = max(L_k, E[Y_{k+1} + dV_{k+1} | F_k])`, and by brute-force
//! maximization over every stopping time. The V-increment enters through its
//! one-step conditional mean.

use crate::error::Result;
use crate::filtration::{FilteredSpace, StoppingTime};
use crate::process::AdaptedProcess;

#[derive(Clone, Debug, PartialEq)]
pub struct SnellProblem {
    pub lower: AdaptedProcess,
    pub xi: Vec<f64>,
    /// Running gain, `V_0 = 0`.
    pub v: AdaptedProcess,
}

impl SnellProblem {
    pub fn new(space: &FilteredSpace, lower: AdaptedProcess, xi: Vec<f64>) -> Self {
        Self {
            lower,
            xi,
            v: AdaptedProcess::zeros(space),
        }
    }

    pub fn with_v(mut self, v: AdaptedProcess) -> Self {
        self.v = v;
        self
    }

    /// Pathwise payoff of stopping at `tau` after starting at `start`.
    pub fn payoff(&self, tau: &StoppingTime, start: usize) -> Vec<f64> {
        let last = self.v.steps();
        (0..self.xi.len())
            .map(|w| {
                let t = tau.at(w).max(start);
                let gain = self.v.at(t, w) - self.v.at(start, w);
                gain + if t < last { self.lower.at(t, w) } else { self.xi[w] }
            })
            .collect()
    }
}

pub fn snell_envelope(space: &FilteredSpace, problem: &SnellProblem) -> Result<AdaptedProcess> {
    space.check_process(&problem.lower)?;
    space.check_process(&problem.v)?;
    let n = space.steps();
    let mut rows = vec![Vec::new(); n + 1];
    rows[n] = problem.xi.clone();
    for k in (0..n).rev() {
        let dv = problem.v.increment(k + 1);
        let next: Vec<f64> = rows[k + 1].iter().zip(&dv).map(|(y, d)| y + d).collect();
        let cont = space.cond_expect(&next, k)?;
        rows[k] = cont
            .iter()
            .zip(problem.lower.step(k))
            .map(|(c, l)| l.max(*c))
            .collect();
    }
    AdaptedProcess::new(space, rows)
}

/// Exhaustive optimal-stopping value from grid index `from`.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleValue {
    /// Maximal conditional expected payoff per atom of level `from`.
    pub values: Vec<f64>,
    /// A stopping time attaining every atom's maximum.
    pub optimal: StoppingTime,
}

impl OracleValue {
    /// Atom values extended to outcomes.
    pub fn on_outcomes(&self, space: &FilteredSpace, from: usize) -> Vec<f64> {
        (0..space.n_outcomes())
            .map(|w| self.values[space.atom_of(from, w)])
            .collect()
    }
}

pub fn snell_oracle(space: &FilteredSpace, problem: &SnellProblem, from: usize, max_count: u128) -> Result<OracleValue> {
    let taus = space.enumerate_stopping_times(from, max_count)?;
    let mut best: Option<(f64, Vec<f64>, &StoppingTime)> = None;
    for tau in &taus {
        let pay = problem.payoff(tau, from);
        let total = space.expectation(&pay);
        if best.as_ref().is_none_or(|(b, _, _)| total > *b) {
            best = Some((total, space.atom_means(&pay, from)?, tau));
        }
    }
    let (_, values, tau) = best.expect("at least one stopping time exists");
    // The maximizer of the total is atom-wise optimal because stopping rules
    // on distinct atoms of F_from combine freely; recompute per atom anyway.
    let mut per_atom = values;
    for tau in &taus {
        let means = space.atom_means(&problem.payoff(tau, from), from)?;
        for (b, m) in per_atom.iter_mut().zip(means) {
            *b = b.max(m);
        }
    }
    Ok(OracleValue {
        values: per_atom,
        optimal: tau.clone(),
    })
}

/// Largest deviation, per outcome and overall.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityViolation {
    pub max: f64,
    pub per_outcome: Vec<f64>,
}

/// `Y_{k-1} = L_{k-1} v (E[Y_k | F_{k-1}] + E[dV_k | F_{k-1}])` for `k >= 1`.
/// Holds exactly for the envelope: it is the recursion itself.
pub fn check_identity_2b(space: &FilteredSpace, problem: &SnellProblem, y: &AdaptedProcess) -> Result<IdentityViolation> {
    let mut per = vec![0.0f64; space.n_outcomes()];
    for k in 1..=space.steps() {
        let py = space.cond_expect(y.step(k), k - 1)?;
        let pv = space.cond_expect(&problem.v.increment(k), k - 1)?;
        for w in 0..space.n_outcomes() {
            let rhs = problem.lower.at(k - 1, w).max(py[w] + pv[w]);
            per[w] = per[w].max((y.at(k - 1, w) - rhs).abs());
        }
    }
    Ok(IdentityViolation {
        max: per.iter().copied().fold(0.0, f64::max),
        per_outcome: per,
    })
}

/// `Y_{k-1} = L_{k-1} v (Y_k + dV_k)` pathwise. Fails when the martingale
/// part of `Y` jumps at a predictable time.
pub fn check_identity_20b(space: &FilteredSpace, problem: &SnellProblem, y: &AdaptedProcess) -> Result<IdentityViolation> {
    space.check_process(y)?;
    let mut per = vec![0.0f64; space.n_outcomes()];
    for k in 1..=space.steps() {
        let dv = problem.v.increment(k);
        for w in 0..space.n_outcomes() {
            let rhs = problem.lower.at(k - 1, w).max(y.at(k, w) + dv[w]);
            per[w] = per[w].max((y.at(k - 1, w) - rhs).abs());
        }
    }
    Ok(IdentityViolation {
        max: per.iter().copied().fold(0.0, f64::max),
        per_outcome: per,
    })
}

/// The stopping problem behind the two-point counterexample: `L = 2` before
/// grid index 1, `L = 0` afterwards, `xi = (5, 1)`.
pub fn counterexample_problem(space: &FilteredSpace) -> SnellProblem {
    let lower = AdaptedProcess::from_atoms(space, |k, _| if k == 0 { 2.0 } else { 0.0 });
    let xi = space
        .ids()
        .iter()
        .map(|id| if id == "w1" { 5.0 } else { 1.0 })
        .collect();
    SnellProblem::new(space, lower, xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::counterexample_space;

    #[test]
    fn counterexample_envelope() {
        let s = counterexample_space();
        let p = counterexample_problem(&s);
        let y = snell_envelope(&s, &p).unwrap();
        assert_eq!(y.rows(), &[vec![3.0, 3.0], vec![5.0, 1.0], vec![5.0, 1.0]]);
        assert_eq!(check_identity_2b(&s, &p, &y).unwrap().max, 0.0);
        let v = check_identity_20b(&s, &p, &y).unwrap();
        assert_eq!(v.per_outcome, vec![2.0, 1.0]);
    }

    #[test]
    fn counterexample_oracle_waits_past_deceptive_reward() {
        let s = counterexample_space();
        let p = counterexample_problem(&s);
        let o = snell_oracle(&s, &p, 0, 100).unwrap();
        assert_eq!(o.values, vec![3.0]);
        assert!(o.optimal.values().iter().all(|&t| t >= 1));
    }

    #[test]
    fn immediate_stop_when_reward_dominates() {
        let s = FilteredSpace::tree(vec![0.0, 1.0], |_, _| vec![0.5, 0.5]).unwrap();
        let lower = AdaptedProcess::from_atoms(&s, |k, _| if k == 0 { 4.0 } else { 0.0 });
        let p = SnellProblem::new(&s, lower, vec![6.0, 0.0]);
        let o = snell_oracle(&s, &p, 0, 10).unwrap();
        assert_eq!(o.values, vec![4.0]);
        assert_eq!(o.optimal, StoppingTime::constant(&s, 0));
    }

    #[test]
    fn low_reward_gives_martingale_closure() {
        let s = FilteredSpace::tree(vec![0.0, 1.0, 2.0], |_, _| vec![0.3, 0.7]).unwrap();
        let xi = vec![1.0, -2.0, 4.0, 0.5];
        let p = SnellProblem::new(&s, AdaptedProcess::constant(&s, -1e9), xi.clone());
        let y = snell_envelope(&s, &p).unwrap();
        for k in 0..=2 {
            let closure = s.cond_expect(&xi, k).unwrap();
            for w in 0..4 {
                assert!((y.at(k, w) - closure[w]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn deterministic_tree_has_no_20b_violation() {
        let s = FilteredSpace::tree(vec![0.0, 1.0, 2.0, 3.0], |_, _| vec![1.0]).unwrap();
        let lower = AdaptedProcess::new(&s, vec![vec![1.0], vec![3.0], vec![0.5], vec![0.0]]).unwrap();
        let v = AdaptedProcess::new(&s, vec![vec![0.0], vec![0.2], vec![-0.1], vec![0.3]]).unwrap();
        let p = SnellProblem::new(&s, lower, vec![1.0]).with_v(v);
        let y = snell_envelope(&s, &p).unwrap();
        assert!(check_identity_20b(&s, &p, &y).unwrap().max < 1e-15);
    }
}
