use serde::Serialize;

use super::{solve_penalized, solve_reflected, RbsdeInput};
use crate::error::{Error, Result};
use crate::filtration::FilteredSpace;
use crate::martrep::MartingaleBasis;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: f64,
    pub m: f64,
    /// `max |Y^{n,m} - Y|` over the grid.
    pub max_err_y: f64,
    /// `|E K^n_N - E R+_N|`.
    pub k_gap: f64,
    /// `|E A^{n,m}_N - E R-_N|`.
    pub a_gap: f64,
    /// `Y^{n', m} >= Y^{n, m}` for the next penalty `n' > n`.
    pub monotone_in_n: bool,
    /// `Y^{n, m'} <= Y^{n, m}` for the next penalty `m' > m`.
    pub monotone_in_m: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn last(&self) -> &ConvergenceRow {
        self.rows.last().expect("sweep report is never empty")
    }

    /// Whether `max_err_y` strictly decreases from row `from` on.
    pub fn strictly_decreasing_from(&self, from: usize) -> bool {
        self.rows[from.min(self.rows.len())..]
            .windows(2)
            .all(|w| w[1].max_err_y < w[0].max_err_y)
    }

    pub fn monotone(&self) -> bool {
        self.rows.iter().all(|r| r.monotone_in_n && r.monotone_in_m)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["n", "m", "max_err_y", "k_gap", "a_gap", "monotone_in_n", "monotone_in_m"])?;
        for r in &self.rows {
            w.write_record([
                crate::report::fmt_f64(r.n),
                crate::report::fmt_f64(r.m),
                crate::report::fmt_f64(r.max_err_y),
                crate::report::fmt_f64(r.k_gap),
                crate::report::fmt_f64(r.a_gap),
                r.monotone_in_n.to_string(),
                r.monotone_in_m.to_string(),
            ])?;
        }
        crate::report::finish_csv(w)
    }
}

/// Runs the penalized scheme along `schedule` and compares it with the
/// reflected solution. Monotonicity in `n` (resp. `m`) is checked against
/// the next rung's `n` (resp. `m`), or twice the value at the last rung.
pub fn penalization_sweep(
    space: &FilteredSpace,
    basis: &MartingaleBasis,
    input: &RbsdeInput,
    schedule: &[(f64, f64)],
) -> Result<ConvergenceReport> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty penalty schedule".into()));
    }
    if schedule.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
        return Err(Error::InvalidArgument("penalty schedule must be nondecreasing".into()));
    }
    let exact = solve_reflected(space, basis, input)?;
    let e_plus = space.expectation(exact.r.plus.terminal());
    let e_minus = space.expectation(exact.r.minus.terminal());
    let has_lower = input.lower.is_some();
    let has_upper = input.upper.is_some();

    let mut rows = Vec::with_capacity(schedule.len());
    for (j, &(n, m)) in schedule.iter().enumerate() {
        let pen = solve_penalized(space, basis, input, n, m)?;
        let (n_next, m_next) = schedule
            .get(j + 1)
            .copied()
            .filter(|&(a, b)| a > n && b > m)
            .unwrap_or((2.0 * n.max(1.0), 2.0 * m.max(1.0)));
        let slack = |a: f64, b: f64| 1e-12 * (1.0 + a.abs().max(b.abs()));
        let monotone_in_n = !has_lower || {
            let up = solve_penalized(space, basis, input, n_next, m)?;
            up.y.rows()
                .iter()
                .flatten()
                .zip(pen.y.rows().iter().flatten())
                .all(|(a, b)| *a >= b - slack(*a, *b))
        };
        let monotone_in_m = !has_upper || {
            let down = solve_penalized(space, basis, input, n, m_next)?;
            down.y
                .rows()
                .iter()
                .flatten()
                .zip(pen.y.rows().iter().flatten())
                .all(|(a, b)| *a <= b + slack(*a, *b))
        };
        rows.push(ConvergenceRow {
            n,
            m,
            max_err_y: pen.y.max_abs_diff(&exact.y),
            k_gap: (space.expectation(pen.k.terminal()) - e_plus).abs(),
            a_gap: (space.expectation(pen.a.terminal()) - e_minus).abs(),
            monotone_in_n,
            monotone_in_m,
        });
    }
    Ok(ConvergenceReport { rows })
}

/// `[(2^j, 2^j)]` for `j` in `from..=to`.
pub fn dyadic_schedule(from: u32, to: u32) -> Vec<(f64, f64)> {
    (from..=to).map(|j| (2f64.powi(j as i32), 2f64.powi(j as i32))).collect()
}
