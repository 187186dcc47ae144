//! Adapted and predictable processes on a finite grid, with the pathwise
//! calculus the solvers and estimates need: increments, brackets, Doob
//! decomposition, Jordan split and the S^p / V^p / M^p norms.
//!
//! Values are stored step-major, `values[k][w]` for grid index `k` and
//! outcome `w`. On a grid there is no continuous bracket: `[X]^c = 0` and all
//! variation is jump variation.

use std::marker::PhantomData;

use crate::error::{Error, Result};
use crate::filtration::FilteredSpace;

/// Supermartingale tolerance on conditional drifts.
pub const SUPERMARTINGALE_TOL: f64 = 1e-12;

/// Measurability class of a process: the partition level its step-`k`
/// values must be constant on.
pub trait Measurability: Copy + Clone + std::fmt::Debug + Default + PartialEq + 'static {
    const NAME: &'static str;
    fn level(step: usize) -> usize;
}

/// `X_k` is `F_k`-measurable.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Adapted;

/// `X_k` is `F_{k-1}`-measurable for `k >= 1` (and `F_0`-measurable at 0).
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Predictable;

impl Measurability for Adapted {
    const NAME: &'static str = "adapted";
    fn level(step: usize) -> usize {
        step
    }
}

impl Measurability for Predictable {
    const NAME: &'static str = "predictable";
    fn level(step: usize) -> usize {
        step.saturating_sub(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Process<K> {
    values: Vec<Vec<f64>>,
    kind: PhantomData<K>,
}

pub type AdaptedProcess = Process<Adapted>;
pub type PredictableProcess = Process<Predictable>;

impl<K: Measurability> Process<K> {
    /// Validates shape and measurability. Values inside an atom must agree to
    /// a relative 1e-12.
    pub fn new(space: &FilteredSpace, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != space.steps() + 1 {
            return Err(Error::Shape(format!(
                "{} rows for {} grid points",
                values.len(),
                space.steps() + 1
            )));
        }
        for (k, row) in values.iter().enumerate() {
            if row.len() != space.n_outcomes() {
                return Err(Error::Shape(format!(
                    "row {k} has {} values for {} outcomes",
                    row.len(),
                    space.n_outcomes()
                )));
            }
            let level = K::level(k);
            for members in space.atoms(level) {
                let v0 = row[members[0]];
                for &w in &members[1..] {
                    if (row[w] - v0).abs() > 1e-12 * (1.0 + v0.abs()) {
                        return Err(Error::NotMeasurable {
                            kind: K::NAME,
                            step: k,
                            outcome: w,
                        });
                    }
                }
            }
        }
        Ok(Self {
            values,
            kind: PhantomData,
        })
    }

    /// Builds a process from a per-(step, atom) function; `atom` refers to
    /// the partition level `K::level(step)`.
    pub fn from_atoms(space: &FilteredSpace, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = (0..=space.steps())
            .map(|k| {
                let level = K::level(k);
                let per_atom: Vec<f64> = (0..space.n_atoms(level)).map(|a| f(k, a)).collect();
                (0..space.n_outcomes())
                    .map(|w| per_atom[space.atom_of(level, w)])
                    .collect()
            })
            .collect();
        Self {
            values,
            kind: PhantomData,
        }
    }

    pub fn zeros(space: &FilteredSpace) -> Self {
        Self::constant(space, 0.0)
    }

    pub fn constant(space: &FilteredSpace, c: f64) -> Self {
        Self {
            values: vec![vec![c; space.n_outcomes()]; space.steps() + 1],
            kind: PhantomData,
        }
    }

    /// Grid steps `N` (rows minus one).
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn at(&self, k: usize, w: usize) -> f64 {
        self.values[k][w]
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn terminal(&self) -> &[f64] {
        &self.values[self.steps()]
    }

    /// `X_k - X_{k-1}` per outcome (`k >= 1`).
    pub fn increment(&self, k: usize) -> Vec<f64> {
        self.values[k]
            .iter()
            .zip(&self.values[k - 1])
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn map(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, row)| row.iter().enumerate().map(|(w, &v)| f(k, w, v)).collect())
            .collect();
        Self {
            values,
            kind: PhantomData,
        }
    }

    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        Self {
            values,
            kind: PhantomData,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_rows_unchecked(values: Vec<Vec<f64>>) -> Self {
        Self {
            values,
            kind: PhantomData,
        }
    }
}

impl PredictableProcess {
    /// Every predictable process is adapted.
    pub fn to_adapted(&self) -> AdaptedProcess {
        Process::from_rows_unchecked(self.values.clone())
    }
}

/// Doob decomposition `S = S_0 - K + M` of a supermartingale.
#[derive(Clone, Debug, PartialEq)]
pub struct DoobDecomposition {
    /// Predictable increasing compensator, `K_0 = 0`.
    pub compensator: PredictableProcess,
    /// Martingale part, `M_0 = 0`.
    pub martingale: AdaptedProcess,
    /// `E K_N - (E S_0 - E S_N)`; zero up to rounding.
    pub expectation_gap: f64,
}

pub fn doob_decomposition(space: &FilteredSpace, s: &AdaptedProcess) -> Result<DoobDecomposition> {
    space.check_process(s)?;
    let n = space.n_outcomes();
    let mut k_rows = vec![vec![0.0; n]];
    for k in 0..space.steps() {
        let drift = space.atom_means(s.step(k + 1), k)?;
        let mut row = k_rows[k].clone();
        for a in 0..space.n_atoms(k) {
            let sk = s.at(k, space.representative(k, a));
            let dk = sk - drift[a];
            if dk < -SUPERMARTINGALE_TOL * (1.0 + sk.abs()) {
                return Err(Error::NotSupermartingale {
                    step: k,
                    atom: a,
                    excess: -dk,
                });
            }
            for &w in space.atom(k, a) {
                row[w] += dk.max(0.0);
            }
        }
        k_rows.push(row);
    }
    let compensator = PredictableProcess::from_rows_unchecked(k_rows);
    let martingale = AdaptedProcess::from_rows_unchecked(
        (0..=space.steps())
            .map(|k| {
                (0..n)
                    .map(|w| s.at(k, w) - s.at(0, w) + compensator.at(k, w))
                    .collect()
            })
            .collect(),
    );
    let expectation_gap = space.expectation(compensator.terminal())
        - (space.expectation(s.step(0)) - space.expectation(s.terminal()));
    Ok(DoobDecomposition {
        compensator,
        martingale,
        expectation_gap,
    })
}

/// Largest `|E[X_{k+1} - X_k | F_k]|` over steps and atoms.
pub fn martingale_defect(space: &FilteredSpace, x: &AdaptedProcess) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..space.steps() {
        let inc = x.increment(k + 1);
        if let Ok(means) = space.atom_means(&inc, k) {
            worst = means.iter().fold(worst, |m, v| m.max(v.abs()));
        }
    }
    worst
}

/// Minimal split of a signed finite-variation process, `R = plus - minus`.
#[derive(Clone, Debug, PartialEq)]
pub struct FvDecomposition {
    pub plus: PredictableProcess,
    pub minus: PredictableProcess,
}

impl FvDecomposition {
    pub fn zeros(space: &FilteredSpace) -> Self {
        Self {
            plus: PredictableProcess::zeros(space),
            minus: PredictableProcess::zeros(space),
        }
    }

    /// Signed process `plus - minus`.
    pub fn net(&self) -> PredictableProcess {
        self.plus.zip_with(&self.minus, |a, b| a - b)
    }

    /// Total variation `plus_N + minus_N` per outcome.
    pub fn variation(&self) -> Vec<f64> {
        self.plus
            .terminal()
            .iter()
            .zip(self.minus.terminal())
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Per-step sign split of the increments of `R` (`R_0 = 0`).
pub fn jordan_split(space: &FilteredSpace, r: &PredictableProcess) -> Result<FvDecomposition> {
    space.check_process(r)?;
    if r.step(0).iter().any(|&v| v != 0.0) {
        return Err(Error::InvalidArgument("Jordan split needs R_0 = 0".into()));
    }
    let n = space.n_outcomes();
    let mut plus = vec![vec![0.0; n]];
    let mut minus = vec![vec![0.0; n]];
    for k in 1..=space.steps() {
        let inc = r.increment(k);
        plus.push(plus[k - 1].iter().zip(&inc).map(|(p, d)| p + d.max(0.0)).collect());
        minus.push(minus[k - 1].iter().zip(&inc).map(|(m, d)| m + (-d).max(0.0)).collect());
    }
    Ok(FvDecomposition {
        plus: PredictableProcess::from_rows_unchecked(plus),
        minus: PredictableProcess::from_rows_unchecked(minus),
    })
}

/// Pathwise bracket `[X]_k = sum_{j <= k} (dX_j)^2`.
pub fn quadratic_variation<K: Measurability>(space: &FilteredSpace, x: &Process<K>) -> Result<AdaptedProcess> {
    space.check_process(x)?;
    let n = space.n_outcomes();
    let mut rows = vec![vec![0.0; n]];
    for k in 1..=space.steps() {
        let inc = x.increment(k);
        rows.push(rows[k - 1].iter().zip(&inc).map(|(q, d)| q + d * d).collect());
    }
    Ok(AdaptedProcess::from_rows_unchecked(rows))
}

/// Pathwise total variation `sum_k |dX_k|`.
pub fn variation<K: Measurability>(x: &Process<K>) -> Vec<f64> {
    let n = x.step(0).len();
    (0..n)
        .map(|w| (1..=x.steps()).map(|k| (x.at(k, w) - x.at(k - 1, w)).abs()).sum())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    /// `E sup_k |X_k|^p`
    pub sup_p: f64,
    /// `E (sum_k |dX_k|)^p`
    pub var_p: f64,
    /// `E [X]_N^{p/2}`
    pub bracket_p: f64,
}

pub fn norms<K: Measurability>(space: &FilteredSpace, x: &Process<K>, p: f64) -> Result<Norms> {
    if !(p > 0.0 && p <= 2.0) {
        return Err(Error::InvalidArgument(format!("norm exponent {p} outside (0, 2]")));
    }
    space.check_process(x)?;
    let sup: Vec<f64> = (0..space.n_outcomes())
        .map(|w| {
            (0..=space.steps())
                .map(|k| x.at(k, w).abs())
                .fold(0.0, f64::max)
                .powf(p)
        })
        .collect();
    let var: Vec<f64> = variation(x).into_iter().map(|v| v.powf(p)).collect();
    let qv = quadratic_variation(space, x)?;
    let br: Vec<f64> = qv.terminal().iter().map(|v| v.powf(p / 2.0)).collect();
    Ok(Norms {
        sup_p: space.expectation(&sup),
        var_p: space.expectation(&var),
        bracket_p: space.expectation(&br),
    })
}
