use serde::Serialize;

use super::{RbsdeInput, Solution};
use crate::filtration::FilteredSpace;
use crate::generator::Point;
use crate::martrep::MartingaleBasis;
use crate::process::{martingale_defect, PredictableProcess};

/// Worst-case defects of a solution; every field should be at rounding level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct InvariantReport {
    /// Pathwise residual of the discrete equation.
    pub residual: f64,
    /// `|Y_N - xi|`.
    pub terminal: f64,
    /// Largest barrier violation before `N`.
    pub barrier: f64,
    /// `(Y_k - L_k) dR+_{k+1}` and `(U_k - Y_k) dR-_{k+1}`.
    pub minimality: f64,
    /// Same products with `L` replaced by `Y ^ U` (and `U` by `Y v L`).
    pub minimality_alt: f64,
    /// `dR+ dR-`.
    pub orthogonality: f64,
    /// Conditional drift of `M`, plus `|M_0|`.
    pub martingale: f64,
    /// `sum_i Z^i dM^i` against `dM`.
    pub z_reconstruction: f64,
    /// Negative increments of `R+` or `R-`, or failed predictability.
    pub monotone_r: f64,
}

impl InvariantReport {
    pub fn max(&self) -> f64 {
        [
            self.residual,
            self.terminal,
            self.barrier,
            self.minimality,
            self.minimality_alt,
            self.orthogonality,
            self.martingale,
            self.z_reconstruction,
            self.monotone_r,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn verify_solution(space: &FilteredSpace, basis: &MartingaleBasis, input: &RbsdeInput, sol: &Solution) -> InvariantReport {
    let mut rep = InvariantReport::default();
    let n = space.steps();
    let (plus, minus) = (&sol.r.plus, &sol.r.minus);

    for k in 0..n {
        let dv = input.v.increment(k + 1);
        let dmart = sol.m.increment(k + 1);
        for a in 0..space.n_atoms(k) {
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
            let z = sol.z.get(k, a);
            let yk = sol.y.at(k, w0);
            let fk = input.generator.eval(&at, yk, z);
            let dp = plus.at(k + 1, w0) - plus.at(k, w0);
            let dmn = minus.at(k + 1, w0) - minus.at(k, w0);
            rep.monotone_r = rep.monotone_r.max((-dp).max(0.0)).max((-dmn).max(0.0));
            rep.orthogonality = rep.orthogonality.max((dp * dmn).abs());
            for &w in space.atom(k, a) {
                let rhs = sol.y.at(k + 1, w) + fk * at.dt + dv[w] + dp - dmn - dmart[w];
                rep.residual = rep.residual.max((sol.y.at(k, w) - rhs).abs());
            }
            if let Some(l) = input.lower_at(k, w0) {
                rep.barrier = rep.barrier.max(l - yk);
                rep.minimality = rep.minimality.max(((yk - l) * dp).abs());
                let lhat = input.upper_at(k, w0).map_or(yk, |u| yk.min(u));
                rep.minimality_alt = rep.minimality_alt.max(((yk - lhat) * dp).abs());
            }
            if let Some(u) = input.upper_at(k, w0) {
                rep.barrier = rep.barrier.max(yk - u);
                rep.minimality = rep.minimality.max(((u - yk) * dmn).abs());
                let uhat = input.lower_at(k, w0).map_or(yk, |l| yk.max(l));
                rep.minimality_alt = rep.minimality_alt.max(((uhat - yk) * dmn).abs());
            }
        }
    }
    rep.barrier = rep.barrier.max(0.0);
    rep.terminal = sol
        .y
        .terminal()
        .iter()
        .zip(&input.xi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    rep.martingale = martingale_defect(space, &sol.m).max(sol.m.step(0).iter().fold(0.0, |m, v| m.max(v.abs())));
    rep.z_reconstruction = basis.reconstruction_error(space, &sol.m, &sol.z);
    for r in [plus, minus] {
        if PredictableProcess::new(space, r.rows().to_vec()).is_err() {
            rep.monotone_r = f64::INFINITY;
        }
    }
    rep
}
