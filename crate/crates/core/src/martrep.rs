//! Orthogonal martingale basis and martingale representation.
//!
//! For each step `k` and atom `A` of `F_k` with `m` children, the space of
//! zero-conditional-mean functions on the children has dimension `m - 1`.
//! We orthogonalize the seeds `e_j - e_{j+1}` (child indicators in child
//! order) against the constants and against each other under the inner
//! product `<u, v> = sum_c p(c | A) u_c v_c`. The raw Gram-Schmidt scale is
//! kept; no normalization is applied.
//!
//! The global martingale `M^i` moves by the atom-local `i`-th vector wherever
//! the atom has dimension `>= i` and is flat elsewhere. Bracket increments
//! are the conditional second moments of the increments, and the densities
//! spread them uniformly over the step: `m^i_k = d<M^i>_{k+1} / dt_k`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::filtration::FilteredSpace;
use crate::process::AdaptedProcess;

/// Zero-mean and orthogonality tolerance for the atom-local vectors.
pub const BASIS_TOL: f64 = 1e-12;

/// Basis vectors attached to one atom.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomBasis {
    /// Conditional probabilities of the children.
    pub child_probs: Vec<f64>,
    /// `vectors[i][c]`: increment of `M^{i+1}` on child `c`.
    pub vectors: Vec<Vec<f64>>,
    /// `d<M^{i+1}>` over the step.
    pub brackets: Vec<f64>,
    /// `brackets[i] / dt`.
    pub densities: Vec<f64>,
}

impl AtomBasis {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleBasis {
    basis_count: usize,
    /// `atoms[k][a]` for `k < N`.
    atoms: Vec<Vec<AtomBasis>>,
}

/// Representation coefficients: one vector of length `d*` per `(k, atom)`,
/// `k < N`. Entries beyond the atom's dimension are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ZCoefficients {
    values: Vec<Vec<Vec<f64>>>,
}

impl ZCoefficients {
    pub fn zeros(space: &FilteredSpace, basis_count: usize) -> Self {
        Self {
            values: (0..space.steps())
                .map(|k| vec![vec![0.0; basis_count]; space.n_atoms(k)])
                .collect(),
        }
    }

    pub fn get(&self, k: usize, atom: usize) -> &[f64] {
        &self.values[k][atom]
    }

    pub fn set(&mut self, k: usize, atom: usize, z: Vec<f64>) {
        self.values[k][atom] = z;
    }

    pub fn at_outcome(&self, space: &FilteredSpace, k: usize, w: usize) -> &[f64] {
        &self.values[k][space.atom_of(k, w)]
    }

    pub fn steps(&self) -> usize {
        self.values.len()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(la, lb)| {
                    la.iter()
                        .zip(lb)
                        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|l| l.iter().map(|z| z.iter().map(|v| v * c).collect()).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn inner(q: &[f64], u: &[f64], v: &[f64]) -> f64 {
    q.iter().zip(u).zip(v).map(|((q, a), b)| q * a * b).sum()
}

fn orthogonal_zero_mean(q: &[f64]) -> Vec<Vec<f64>> {
    let m = q.len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(m.saturating_sub(1));
    for j in 0..m.saturating_sub(1) {
        let mut v = vec![0.0; m];
        v[j] = 1.0;
        v[j + 1] = -1.0;
        let mean = inner(q, &v, &vec![1.0; m]);
        v.iter_mut().for_each(|x| *x -= mean);
        // Two passes of modified Gram-Schmidt for stability.
        for _ in 0..2 {
            for u in &out {
                let c = inner(q, &v, u) / inner(q, u, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
            let mean = inner(q, &v, &vec![1.0; m]);
            v.iter_mut().for_each(|x| *x -= mean);
        }
        out.push(v);
    }
    out
}

impl MartingaleBasis {
    pub fn build(space: &FilteredSpace) -> Self {
        let atoms: Vec<Vec<AtomBasis>> = (0..space.steps())
            .map(|k| {
                let dt = space.dt(k);
                (0..space.n_atoms(k))
                    .map(|a| {
                        let q = space.child_probs(k, a);
                        let vectors = orthogonal_zero_mean(&q);
                        let brackets: Vec<f64> = vectors.iter().map(|v| inner(&q, v, v)).collect();
                        let densities = brackets.iter().map(|b| b / dt).collect();
                        AtomBasis {
                            child_probs: q,
                            vectors,
                            brackets,
                            densities,
                        }
                    })
                    .collect()
            })
            .collect();
        let basis_count = atoms.iter().flatten().map(AtomBasis::dim).max().unwrap_or(0);
        Self { basis_count, atoms }
    }

    /// `d* = max (children - 1)` over steps and atoms.
    pub fn basis_count(&self) -> usize {
        self.basis_count
    }

    pub fn atom(&self, k: usize, a: usize) -> &AtomBasis {
        &self.atoms[k][a]
    }

    /// Densities `m^i_k` on atom `a`, padded with zeros to length `d*`.
    pub fn densities(&self, k: usize, a: usize) -> Vec<f64> {
        let mut d = self.atoms[k][a].densities.clone();
        d.resize(self.basis_count, 0.0);
        d
    }

    /// `dM^i_{k+1}(w)` for basis index `i` (zero-based).
    pub fn increment(&self, space: &FilteredSpace, i: usize, k: usize, w: usize) -> f64 {
        let a = space.atom_of(k, w);
        self.atoms[k][a]
            .vectors
            .get(i)
            .map_or(0.0, |v| v[space.child_position(k, w)])
    }

    /// The global martingale `M^i` (zero-based `i`), `M^i_0 = 0`.
    pub fn martingale(&self, space: &FilteredSpace, i: usize) -> AdaptedProcess {
        let n = space.n_outcomes();
        let mut rows = vec![vec![0.0; n]];
        for k in 0..space.steps() {
            let row = (0..n).map(|w| rows[k][w] + self.increment(space, i, k, w)).collect();
            rows.push(row);
        }
        AdaptedProcess::new(space, rows).expect("basis martingales are adapted")
    }

    /// Coefficients of a centred random variable on the children of atom `a`:
    /// `z^i = E[x dM^i | A] / d<M^i>`.
    pub fn coefficients(&self, k: usize, a: usize, centred: &[f64]) -> Vec<f64> {
        let ab = &self.atoms[k][a];
        let mut z = vec![0.0; self.basis_count];
        for (i, v) in ab.vectors.iter().enumerate() {
            if ab.brackets[i] > 0.0 {
                z[i] = inner(&ab.child_probs, centred, v) / ab.brackets[i];
            }
        }
        z
    }

    /// `sum_i z^i dM^i` on each child of atom `a`.
    pub fn synthesize(&self, k: usize, a: usize, z: &[f64]) -> Vec<f64> {
        let ab = &self.atoms[k][a];
        let mut x = vec![0.0; ab.child_probs.len()];
        for (v, zi) in ab.vectors.iter().zip(z) {
            x.iter_mut().zip(v).for_each(|(acc, vi)| *acc += zi * vi);
        }
        x
    }

    /// Represents a martingale `M` as `sum_i Z^i dM^i`.
    pub fn represent(&self, space: &FilteredSpace, m: &AdaptedProcess) -> Result<ZCoefficients> {
        space.check_process(m)?;
        let scale = m.rows().iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
        let mut z = ZCoefficients::zeros(space, self.basis_count);
        for k in 0..space.steps() {
            for a in 0..space.n_atoms(k) {
                let w0 = space.representative(k, a);
                let inc: Vec<f64> = space
                    .children(k, a)
                    .iter()
                    .map(|&b| m.at(k + 1, space.representative(k + 1, b)) - m.at(k, w0))
                    .collect();
                let drift = inner(&self.atoms[k][a].child_probs, &inc, &vec![1.0; inc.len()]);
                if drift.abs() > 1e-10 * (1.0 + scale) {
                    return Err(Error::NotMartingale { step: k, atom: a, drift });
                }
                z.set(k, a, self.coefficients(k, a, &inc));
            }
        }
        Ok(z)
    }

    /// Largest pathwise error of `sum_i Z^i dM^i` against `dM`.
    pub fn reconstruction_error(&self, space: &FilteredSpace, m: &AdaptedProcess, z: &ZCoefficients) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..space.steps() {
            for a in 0..space.n_atoms(k) {
                let w0 = space.representative(k, a);
                let synth = self.synthesize(k, a, z.get(k, a));
                for (c, &b) in space.children(k, a).iter().enumerate() {
                    let actual = m.at(k + 1, space.representative(k + 1, b)) - m.at(k, w0);
                    worst = worst.max((actual - synth[c]).abs());
                }
            }
        }
        worst
    }

    /// `||z||_{M_t} = sqrt(sum_i |z^i|^2 m^i_k(atom))`.
    pub fn m_norm(&self, k: usize, a: usize, z: &[f64]) -> f64 {
        self.atoms[k][a]
            .densities
            .iter()
            .zip(z)
            .map(|(m, zi)| zi * zi * m)
            .sum::<f64>()
            .sqrt()
    }

    /// `E (sum_k sum_i |z^i_k|^2 d<M^i>_{k+1})^{p/2}`.
    pub fn mp_norm(&self, space: &FilteredSpace, z: &ZCoefficients, p: f64) -> Result<f64> {
        if !(1.0..=2.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("M^p exponent {p} outside [1, 2]")));
        }
        Ok(self.mp_norm_window(space, z, p, 0..space.steps()))
    }

    pub(crate) fn mp_norm_window(&self, space: &FilteredSpace, z: &ZCoefficients, p: f64, steps: std::ops::Range<usize>) -> f64 {
        let per_outcome: Vec<f64> = (0..space.n_outcomes())
            .map(|w| {
                steps
                    .clone()
                    .map(|k| {
                        let a = space.atom_of(k, w);
                        let ab = &self.atoms[k][a];
                        ab.brackets
                            .iter()
                            .zip(z.get(k, a))
                            .map(|(b, zi)| zi * zi * b)
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    .powf(p / 2.0)
            })
            .collect();
        space.expectation(&per_outcome)
    }

    /// Worst zero-mean and orthogonality defects over all atoms.
    pub fn orthogonality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for ab in self.atoms.iter().flatten() {
            let ones = vec![1.0; ab.child_probs.len()];
            for (i, u) in ab.vectors.iter().enumerate() {
                worst = worst.max(inner(&ab.child_probs, u, &ones).abs());
                for v in &ab.vectors[i + 1..] {
                    worst = worst.max(inner(&ab.child_probs, u, v).abs());
                }
            }
        }
        worst
    }

    /// Plain-text dump of vectors, brackets and densities, for debugging.
    pub fn dump(&self, space: &FilteredSpace) -> String {
        let mut out = format!("basis d* = {}\n", self.basis_count);
        for (k, level) in self.atoms.iter().enumerate() {
            for (a, ab) in level.iter().enumerate() {
                let ids: Vec<&str> = space.atom(k, a).iter().map(|&w| space.ids()[w].as_str()).collect();
                let _ = writeln!(out, "step {k} atom {a} [{}] dim {}", ids.join(","), ab.dim());
                for (i, v) in ab.vectors.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "  M{} incr {:?} bracket {:e} density {:e}",
                        i + 1,
                        v,
                        ab.brackets[i],
                        ab.densities[i]
                    );
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::counterexample_space;

    #[test]
    fn binomial_direction_and_bracket() {
        let p = 0.3;
        let s = FilteredSpace::tree(vec![0.0, 0.5], |_, _| vec![p, 1.0 - p]).unwrap();
        let b = MartingaleBasis::build(&s);
        assert_eq!(b.basis_count(), 1);
        let v = &b.atom(0, 0).vectors[0];
        // proportional to (1 - p, -p) with scale 2
        assert!((v[0] - 2.0 * (1.0 - p)).abs() < 1e-15);
        assert!((v[1] + 2.0 * p).abs() < 1e-15);
        assert!((b.atom(0, 0).brackets[0] - p * (1.0 - p) * 4.0).abs() < 1e-15);
        let norm = b.m_norm(0, 0, &[1.0]);
        assert!((norm - (p * (1.0 - p) * 4.0 / 0.5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn trinomial_has_two_orthogonal_directions() {
        let s = FilteredSpace::tree(vec![0.0, 1.0], |_, _| vec![1.0 / 3.0; 3]).unwrap();
        let b = MartingaleBasis::build(&s);
        assert_eq!(b.basis_count(), 2);
        assert!(b.orthogonality_defect() < 1e-15);
        // Independent Gram-Schmidt by hand: u = (1,-1,0); v = (0,1,-1) - <v,u>/<u,u> u.
        let u = [1.0, -1.0, 0.0];
        let v = [0.5, 0.5, -1.0];
        let got = &b.atom(0, 0).vectors;
        for c in 0..3 {
            assert!((got[0][c] - u[c]).abs() < 1e-15);
            assert!((got[1][c] - v[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn counterexample_dimensions() {
        let s = counterexample_space();
        let b = MartingaleBasis::build(&s);
        assert_eq!(b.basis_count(), 1);
        assert_eq!(b.atom(0, 0).dim(), 1);
        assert_eq!(b.atom(1, 0).dim(), 0);
        assert_eq!(b.atom(1, 1).dim(), 0);
    }

    #[test]
    fn basis_martingale_represents_itself() {
        let s = FilteredSpace::tree(vec![0.0, 1.0, 2.0], |k, _| {
            if k == 0 { vec![0.2, 0.3, 0.5] } else { vec![0.5, 0.5] }
        })
        .unwrap();
        let b = MartingaleBasis::build(&s);
        for j in 0..b.basis_count() {
            let m = b.martingale(&s, j);
            let z = b.represent(&s, &m).unwrap();
            for k in 0..s.steps() {
                for a in 0..s.n_atoms(k) {
                    for i in 0..b.basis_count() {
                        let want = if i == j && b.atom(k, a).dim() > j { 1.0 } else { 0.0 };
                        assert!((z.get(k, a)[i] - want).abs() < 1e-14, "k {k} a {a} i {i}");
                    }
                }
            }
        }
        let zero = AdaptedProcess::zeros(&s);
        assert_eq!(b.represent(&s, &zero).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn represent_rejects_drift() {
        let s = counterexample_space();
        let b = MartingaleBasis::build(&s);
        let x = AdaptedProcess::new(&s, vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(matches!(b.represent(&s, &x), Err(Error::NotMartingale { step: 0, .. })));
    }

    #[test]
    fn m_norm_is_homogeneous() {
        let s = FilteredSpace::tree(vec![0.0, 0.25], |_, _| vec![0.1, 0.2, 0.7]).unwrap();
        let b = MartingaleBasis::build(&s);
        let z = [0.4, -1.3];
        let zc: Vec<f64> = z.iter().map(|v| -2.5 * v).collect();
        assert!((b.m_norm(0, 0, &zc) - 2.5 * b.m_norm(0, 0, &z)).abs() < 1e-14);
        assert_eq!(b.m_norm(0, 0, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn mp_norm_of_basis_coefficients_is_bracket_norm() {
        let s = FilteredSpace::tree(vec![0.0, 1.0, 1.5], |_, _| vec![0.25, 0.75]).unwrap();
        let b = MartingaleBasis::build(&s);
        let m = b.martingale(&s, 0);
        let z = b.represent(&s, &m).unwrap();
        // <M>_N = sum_k E[(dM_{k+1})^2 | F_k], computed from the paths.
        let mut angle = vec![0.0; s.n_outcomes()];
        for k in 0..s.steps() {
            let sq: Vec<f64> = m.increment(k + 1).iter().map(|d| d * d).collect();
            let c = s.cond_expect(&sq, k).unwrap();
            angle.iter_mut().zip(c).for_each(|(a, v)| *a += v);
        }
        for p in [1.0, 1.5, 2.0] {
            let want = s.expectation(&angle.iter().map(|v| v.powf(p / 2.0)).collect::<Vec<_>>());
            assert!((b.mp_norm(&s, &z, p).unwrap() - want).abs() < 1e-14);
        }
        assert_eq!(b.mp_norm(&s, &ZCoefficients::zeros(&s, 1), 2.0).unwrap(), 0.0);
    }
}
