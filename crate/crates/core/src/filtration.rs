//! Finite filtered probability spaces.
//!
//! A [`FilteredSpace`] is a finite outcome set with probabilities, a time grid
//! `t_0 = 0 < ... < t_N = T` and a refining sequence of partitions, one per
//! grid index. Atoms of `partitions[k]` are the information cells of `F_k`.
//! Everything downstream (processes, conditional expectations, stopping
//! times, martingale bases) is indexed by `(step, atom)` or `(step, outcome)`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{AdaptedProcess, Measurability, PredictableProcess, Process};

/// Tolerance on the total probability mass.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// On-disk form of a space: `outcomes [[id, prob]...]`, `times`, `partitions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceFile {
    pub outcomes: Vec<(String, f64)>,
    pub times: Vec<f64>,
    pub partitions: Vec<Vec<Vec<String>>>,
}

/// Finite filtered probability space. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteredSpace {
    ids: Vec<String>,
    probs: Vec<f64>,
    times: Vec<f64>,
    /// `atoms[k][a]` lists the outcome indices of atom `a` at level `k`.
    atoms: Vec<Vec<Vec<usize>>>,
    /// `atom_of[k][w]` is the atom of level `k` containing outcome `w`.
    atom_of: Vec<Vec<usize>>,
    atom_prob: Vec<Vec<f64>>,
    /// `children[k][a]`: atoms of level `k + 1` inside atom `a` of level `k`.
    children: Vec<Vec<Vec<usize>>>,
    /// `child_pos[k][a]`: position of atom `a` (level `k >= 1`) in its parent's child list.
    child_pos: Vec<Vec<usize>>,
    parent: Vec<Vec<usize>>,
}

impl FilteredSpace {
    pub fn new(
        outcomes: Vec<(String, f64)>,
        times: Vec<f64>,
        partitions: Vec<Vec<Vec<String>>>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidSpace(m));
        if outcomes.is_empty() {
            return bad("no outcomes".into());
        }
        if times.len() < 2 {
            return bad("time grid needs at least two points".into());
        }
        if times[0] != 0.0 {
            return bad(format!("time grid must start at 0, got {}", times[0]));
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return bad("time grid must be finite and strictly increasing".into());
        }
        if partitions.len() != times.len() {
            return bad(format!(
                "{} partitions for {} grid points",
                partitions.len(),
                times.len()
            ));
        }

        let mut index = HashMap::with_capacity(outcomes.len());
        let mut ids = Vec::with_capacity(outcomes.len());
        let mut probs = Vec::with_capacity(outcomes.len());
        for (i, (id, p)) in outcomes.into_iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("probability of `{id}` is {p}, expected (0, 1]"));
            }
            if index.insert(id.clone(), i).is_some() {
                return bad(format!("duplicate outcome id `{id}`"));
            }
            ids.push(id);
            probs.push(p);
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return bad(format!("probabilities sum to {total}"));
        }

        let n_out = ids.len();
        let mut atoms = Vec::with_capacity(partitions.len());
        let mut atom_of = Vec::with_capacity(partitions.len());
        for (k, partition) in partitions.iter().enumerate() {
            let mut owner = vec![usize::MAX; n_out];
            let mut level = Vec::with_capacity(partition.len());
            for (a, atom) in partition.iter().enumerate() {
                if atom.is_empty() {
                    return bad(format!("empty atom {a} at level {k}"));
                }
                let mut members = Vec::with_capacity(atom.len());
                for id in atom {
                    let Some(&w) = index.get(id) else {
                        return bad(format!("unknown outcome `{id}` at level {k}"));
                    };
                    if owner[w] != usize::MAX {
                        return bad(format!("outcome `{id}` appears twice at level {k}"));
                    }
                    owner[w] = a;
                    members.push(w);
                }
                level.push(members);
            }
            if let Some(w) = owner.iter().position(|&a| a == usize::MAX) {
                return bad(format!("outcome `{}` not covered at level {k}", ids[w]));
            }
            atoms.push(level);
            atom_of.push(owner);
        }

        let atom_prob: Vec<Vec<f64>> = atoms
            .iter()
            .map(|level| {
                level
                    .iter()
                    .map(|members| members.iter().map(|&w| probs[w]).sum())
                    .collect()
            })
            .collect();

        let last = times.len() - 1;
        let mut children = Vec::with_capacity(last);
        let mut parent = vec![Vec::new()];
        let mut child_pos = vec![Vec::new()];
        for k in 0..last {
            let mut kids: Vec<Vec<usize>> = vec![Vec::new(); atoms[k].len()];
            let mut up = Vec::with_capacity(atoms[k + 1].len());
            let mut pos = Vec::with_capacity(atoms[k + 1].len());
            for (b, members) in atoms[k + 1].iter().enumerate() {
                let a = atom_of[k][members[0]];
                if members.iter().any(|&w| atom_of[k][w] != a) {
                    return bad(format!(
                        "atom {b} of level {} straddles atoms of level {k}",
                        k + 1
                    ));
                }
                pos.push(kids[a].len());
                kids[a].push(b);
                up.push(a);
            }
            children.push(kids);
            parent.push(up);
            child_pos.push(pos);
        }

        Ok(Self {
            ids,
            probs,
            times,
            atoms,
            atom_of,
            atom_prob,
            children,
            child_pos,
            parent,
        })
    }

    pub fn from_file(file: SpaceFile) -> Result<Self> {
        Self::new(file.outcomes, file.times, file.partitions)
    }

    pub fn to_file(&self) -> SpaceFile {
        SpaceFile {
            outcomes: self
                .ids
                .iter()
                .cloned()
                .zip(self.probs.iter().copied())
                .collect(),
            times: self.times.clone(),
            partitions: self
                .atoms
                .iter()
                .map(|level| {
                    level
                        .iter()
                        .map(|m| m.iter().map(|&w| self.ids[w].clone()).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpaceFile = serde_json::from_str(text).map_err(|e| Error::Config {
            key: "space".into(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("space serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Builds the path space of a finite tree with trivial `F_0`.
    ///
    /// `branching(k, path)` returns the conditional probabilities of the
    /// children of the node reached by `path` at level `k`. Outcomes are the
    /// root-to-leaf paths, named `w` followed by the child indices.
    pub fn tree<F>(times: Vec<f64>, mut branching: F) -> Result<Self>
    where
        F: FnMut(usize, &[usize]) -> Vec<f64>,
    {
        if times.len() < 2 {
            return Err(Error::InvalidSpace("time grid needs at least two points".into()));
        }
        let depth = times.len() - 1;
        // Nodes at each level as (path, probability), in depth-first order.
        let mut levels: Vec<Vec<(Vec<usize>, f64)>> = vec![vec![(Vec::new(), 1.0)]];
        for k in 0..depth {
            let mut next = Vec::new();
            for (path, p) in &levels[k] {
                let q = branching(k, path);
                if q.is_empty() {
                    return Err(Error::InvalidSpace(format!(
                        "node at level {k} has no children"
                    )));
                }
                for (c, qc) in q.into_iter().enumerate() {
                    let mut child = path.clone();
                    child.push(c);
                    next.push((child, p * qc));
                }
            }
            levels.push(next);
        }
        let wide = levels[depth].iter().any(|(path, _)| path.iter().any(|&c| c > 9));
        let name = |path: &[usize]| {
            let parts: Vec<String> = path.iter().map(|c| c.to_string()).collect();
            format!("w{}", parts.join(if wide { "." } else { "" }))
        };
        let leaves = &levels[depth];
        let total: f64 = leaves.iter().map(|(_, p)| p).sum();
        let outcomes: Vec<(String, f64)> =
            leaves.iter().map(|(path, p)| (name(path), p / total)).collect();
        let partitions = levels
            .iter()
            .map(|level| {
                level
                    .iter()
                    .map(|(prefix, _)| {
                        leaves
                            .iter()
                            .filter(|(path, _)| path.starts_with(prefix))
                            .map(|(path, _)| name(path))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self::new(outcomes, times, partitions)
    }

    /// Number of grid steps `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_outcomes(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn outcome_index(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.steps()]
    }

    /// `t_{k+1} - t_k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn n_atoms(&self, k: usize) -> usize {
        self.atoms[k].len()
    }

    pub fn atoms(&self, k: usize) -> &[Vec<usize>] {
        &self.atoms[k]
    }

    pub fn atom(&self, k: usize, a: usize) -> &[usize] {
        &self.atoms[k][a]
    }

    pub fn atom_of(&self, k: usize, w: usize) -> usize {
        self.atom_of[k][w]
    }

    /// First outcome of an atom, used to read atom-constant values.
    pub fn representative(&self, k: usize, a: usize) -> usize {
        self.atoms[k][a][0]
    }

    pub fn atom_prob(&self, k: usize, a: usize) -> f64 {
        self.atom_prob[k][a]
    }

    pub fn children(&self, k: usize, a: usize) -> &[usize] {
        &self.children[k][a]
    }

    /// Position of the level-`k + 1` atom containing `w` among the children
    /// of its level-`k` parent.
    pub fn child_position(&self, k: usize, w: usize) -> usize {
        self.child_pos[k + 1][self.atom_of[k + 1][w]]
    }

    pub fn parent(&self, k: usize, a: usize) -> usize {
        self.parent[k][a]
    }

    /// Conditional probabilities of the children of atom `a` at level `k`.
    pub fn child_probs(&self, k: usize, a: usize) -> Vec<f64> {
        let pa = self.atom_prob[k][a];
        self.children[k][a]
            .iter()
            .map(|&b| self.atom_prob[k + 1][b] / pa)
            .collect()
    }

    pub fn expectation(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    fn check_level(&self, k: usize) -> Result<()> {
        if k > self.steps() {
            return Err(Error::IndexOutOfRange {
                what: "grid index",
                index: k,
                limit: self.steps(),
            });
        }
        Ok(())
    }

    /// Atom-indexed conditional expectation `E[x | F_k]`.
    pub fn atom_means(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        self.check_level(k)?;
        if x.len() != self.n_outcomes() {
            return Err(Error::Shape(format!(
                "{} values for {} outcomes",
                x.len(),
                self.n_outcomes()
            )));
        }
        Ok(self.atoms[k]
            .iter()
            .zip(&self.atom_prob[k])
            .map(|(members, pa)| members.iter().map(|&w| x[w] * self.probs[w]).sum::<f64>() / pa)
            .collect())
    }

    /// `E[x | F_k]`, extended to outcomes (constant on atoms of level `k`).
    pub fn cond_expect(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        let means = self.atom_means(x, k)?;
        Ok(self.atom_of[k].iter().map(|&a| means[a]).collect())
    }

    /// Predictable projection: `(pX)_k = E[X_k | F_{k-1}]` for `k >= 1`,
    /// `(pX)_0 = X_0`.
    pub fn predictable_projection(&self, x: &AdaptedProcess) -> Result<PredictableProcess> {
        self.check_process(x)?;
        let mut rows = Vec::with_capacity(self.steps() + 1);
        rows.push(x.step(0).to_vec());
        for k in 1..=self.steps() {
            rows.push(self.cond_expect(x.step(k), k - 1)?);
        }
        Process::new(self, rows)
    }

    /// Dual predictable projection (compensator) of a finite-variation
    /// process with `A_0 = 0`: `dA^p_k = E[dA_k | F_{k-1}]`.
    pub fn dual_predictable_projection(&self, a: &AdaptedProcess) -> Result<PredictableProcess> {
        self.check_process(a)?;
        if a.step(0).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument(
                "dual predictable projection needs A_0 = 0".into(),
            ));
        }
        let n = self.n_outcomes();
        let mut rows = vec![vec![0.0; n]];
        for k in 1..=self.steps() {
            let inc = a.increment(k);
            let comp = self.cond_expect(&inc, k - 1)?;
            let prev = &rows[k - 1];
            rows.push(prev.iter().zip(&comp).map(|(p, c)| p + c).collect());
        }
        Process::new(self, rows)
    }

    pub(crate) fn check_process<K: Measurability>(&self, x: &Process<K>) -> Result<()> {
        if x.steps() != self.steps() || x.step(0).len() != self.n_outcomes() {
            return Err(Error::Shape(format!(
                "process has {} steps x {} outcomes, space has {} x {}",
                x.steps(),
                x.step(0).len(),
                self.steps(),
                self.n_outcomes()
            )));
        }
        Ok(())
    }

    /// Number of stopping times with values in `{start, ..., N}`, saturating.
    pub fn count_stopping_times(&self, start: usize) -> Result<u128> {
        self.check_level(start)?;
        let last = self.steps();
        let mut counts: Vec<u128> = vec![1; self.n_atoms(last)];
        for k in (start..last).rev() {
            counts = (0..self.n_atoms(k))
                .map(|a| {
                    self.children[k][a]
                        .iter()
                        .fold(1u128, |acc, &b| acc.saturating_mul(counts[b]))
                        .saturating_add(1)
                })
                .collect();
        }
        Ok(counts.iter().fold(1u128, |acc, &c| acc.saturating_mul(c)))
    }

    /// Every stopping time with values in `{start, ..., N}`, without duplicates.
    pub fn enumerate_stopping_times(&self, start: usize, max_count: u128) -> Result<Vec<StoppingTime>> {
        let count = self.count_stopping_times(start)?;
        if count > max_count {
            return Err(Error::CountExceeded {
                count,
                limit: max_count,
            });
        }
        // Sparse assignments (outcome, value) per atom, combined by cartesian products.
        type Partial = Vec<(usize, usize)>;
        fn product(lists: &[Vec<Partial>]) -> Vec<Partial> {
            let mut acc: Vec<Partial> = vec![Vec::new()];
            for list in lists {
                let mut next = Vec::with_capacity(acc.len() * list.len());
                for prefix in &acc {
                    for item in list {
                        let mut joined = prefix.clone();
                        joined.extend_from_slice(item);
                        next.push(joined);
                    }
                }
                acc = next;
            }
            acc
        }
        fn rec(space: &FilteredSpace, k: usize, a: usize) -> Vec<Partial> {
            let stop: Partial = space.atoms[k][a].iter().map(|&w| (w, k)).collect();
            if k == space.steps() {
                return vec![stop];
            }
            let lists: Vec<Vec<Partial>> = space.children[k][a]
                .iter()
                .map(|&b| rec(space, k + 1, b))
                .collect();
            let mut out = vec![stop];
            out.extend(product(&lists));
            out
        }
        let lists: Vec<Vec<Partial>> = (0..self.n_atoms(start)).map(|a| rec(self, start, a)).collect();
        Ok(product(&lists)
            .into_iter()
            .map(|partial| {
                let mut value = vec![0; self.n_outcomes()];
                for (w, k) in partial {
                    value[w] = k;
                }
                StoppingTime { value }
            })
            .collect())
    }
}

/// A stopping time: outcome index to grid index, with `{tau = k}` in `F_k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StoppingTime {
    value: Vec<usize>,
}

impl StoppingTime {
    pub fn new(space: &FilteredSpace, value: Vec<usize>) -> Result<Self> {
        if value.len() != space.n_outcomes() {
            return Err(Error::InvalidStoppingTime(format!(
                "{} values for {} outcomes",
                value.len(),
                space.n_outcomes()
            )));
        }
        if let Some(&k) = value.iter().find(|&&k| k > space.steps()) {
            return Err(Error::InvalidStoppingTime(format!("value {k} beyond horizon")));
        }
        for k in 0..=space.steps() {
            for members in space.atoms(k) {
                let hits = members.iter().filter(|&&w| value[w] == k).count();
                if hits != 0 && hits != members.len() {
                    return Err(Error::InvalidStoppingTime(format!(
                        "{{tau = {k}}} is not a union of level-{k} atoms"
                    )));
                }
            }
        }
        Ok(Self { value })
    }

    pub fn constant(space: &FilteredSpace, k: usize) -> Self {
        Self {
            value: vec![k.min(space.steps()); space.n_outcomes()],
        }
    }

    pub fn at(&self, w: usize) -> usize {
        self.value[w]
    }

    pub fn values(&self) -> &[usize] {
        &self.value
    }
}

/// The two-outcome space on which a martingale jumps at a predictable time:
/// `F_0` trivial, full information from grid index 1 on, `times = [0, 1, 2]`.
pub fn counterexample_space() -> FilteredSpace {
    let ids = || vec!["w1".to_string(), "w2".to_string()];
    FilteredSpace::new(
        vec![("w1".into(), 0.5), ("w2".into(), 0.5)],
        vec![0.0, 1.0, 2.0],
        vec![vec![ids()], vec![vec!["w1".into()], vec!["w2".into()]], vec![vec!["w1".into()], vec!["w2".into()]]],
    )
    .expect("counterexample space is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin(steps: usize, p: f64) -> FilteredSpace {
        let times = (0..=steps).map(|k| k as f64).collect();
        FilteredSpace::tree(times, |_, _| vec![p, 1.0 - p]).unwrap()
    }

    #[test]
    fn rejects_bad_probabilities() {
        let err = FilteredSpace::new(
            vec![("a".into(), 0.5), ("b".into(), 0.4)],
            vec![0.0, 1.0],
            vec![vec![vec!["a".into(), "b".into()]], vec![vec!["a".into()], vec!["b".into()]]],
        );
        assert!(matches!(err, Err(Error::InvalidSpace(_))));
    }

    #[test]
    fn rejects_non_refining_partitions() {
        let err = FilteredSpace::new(
            vec![("a".into(), 0.25), ("b".into(), 0.25), ("c".into(), 0.5)],
            vec![0.0, 1.0, 2.0],
            vec![
                vec![vec!["a".into(), "b".into(), "c".into()]],
                vec![vec!["a".into()], vec!["b".into(), "c".into()]],
                vec![vec!["a".into(), "b".into()], vec!["c".into()]],
            ],
        );
        assert!(matches!(err, Err(Error::InvalidSpace(m)) if m.contains("straddles")));
    }

    #[test]
    fn rejects_uncovered_outcome() {
        let err = FilteredSpace::new(
            vec![("a".into(), 0.5), ("b".into(), 0.5)],
            vec![0.0, 1.0],
            vec![vec![vec!["a".into()]], vec![vec!["a".into()], vec!["b".into()]]],
        );
        assert!(err.is_err());
    }

    #[test]
    fn cond_expect_of_constant_is_constant() {
        let s = coin(3, 0.3);
        for k in 0..=3 {
            let e = s.cond_expect(&vec![2.5; s.n_outcomes()], k).unwrap();
            assert!(e.iter().all(|&v| (v - 2.5).abs() < 1e-14));
        }
    }

    #[test]
    fn cond_expect_counterexample() {
        let s = counterexample_space();
        let e = s.cond_expect(&[5.0, 1.0], 0).unwrap();
        assert_eq!(e, vec![3.0, 3.0]);
    }

    #[test]
    fn cond_expect_out_of_range() {
        let s = coin(2, 0.5);
        assert!(matches!(
            s.cond_expect(&vec![0.0; 4], 3),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn one_step_space_has_two_stopping_times() {
        let s = coin(1, 0.5);
        let all = s.enumerate_stopping_times(0, 100).unwrap();
        assert_eq!(all.len(), 2);
        assert!(all.contains(&StoppingTime::constant(&s, 0)));
        assert!(all.contains(&StoppingTime::constant(&s, 1)));
    }

    #[test]
    fn counterexample_has_five_stopping_times() {
        let s = counterexample_space();
        assert_eq!(s.count_stopping_times(0).unwrap(), 5);
        let all = s.enumerate_stopping_times(0, 5).unwrap();
        assert_eq!(all.len(), 5);
        assert!(matches!(
            s.enumerate_stopping_times(0, 4),
            Err(Error::CountExceeded { count: 5, .. })
        ));
    }

    #[test]
    fn stopping_time_validation() {
        let s = coin(2, 0.5);
        // stop at 1 on the up branch only: fine
        let up = s.atom(1, 0).to_vec();
        let mut v = vec![2; 4];
        for w in up {
            v[w] = 1;
        }
        assert!(StoppingTime::new(&s, v).is_ok());
        // stop at 0 on a single outcome: not F_0-measurable
        assert!(StoppingTime::new(&s, vec![0, 2, 2, 2]).is_err());
    }

    #[test]
    fn tree_names_and_probabilities() {
        let s = coin(2, 0.25);
        assert_eq!(s.ids(), &["w00", "w01", "w10", "w11"]);
        assert!((s.probs()[0] - 0.0625).abs() < 1e-15);
        assert_eq!(s.children(0, 0), &[0, 1]);
        assert_eq!(s.child_position(1, 3), 1);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = FilteredSpace::tree(vec![0.0, 0.1, 0.30000000000000004], |_, _| {
            vec![1.0 / 3.0, 2.0 / 3.0]
        })
        .unwrap();
        let text = s.to_json();
        let back = FilteredSpace::from_json(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json(), text);
    }
}
