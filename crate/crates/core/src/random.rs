//! Seeded random spaces, processes and problem instances.
//!
//! A suite seed is expanded into per-instance seeds with splitmix64, and each
//! instance draws from its own ChaCha8 stream, so instance `i` of a suite is
//! the same regardless of thread count or of which other instances run.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filtration::FilteredSpace;
use crate::generator::Generator;
use crate::process::{AdaptedProcess, PredictableProcess};
use crate::rbsde::RbsdeInput;
use crate::snell::SnellProblem;

pub type Rng64 = ChaCha8Rng;

/// One splitmix64 step: advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of instance `index` in a suite seeded with `seed`: the
/// `(index + 1)`-th splitmix64 output started from `seed`.
pub fn instance_seed(seed: u64, index: u64) -> u64 {
    let mut state = seed.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    splitmix64(&mut state)
}

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shape of a random tree. `F_0` is trivial; every node has between 1 and
/// `max_branch` children with Dirichlet-like conditional probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeShape {
    pub depth: usize,
    pub max_branch: usize,
    pub dt: f64,
    /// Resample until the number of stopping times from 0 is at most this.
    pub max_stopping_times: Option<u128>,
}

impl TreeShape {
    pub fn new(depth: usize, max_branch: usize) -> Self {
        Self {
            depth,
            max_branch,
            dt: 1.0,
            max_stopping_times: None,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_max_stopping_times(mut self, limit: u128) -> Self {
        self.max_stopping_times = Some(limit);
        self
    }
}

const TREE_ATTEMPTS: usize = 10_000;

pub fn random_tree(rng: &mut Rng64, shape: TreeShape) -> Result<FilteredSpace> {
    if shape.depth == 0 || shape.max_branch == 0 || !(shape.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("bad tree shape {shape:?}")));
    }
    let times: Vec<f64> = (0..=shape.depth).map(|k| k as f64 * shape.dt).collect();
    for _ in 0..TREE_ATTEMPTS {
        let space = FilteredSpace::tree(times.clone(), |_, _| {
            let b = rng.gen_range(1..=shape.max_branch);
            let raw: Vec<f64> = (0..b).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|r| r / total).collect()
        })?;
        match shape.max_stopping_times {
            Some(limit) if space.count_stopping_times(0)? > limit => continue,
            _ => return Ok(space),
        }
    }
    Err(Error::InvalidArgument(format!(
        "no tree with at most {:?} stopping times after {TREE_ATTEMPTS} draws",
        shape.max_stopping_times
    )))
}

/// Uniform in `[lo, hi)` on each atom.
pub fn adapted(space: &FilteredSpace, rng: &mut Rng64, lo: f64, hi: f64) -> AdaptedProcess {
    AdaptedProcess::from_atoms(space, |_, _| rng.gen_range(lo..hi))
}

/// Outcome-indexed, uniform in `[lo, hi)`.
pub fn terminal(space: &FilteredSpace, rng: &mut Rng64, lo: f64, hi: f64) -> Vec<f64> {
    (0..space.n_outcomes()).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Adapted process with `X_0 = 0` and increments uniform in `[lo, hi)`.
pub fn adapted_from_zero(space: &FilteredSpace, rng: &mut Rng64, lo: f64, hi: f64) -> AdaptedProcess {
    let inc = AdaptedProcess::from_atoms(space, |k, _| if k == 0 { 0.0 } else { rng.gen_range(lo..hi) });
    cumulative(space, inc.rows())
}

/// Predictable process with `A_0 = 0` and increments uniform in `[lo, hi)`.
pub fn predictable_from_zero(space: &FilteredSpace, rng: &mut Rng64, lo: f64, hi: f64) -> PredictableProcess {
    let inc = PredictableProcess::from_atoms(space, |k, _| if k == 0 { 0.0 } else { rng.gen_range(lo..hi) });
    let rows = partial_sums(inc.rows());
    PredictableProcess::new(space, rows).expect("partial sums of predictable increments are predictable")
}

fn partial_sums(inc: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(inc.len());
    for (k, row) in inc.iter().enumerate() {
        if k == 0 {
            rows.push(row.clone());
        } else {
            let next = rows[k - 1].iter().zip(row).map(|(a, b)| a + b).collect();
            rows.push(next);
        }
    }
    rows
}

fn cumulative(space: &FilteredSpace, inc: &[Vec<f64>]) -> AdaptedProcess {
    AdaptedProcess::new(space, partial_sums(inc)).expect("partial sums of adapted increments are adapted")
}

/// Closure `M_k = E[X | F_k] - E[X]` of a random terminal variable, so `M_0 = 0`.
pub fn martingale(space: &FilteredSpace, rng: &mut Rng64, scale: f64) -> AdaptedProcess {
    let x = terminal(space, rng, -scale, scale);
    let mean = space.expectation(&x);
    let rows = (0..=space.steps())
        .map(|k| {
            space
                .cond_expect(&x, k)
                .expect("level in range")
                .into_iter()
                .map(|v| v - mean)
                .collect()
        })
        .collect();
    AdaptedProcess::new(space, rows).expect("conditional expectations are adapted")
}

/// `S = S_0 + M - K` with `K` predictable increasing: a supermartingale.
pub fn supermartingale(space: &FilteredSpace, rng: &mut Rng64) -> AdaptedProcess {
    let s0 = rng.gen_range(-2.0..2.0);
    let scale = rng.gen_range(0.1..3.0);
    let m = martingale(space, rng, scale);
    let drift = rng.gen_range(0.0..1.5);
    let k = predictable_from_zero(space, rng, 0.0, drift);
    m.zip_with(&k.to_adapted(), |mv, kv| s0 + mv - kv)
}

/// A z-independent generator with `dt * mu <= dt_mu_max`:
/// zero, linear `a y + b`, or cubic `-c y^3 + b`.
pub fn generator(rng: &mut Rng64, dt: f64, dt_mu_max: f64) -> Generator {
    let a_max = (dt_mu_max / dt).min(1.0);
    match rng.gen_range(0..3) {
        0 => Generator::zero(),
        1 => Generator::linear(rng.gen_range(-1.0..a_max), rng.gen_range(-0.5..0.5)),
        _ => Generator::cubic(rng.gen_range(0.0..1.0), rng.gen_range(-0.5..0.5)),
    }
}

/// `f = a y + b z^1 sqrt(m^1) + c` with `lambda dt <= lambda_dt_max`.
pub fn z_generator(rng: &mut Rng64, dt: f64, lambda_dt_max: f64) -> Generator {
    let lam = lambda_dt_max / dt;
    let b = rng.gen_range(0.3 * lam..=lam) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let a = rng.gen_range(-1.0..(0.4 / dt).min(1.0));
    Generator::z_linear(a, b, rng.gen_range(-0.5..0.5))
}

pub fn snell_problem(space: &FilteredSpace, rng: &mut Rng64) -> SnellProblem {
    let lower = adapted(space, rng, -1.0, 2.0);
    let xi = terminal(space, rng, -1.0, 3.0);
    let v = adapted_from_zero(space, rng, -0.5, 0.5);
    SnellProblem::new(space, lower, xi).with_v(v)
}

/// Lower-barrier instance with driver from [`generator`].
pub fn one_barrier(space: &FilteredSpace, rng: &mut Rng64) -> RbsdeInput {
    let g = generator(rng, max_dt(space), 0.5);
    let lower = adapted(space, rng, -1.0, 1.0);
    let xi = terminal(space, rng, -1.5, 1.5);
    let v = adapted_from_zero(space, rng, -0.3, 0.3);
    RbsdeInput::new(space, xi, g).with_v(v).with_lower(lower)
}

/// Two-barrier instance with `L + 0.1 <= U`.
pub fn two_barrier(space: &FilteredSpace, rng: &mut Rng64) -> RbsdeInput {
    let base = one_barrier(space, rng);
    let gap = adapted(space, rng, 0.1, 1.0);
    let upper = base
        .lower
        .as_ref()
        .expect("one_barrier sets L")
        .zip_with(&gap, |l, g| l + g);
    base.with_upper(upper)
}

/// Full binary tree on a uniform grid, each branch probability uniform in
/// `[0.2, 0.8)`.
pub fn binary_tree(rng: &mut Rng64, depth: usize, dt: f64) -> Result<FilteredSpace> {
    let times = (0..=depth).map(|k| k as f64 * dt).collect();
    FilteredSpace::tree(times, |_, _| {
        let p = rng.gen_range(0.2..0.8);
        vec![p, 1.0 - p]
    })
}

/// Two-barrier instance whose barriers move by bounded steps: `L_0` uniform in
/// `[-1, 1)`, increments of `L` and of the corridor width `U - L` uniform in
/// `[-0.3, 0.3)`, width kept in `[0.1, 1]`, and `xi` inside the terminal
/// corridor `[L_N, U_N]`.
pub fn two_barrier_walk(space: &FilteredSpace, rng: &mut Rng64) -> RbsdeInput {
    let g = generator(rng, max_dt(space), 0.5);
    let l0 = rng.gen_range(-1.0..1.0);
    let lower = adapted_from_zero(space, rng, -0.3, 0.3).map(|_, _, v| v + l0);
    let w0 = rng.gen_range(0.1..1.0);
    let width = adapted_from_zero(space, rng, -0.3, 0.3).map(|_, _, v| (v + w0).clamp(0.1, 1.0));
    let upper = lower.zip_with(&width, |l, w| l + w);
    let xi = (0..space.n_outcomes())
        .map(|w| lower.terminal()[w] + rng.gen_range(0.0..1.0) * width.terminal()[w])
        .collect();
    let v = adapted_from_zero(space, rng, -0.3, 0.3);
    RbsdeInput::new(space, xi, g).with_v(v).with_lower(lower).with_upper(upper)
}

fn max_dt(space: &FilteredSpace) -> f64 {
    (0..space.steps()).map(|k| space.dt(k)).fold(0.0, f64::max)
}

/// Which ordering a comparison pair exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    /// Ordered data with one lower barrier each, `L^1 <= L^2`.
    OneBarrier,
    /// Ordered data with both barriers, `L^1 <= L^2`, `U^1 <= U^2`.
    TwoBarrier,
    /// Ordered data sharing the same lower barrier.
    SharedLower,
}

/// `(first, second)` with every datum of `second` at least that of `first`:
/// `xi`, barriers, `V`-increments, and `f^2 = f^1 + c` with `c >= 0`.
pub fn comparison_pair(space: &FilteredSpace, rng: &mut Rng64, kind: PairKind) -> (RbsdeInput, RbsdeInput) {
    let first = match kind {
        PairKind::TwoBarrier => two_barrier(space, rng),
        _ => one_barrier(space, rng),
    };
    let bump = |rng: &mut Rng64, p: &AdaptedProcess| {
        let d = adapted(space, rng, 0.0, 0.5);
        p.zip_with(&d, |a, b| a + b)
    };
    let xi2: Vec<f64> = first.xi.iter().map(|x| x + rng.gen_range(0.0..0.5)).collect();
    let dv = adapted_from_zero(space, rng, 0.0, 0.2);
    let v2 = first.v.zip_with(&dv, |a, b| a + b);
    let g2 = first.generator.shifted(rng.gen_range(0.0..0.3));
    let mut second = RbsdeInput::new(space, xi2, g2).with_v(v2);
    let l1 = first.lower.as_ref().expect("pair instances have L");
    second = match kind {
        PairKind::SharedLower => second.with_lower(l1.clone()),
        PairKind::OneBarrier => second.with_lower(bump(rng, l1)),
        PairKind::TwoBarrier => {
            let l2 = bump(rng, l1);
            let u1 = first.upper.as_ref().expect("two-barrier pair has U");
            // keep L^2 <= U^2: raise U by at least the raise of L
            let extra = adapted(space, rng, 0.0, 0.3);
            let u2 = AdaptedProcess::from_atoms(space, |k, a| {
                let w = space.representative(k, a);
                u1.at(k, w) + (l2.at(k, w) - l1.at(k, w)) + extra.at(k, w)
            });
            second.with_lower(l2).with_upper(u2)
        }
    };
    (first, second)
}

/// Lower barrier `L = L_0 - A + N` with `A` adapted of finite variation and
/// `N` a martingale; `xi >= L_N`.
#[derive(Clone, Debug)]
pub struct SemimartingaleBarrier {
    pub input: RbsdeInput,
    pub a: AdaptedProcess,
    pub n: AdaptedProcess,
}

pub fn semimartingale_barrier(space: &FilteredSpace, rng: &mut Rng64) -> SemimartingaleBarrier {
    let l0 = rng.gen_range(-1.0..1.0);
    let a = adapted_from_zero(space, rng, -0.6, 0.6);
    let scale = rng.gen_range(0.1..1.5);
    let n = martingale(space, rng, scale);
    let lower = a.zip_with(&n, |av, nv| l0 - av + nv);
    let xi: Vec<f64> = lower.terminal().iter().map(|l| l + rng.gen_range(0.0..1.0)).collect();
    let g = generator(rng, max_dt(space), 0.5);
    let v = adapted_from_zero(space, rng, -0.3, 0.3);
    SemimartingaleBarrier {
        input: RbsdeInput::new(space, xi, g).with_v(v).with_lower(lower),
        a,
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{doob_decomposition, martingale_defect};

    #[test]
    fn splitmix_reference_values() {
        // First outputs of splitmix64 from state 0.
        let mut s = 0u64;
        assert_eq!(splitmix64(&mut s), 0xe220_a839_7b1d_cdaf);
        assert_eq!(splitmix64(&mut s), 0x6e78_9e6a_a1b9_65f4);
        assert_eq!(instance_seed(0, 0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(instance_seed(0, 1), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn tree_respects_stopping_time_limit() {
        let mut r = rng(7);
        for _ in 0..20 {
            let s = random_tree(&mut r, TreeShape::new(4, 3).with_max_stopping_times(500)).unwrap();
            assert!(s.count_stopping_times(0).unwrap() <= 500);
            assert_eq!(s.n_atoms(0), 1);
        }
    }

    #[test]
    fn generated_processes_have_their_structure() {
        let mut r = rng(11);
        let s = random_tree(&mut r, TreeShape::new(3, 3)).unwrap();
        let m = martingale(&s, &mut r, 1.0);
        assert!(martingale_defect(&s, &m) < 1e-14);
        let sup = supermartingale(&s, &mut r);
        assert!(doob_decomposition(&s, &sup).is_ok());
        let (p, q) = comparison_pair(&s, &mut r, PairKind::TwoBarrier);
        q.validate(&s).unwrap();
        p.validate(&s).unwrap();
    }

    #[test]
    fn same_seed_same_instance() {
        let a = random_tree(&mut rng(3), TreeShape::new(3, 3)).unwrap();
        let b = random_tree(&mut rng(3), TreeShape::new(3, 3)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }
}
