//! Benchmark fixtures: fixed-seed instances shared by the criterion benches.

use rbsde_core::random::{self, TreeShape};
use rbsde_core::snell::SnellProblem;
use rbsde_core::{FilteredSpace, MartingaleBasis, RbsdeInput};

pub const FIXTURE_SEED: u64 = 7;

/// A solved-problem fixture: space, its basis and the equation data.
pub struct Instance {
    pub space: FilteredSpace,
    pub basis: MartingaleBasis,
    pub input: RbsdeInput,
}

/// Two-barrier random-walk instance on a random tree of the given depth.
pub fn two_barrier(depth: usize, max_branch: usize) -> Instance {
    let mut rng = random::rng(FIXTURE_SEED);
    let space = random::random_tree(&mut rng, TreeShape::new(depth, max_branch)).expect("tree");
    let input = random::two_barrier_walk(&space, &mut rng);
    let basis = MartingaleBasis::build(&space);
    Instance { space, basis, input }
}

/// Lower-barrier instance on a full binary tree with a z-dependent driver.
pub fn z_dependent(depth: usize) -> Instance {
    let mut rng = random::rng(FIXTURE_SEED);
    let dt = 1.0 / depth as f64;
    let space = random::binary_tree(&mut rng, depth, dt).expect("tree");
    let generator = random::z_generator(&mut rng, dt, 0.1);
    let input = random::one_barrier(&space, &mut rng).with_generator(generator);
    let basis = MartingaleBasis::build(&space);
    Instance { space, basis, input }
}

/// Stopping problem small enough to enumerate.
pub fn snell(max_stopping_times: u128) -> (FilteredSpace, SnellProblem) {
    let mut rng = random::rng(FIXTURE_SEED);
    let space = random::random_tree(&mut rng, TreeShape::new(4, 3).with_max_stopping_times(max_stopping_times))
        .expect("tree");
    let problem = random::snell_problem(&space, &mut rng);
    (space, problem)
}
