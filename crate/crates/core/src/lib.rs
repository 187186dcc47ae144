//! Reflected backward stochastic difference equations on finite filtered
//! probability spaces.
//!
//! A [`FilteredSpace`] is a finite set of outcomes with a refining sequence
//! of partitions indexed by a time grid. Everything else (processes,
//! martingale representation, optimal stopping, Dynkin games, reflected
//! equations and the inequality checks built on them) is exact linear
//! algebra on that tree.

pub mod analysis;
pub mod dynkin;
pub mod error;
pub mod filtration;
pub mod generator;
pub mod martrep;
pub mod process;
pub mod random;
pub mod rbsde;
pub mod report;
pub mod scenario;
pub mod snell;
pub mod suites;

pub use error::{Error, Result};
pub use filtration::{counterexample_space, FilteredSpace, SpaceFile, StoppingTime};
pub use generator::{Generator, GeneratorRegistry, Point};
pub use martrep::{MartingaleBasis, ZCoefficients};
pub use process::{
    doob_decomposition, jordan_split, AdaptedProcess, DoobDecomposition, FvDecomposition, PredictableProcess,
};
pub use rbsde::{
    penalization_sweep, solve_penalized, solve_picard, solve_reflected, verify_solution, ConvergenceReport,
    InvariantReport, PenalizedSolution, PicardConfig, PicardReport, RbsdeInput, Solution,
};
pub use snell::{snell_envelope, snell_oracle, SnellProblem};
