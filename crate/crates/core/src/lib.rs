//! Simulation and inference for self-similar fragmentation chains observed
//! through a small-fragment threshold with additive noise.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod measures;
pub mod oracle;
pub mod quadrature;
pub mod registry;
pub mod rng;
pub mod sampling;
pub mod simulator;
pub mod testfn;

pub use error::{Error, Result};
pub use measures::{
    BetaDensity, BinaryDislocationLaw, DiscreteDislocationLaw, DislocationLaw, LevyDensity, MassPartition, StepLaw,
};
pub use simulator::{add_noise, simulate_tree, FragmentRecord, ObservationSet};
pub use testfn::{localize_kernel, make_cutoff, make_kernel, make_moment_testfn, TestFunction};
