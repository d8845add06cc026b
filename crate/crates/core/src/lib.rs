//! Random walk on dynamical percolation on the torus `Z_n^d`: environment
//! sampling, quenched and annealed walk laws, mixing and hitting
//! statistics, evolving sets and expansion profiles, and a lab for
//! Markov chains in finite random environments.

// `!(x > 0.0)` rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod dynenv;
pub mod envlab;
pub mod error;
pub mod evoset;
pub mod expansion;
pub mod kernel;
pub mod rng;
pub mod stats;
pub mod subset;
pub mod torus;
pub mod walk;

pub use dist::{chi, tv, Dist, Grid, MixTime, Mode};
pub use dynenv::{sample_env, DynParams, EnvTrajectory, InitialCondition};
pub use envlab::{counterexample_chain, integral_bound_check, variant_chain, Dynamics, FiniteEnvChain};
pub use error::{Error, Result};
pub use evoset::{InhomChain, SetLaw};
pub use expansion::{CertifiedProfile, DiagnosticProfile, Provenance, StepProfile};
pub use kernel::Kernel;
pub use subset::{Mask, Membership};
pub use torus::{TorusGraph, VertexSet};
pub use walk::{ExactBudget, Laziness, WalkKernel};
