//! Exact tooling for truthful makespan scheduling on unrelated machines.
//!
//! * [`model`] and [`solve`]: instances, allocations and exact optimal
//!   makespan.
//! * [`mechanisms`]: VCG, weighted VCG and the families of two-player,
//!   two-task rules.
//! * [`wmon`]: randomized and exhaustive weak-monotonicity checks.
//! * [`slicelab`]: boundary estimation and classification of 2x2 slices.
//! * [`lowerbound`]: good-set searches and approximation-ratio certificates.
//! * [`corpus`]: seeded instance generators.

pub mod consts;
pub mod corpus;
pub mod lowerbound;
pub mod mechanisms;
pub mod model;
pub mod rational;
pub mod slicelab;
pub mod solve;
pub mod wmon;

pub use consts::ConstantsProfile;
pub use mechanisms::{Bundle, Mechanism, Mechanism2x2, MechanismError, MechanismSpec};
pub use model::{Allocation, ClusterTask, ClusteredInstance, CostMatrix, Instance, TaskRef};
pub use rational::{ExtRational, Rational};
