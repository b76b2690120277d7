//! Simulation and verification toolkit for branching random walks in a
//! random environment (BRWRE) on the lattice `Z^d`.
//!
//! The quenched moments `m_n(t, x) = E_x[eta(t)^n]` are computed by three
//! independent routes:
//!
//! * [`brw_sim`]: direct event-driven simulation of the branching process,
//! * [`skeleton_fk`]: Monte Carlo evaluation of the tree-indexed
//!   Feynman-Kac formula over skeleton trees from [`trees`],
//! * [`pam_solver`]: a deterministic finite-box solver for the parabolic
//!   Anderson equation and its inhomogeneous higher-order hierarchy.
//!
//! [`variational`] evaluates the rate functionals and the constant
//! `chi(rho)`, and [`harness`] orchestrates the experiments.

pub mod brw_sim;
pub mod environment;
pub mod error;
pub mod exec;
pub mod harness;
pub mod lattice;
pub mod pam_solver;
pub mod quadrature;
pub mod rng;
pub mod skeleton_fk;
pub mod stats;
pub mod trees;
pub mod variational;

pub use environment::{EnvironmentField, PotentialDistribution};
pub use error::{Error, Result};
pub use exec::Exec;
pub use lattice::{Boundary, Geometry};
pub use stats::Estimate;
pub use trees::{Numbering, SkeletonTree};
