//! Risk-standardized hospital quality estimates from approximate balancing
//! weights.
//!
//! The pipeline: load a [`Cohort`], build the standardized [`BasisMatrix`],
//! solve per-hospital weights with [`solve_all`], turn them into an
//! [`EstimateTable`], then compare hospitals with the heterogeneity and
//! shrinkage tools in [`pooling`]. [`simulator`] generates synthetic cohorts
//! with known hospital quality.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod estimator;
pub mod io;
pub mod linalg;
pub mod pooling;
pub mod simulator;
pub mod solver;

pub use data::{build_basis, hospital_slice, load_cohort, BasisConfig, BasisMatrix, Cohort};
pub use solver::{solve_all, solve_hospital, HospitalWeights, SolverConfig, SolverError, WeightSet};
