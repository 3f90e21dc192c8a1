//! Revenue-optimal timing of a single sale to a buyer with Markov private
//! valuations: kernels, virtual valuations, backward-induction solver,
//! incentive-compatibility checks, transfers, simulation and sweeps.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod ic;
pub mod kernels;
pub mod output;
pub mod par;
pub mod policy;
pub mod quadrature;
pub mod revenue;
pub mod solver;
pub mod virtual_value;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use kernels::{Conditioning, Kernel, Marginal};
pub use policy::{Allocation, History};
pub use solver::{solve, solve_repeated_sales, Mode, SolveConfig, SolveResult};
pub use virtual_value::{PathState, StateGrid};
