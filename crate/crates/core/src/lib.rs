//! Teugels-martingale bases for Lévy processes, BSDEs driven by them, and two
//! independent routes to the value function of a controlled Lévy-driven
//! forward–backward system: Monte Carlo dynamic programming and an explicit
//! monotone scheme for the nonlocal HJB equation.

// Negated float comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod bsde_solver;
pub mod catalog;
pub mod control_value;
pub mod error;
pub mod grid;
pub mod hjb_solver;
pub mod levy_model;
pub mod output;
pub mod path_sim;
pub mod problem;
pub mod quadrature;
pub mod regression;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod stats;
pub mod teugels_basis;

pub use error::{Error, Result};
