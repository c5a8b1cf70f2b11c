//! Local volatility calibration from European call prices by Tikhonov
//! regularization of the Dupire forward problem.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: uniform (τ, y) grids, surfaces, L²/H¹ norms, CSV I/O
//! - [`mesh`]: coarse parameter meshes, prolongation and projection
//! - [`dupire`]: the forward PDE solver and Dupire's inversion formula
//! - [`adjoint`]: linearized and adjoint solves, misfit gradients
//! - [`penalty`]: convex penalties and Bregman distances
//! - [`calibrate`]: projected-gradient Tikhonov minimization with
//!   discrepancy-principle choices of β and mesh level
//! - [`experiments`]: synthetic data and the mesh/rate studies
//! - [`market`]: quote ingestion, convexity repair, implied volatility

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod calibrate;
pub mod dupire;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod market;
pub mod mesh;
pub mod penalty;
pub mod pricing;

pub use error::{Error, Result};
pub use grid::{Grid, Surface};
