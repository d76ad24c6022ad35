#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]
//! Interior Riemannian subgradient methods over `M ∩ C`: barrier kernels,
//! constraint geometry, objective oracles, the barrier and mirror solvers,
//! a fine-step flow integrator, and stationarity diagnostics.

extern crate alloc;

pub mod bvls;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod oracles;
pub mod solvers;

pub use error::{Error, Result};
