//! homog2d: periodic homogenization toolkit for 2D second-order elliptic
//! systems with lower-order terms on the unit square.
//!
//! The operator family is
//!   L_eps u = -div(A(x/eps) grad u + V(x/eps) u) + B(x/eps) grad u
//!             + (c(x/eps) + lambda) u
//! with 1-periodic coefficients. The crate computes correctors and effective
//! tensors on the periodicity cell, solves Dirichlet problems for L_eps and
//! its homogenized limit L_0, builds discrete Green functions, and measures
//! convergence rates and Green-function bounds empirically.

pub mod cache;
pub mod cell;
pub mod coefficients;
pub mod config;
pub mod effective;
pub mod green;
pub mod error;
pub mod krylov;
pub mod rates;
pub mod report;
pub mod runner;
pub mod solver;
pub mod svg;
pub mod torus;
pub mod util;

pub use error::{Error, Result};
