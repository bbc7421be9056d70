//! Solver toolkit for partial-consensus optimization over a network of
//! agents whose decision vectors have different lengths but must agree on
//! their leading components.
//!
//! - [`pcmatrix`] builds the coupling matrix `K_n` from a graph Laplacian.
//! - [`convex`] holds the convex atoms, local sets and projections.
//! - [`dynamics`] integrates the projected primal-dual flow and checks KKT
//!   conditions and Lyapunov descent.
//! - [`network`] runs the same flow as agents exchanging messages.
//! - [`cli`] is the command-line front end and problem file format.

pub mod cli;
pub mod convex;
pub mod dynamics;
pub mod error;
pub mod network;
pub mod pcmatrix;

pub use error::{Error, Result};
