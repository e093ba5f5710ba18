//! Dynamic unbalanced optimal transport on uniform space-time grids.
//!
//! The crate discretizes a Wasserstein-Fisher-Rao type action with a convex
//! per-cell functional, enforces the continuity equation with a source term
//! through an exact spectral projection, and solves the resulting problem with
//! primal-dual splitting. A Hellinger-Kantorovich secondary cost evaluated by
//! unbalanced Sinkhorn supports transport driven by a lifted geometry.

pub mod error;
pub mod geometry;
pub mod grid;
pub mod helmholtz;
pub mod hk;
pub mod oracles;
pub mod prox;
pub mod solvers;

pub use error::{Error, Result};
