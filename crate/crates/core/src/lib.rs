#![no_std]
#![allow(clippy::needless_range_loop)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Finite-element machinery for defeaturing error estimation in two dimensions.
//!
//! The crate solves Poisson problems with P1 Lagrange elements on triangle
//! meshes of a simplified (defeatured) domain, rebuilds an equilibrated flux
//! in the degree-1 Raviart–Thomas space from local vertex-patch mixed problems,
//! and evaluates a posteriori estimators that split the overall error into a
//! geometric contribution (one per omitted feature) and a numerical one.
//!
//! Everything here depends only on `core` and `alloc`; file formats, the
//! command-line front end and study drivers live in the `defeature` crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod defeaturing;
pub mod error;
pub mod estimator;
pub mod fem;
pub mod flux;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
