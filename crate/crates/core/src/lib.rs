//! Goal-oriented a posteriori error estimation for 2D linear elasticity.
//!
//! Bilinear quadrilateral elements on quadtree meshes, equilibrated superconvergent
//! patch recovery of primal and dual stresses, quantity-of-interest error estimates
//! and h-adaptive refinement driven by them.

pub mod adaptivity;
pub mod bench;
pub mod elasticity;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod fem;
pub mod geometry;
pub mod mesh;
pub mod qoi;
pub mod quadrature;
pub mod singular;
pub mod spr;

pub use error::{Error, Result};
