//! Neural surrogate toolkit for static hyperelastic finite-element deformation.
//!
//! The pipeline: build a clamped tetrahedral mesh ([`mesh`]), assemble
//! hyperelastic forces and tangent stiffness ([`fem`], [`material`]), sample
//! modal external forces and solve them with Newton-Raphson to produce a
//! training set ([`modal`], [`solver`]), train a fully connected PReLU network
//! with a residual-weighted loss ([`nn`]), and use its prediction as the
//! starting point of a hybrid Newton-Raphson solve ([`solver`], [`bench`]).

pub mod bench;
pub mod error;
pub mod fem;
pub mod material;
pub mod mesh;
pub mod metrics;
pub mod modal;
pub mod nn;
pub mod solver;

pub use error::{Error, Result};
