//! Principal-component estimation and inference for approximate factor models
//! whose factors may differ in strength.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augreg;
pub mod dgp;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod montecarlo;
pub mod pc;
pub mod quantile;
pub mod rotation;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
pub use pc::{pc_fit, PcFit};
pub use rotation::{pseudo_true_rotation, PseudoTrueRotation, RotationSet};
