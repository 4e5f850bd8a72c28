//! A desk-scale laboratory for studying stochastic gradient descent as a
//! stochastic process: mini-batch diffusion matrices, the continuous-time
//! SDE, Fokker–Planck steady states and their free energy, the linearized
//! `F = (D + Q) U` decomposition, and trajectory diagnostics that detect
//! persistent rotation.
//!
//! Every module works on plain `f64` data. Two-dimensional problems (the
//! Fokker–Planck grid, the double-well example) use `[f64; 2]` points;
//! everything else uses slices or `nalgebra` matrices.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decomposition;
pub mod diagnostics;
pub mod diffusion;
pub mod doublewell;
pub mod error;
pub mod fokker_planck;
pub mod formats;
pub mod model_zoo;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};

/// A 2×2 matrix stored row-major.
pub type Mat2 = [[f64; 2]; 2];

/// Identity in 2-D.
pub const IDENTITY2: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
