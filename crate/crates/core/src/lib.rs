//! Nonlocal physics-informed neural networks for plane-strain elasticity and
//! elastoplasticity.
//!
//! The crate builds peridynamic differential operator (PDDO) stencils on 2-D
//! point grids, evaluates elastic and J2 deformation-plasticity relations,
//! assembles residual losses for three architectures (local PINN, AD-PDDO-PINN
//! and PDDO-PINN), and trains small fully connected networks with Adam, either
//! to solve for the fields or to identify material parameters from data.
//!
//! Runnable walkthroughs live in `examples/`; the `nlpinn` binary wraps the
//! full pipeline behind a TOML config.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod constitutive;
pub mod dataio;
pub mod error;
pub mod mesh;
pub mod pddo;
pub mod residuals;
pub mod trainer;

pub use error::{Error, Result};
