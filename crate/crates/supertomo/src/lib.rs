//! Superiorized incremental maximum-likelihood reconstruction for 2-D
//! parallel-beam tomography.
//!
//! The crate builds sparse Radon system matrices, simulates noisy emission
//! and transmission data from the Shepp-Logan phantom, and reconstructs
//! images with EM, string-averaged EM (SAEM), and stabilized SAEM (SSAEM),
//! optionally steering the iterates toward low Total Variation with one of
//! three superiorization schemes (standard, projected subgradient, TV-prox
//! via fast gradient projection).
//!
//! Start from the runnable programs in `examples/`; the `supertomo` binary
//! wraps the experiment campaign driver.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Solver steps mirror the domain signatures (iterate, objective, partition,
// weights, scaling, stepsize); bundling them into structs would only add
// indirection.
#![allow(clippy::too_many_arguments)]

pub mod campaign;
pub mod config;
pub mod error;
pub mod image;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod phantom;
pub mod projection;
pub mod solvers;
pub mod superiorize;
pub mod tv;

pub use error::{Error, Result};
pub use image::{Image, Sinogram};
pub use projection::{build_system_matrix, Geometry, SystemMatrix};
