//! Variational steady states of open quantum lattice models.
//!
//! The crate evaluates the purity-normalized Hilbert-Schmidt norm of a
//! Lindbladian acting on a Gutzwiller product state, searches its landscape
//! for competing minima and saddles, turns the result into nucleation rates,
//! and integrates the lattice Langevin equation derived from the norm's
//! gradient expansion to map bistable and ergodic phases.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod exactref;
pub mod gradexp;
pub mod landscape;
pub mod langevin;
pub mod models;
pub mod nucleation;
pub mod opalg;
pub mod phasediag;
pub mod varnorm;

pub use error::{Error, Result};
