//! Pseudo-spectral simulator for Keller-Segel chemotaxis coupled to
//! incompressible flow on a doubly periodic box, with a suite of
//! diagnostics for conservation, weighted energies, level-set energies and
//! decay envelopes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod experiments;
pub mod model;
pub mod par;
pub mod spectral;

pub use error::{KsnsError, Result};
