//! A numerical laboratory for the stochastically forced two-dimensional
//! Navier–Stokes equations on the torus, written in spectral vorticity form.
//!
//! The crate contains the solver ([`spectral`], [`forcing`], [`dynamics`]),
//! a two-dimensional model system with the same high/low mode structure
//! ([`toy`]), statistical checks of energy and Lyapunov estimates
//! ([`estimators`]), determining-mode synchronization experiments
//! ([`sync`]), coupling constructions ([`coupling`]) and the combinatorics
//! of how randomness spreads through the nonlinearity ([`cascade`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod forcing;
pub mod spectral;
pub mod dynamics;
pub mod stats;
pub mod rng;
pub mod toy;
pub mod report;
pub mod estimators;
pub mod sync;
pub mod coupling;
pub mod cascade;
pub mod presets;

pub use error::{Error, Result};
