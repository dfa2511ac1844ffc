//! Hybrid analog/digital beamforming for joint communications and sensing,
//! solved by projected gradient ascent whose per-layer step sizes are learned
//! from data.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod beampattern;
pub mod channel;
pub mod config;
pub mod container;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod objective;
pub mod pga;
pub mod unfolding;

pub use error::{Error, Result};
pub use numerics::ComplexMatrix;
pub use objective::{Precoders, SystemParams};
