//! Simulator and analysis library for an entanglement-purification
//! style key-distillation protocol tracked entirely in the classical
//! bit/phase error picture, with rate formulas, a tagged-source
//! extension, and brute-force quantum oracles for cross-checking.

pub mod cli;
pub mod gf2;
pub mod hashing;
pub mod oracle;
pub mod pairstate;
pub mod privacy;
pub mod rates;
pub mod reconcile;
pub mod session;

pub use gf2::BitString;
pub use pairstate::{ChannelParams, Ensemble, PairState, Sampling};
