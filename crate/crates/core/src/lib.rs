//! Vector-valued privacy-preserving average consensus on matrix-weighted
//! networks.
//!
//! Agents lift their `d`-dimensional states with `d'` virtual coordinates and
//! exchange only rank-2 projections of them through periodically switching
//! matrix-valued edge weights. The crate contains the protocol simulator,
//! spectral checks of its convergence machinery, an honest-but-curious
//! adversary laboratory, and the experiment harness behind the `ppac` CLI.

pub mod engine;
pub mod error;
pub mod linalg;
pub mod schedule;
pub mod topology;

pub use error::{Error, Result};
pub mod adversary;
pub mod analysis;
pub mod config;
pub mod experiment;
