//! Representation transfer analysis.
//!
//! Given several feature spaces ("representations") computed over the same
//! token stream, this crate measures how well each one linearly transfers to
//! every other, condenses those measurements into a representation embedding
//! matrix, analyses its low-dimensional geometry, and relates it to how well
//! each representation predicts recorded response channels.
//!
//! Module map:
//!
//! - [`feature_store`]: the `.fbn` container format, corpora and alignment.
//! - [`synthgen`]: synthetic representation families with known transfer structure.
//! - [`transfer`]: bottleneck encoders, latent-to-target decoders, per-row errors.
//! - [`tournament`]: pairwise decoder tournaments, AHP weights, embedding matrix.
//! - [`geometry`]: row distances, weighted SMACOF, scree, orientation.
//! - [`encoding`]: TR resampling, delay expansion, ridge, Monte Carlo CV, scoring.
//! - [`brainmap`]: performance profiles, projection, leave-two-out discriminability.

pub mod brainmap;
pub mod encoding;
pub mod error;
pub mod feature_store;
pub mod geometry;
pub mod seed;
pub mod stats;
pub mod synthgen;
pub mod tables;
pub mod tournament;
pub mod transfer;

pub use error::{Error, Result};
