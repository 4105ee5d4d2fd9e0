//! Command-line pipeline around `repspace-core`: configuration, the staged
//! run directory with its manifest, and SVG reports.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{Overrides, RunConfig};
pub use pipeline::{Outcome, Pipeline, Stage};
