//! Library side of the `bdk` scenario runner: config parsing, canned
//! presets and the run pipeline. The binary in `main.rs` is a thin argument
//! layer over these.

pub mod config;
pub mod presets;
pub mod runner;

pub use config::{ConfigError, RunConfig};
pub use runner::{out_root, run, RunError, RunSummary};
