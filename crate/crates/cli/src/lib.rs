//! Experiment orchestration for BMFLC vibration suppression: motion
//! generation, closed-loop runs, step-size tuning, method comparison,
//! limit sweeps, timing benchmarks and offline replay of recorded traces.
//!
//! Every command reads one layered TOML configuration and writes CSV
//! tables with a metadata sidecar plus a summary table on stdout.

pub mod campaign;
pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod replay;
pub mod stats;

pub use campaign::Report;
pub use config::{CampaignConfig, CampaignKind, SweepKind};
pub use error::CliError;
