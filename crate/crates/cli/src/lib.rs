//! Training, evaluation, inference, ablation and mesh commands on top of
//! `thor_core`.

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod meshcmd;
pub mod model;
pub mod runlog;
pub mod train;

pub use cli::{main_with, run, Cli};
pub use config::RunConfig;
pub use error::CliError;
