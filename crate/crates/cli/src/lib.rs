//! Orchestration for the `cascade-screen` binary: run configuration, run
//! store layout and one stage function per subcommand.

pub mod app;
pub mod config;
pub mod stages;
pub mod store;

pub use config::RunConfig;
pub use store::RunStore;
