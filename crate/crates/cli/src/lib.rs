//! Library half of the `tempgate` command-line tool: configuration,
//! result tables and the experiment commands.

pub mod config;
pub mod runner;
pub mod stats;
pub mod table;

pub use config::{Command, ExperimentConfig};
pub use runner::{execute, Outcome};
pub use table::Table;
