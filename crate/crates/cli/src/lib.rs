//! Command-line front end: configuration, presets, orchestration and
//! artifact files.

pub mod artifacts;
pub mod config;
pub mod presets;
pub mod report;
pub mod run;

pub use config::{
    load_and_validate, load_config, parse_config, validate, ConfigError, RunConfig, ValidConfig,
};
pub use run::{run, RunSummary, Stage};
