//! Orchestration for the debate summarisation audit: run configuration,
//! resumable stages, reports and reconstructor validation.

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod manifest;
pub mod report;
pub mod run;
pub mod validate;

pub use config::RunConfig;
pub use error::CliError;
pub use run::Run;
