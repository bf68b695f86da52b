//! Scenario-driven front end for the `wavecap` command: configuration
//! parsing, scenario assembly and the `simulate`, `capacity`, `verify` and
//! `sweep` drivers.

pub mod config;
pub mod output;
pub mod run;
pub mod scenario;
