//! Library half of the `mpoforge` command line: configuration, result
//! records, the commands, and the verification suites.

pub mod commands;
pub mod config;
pub mod record;
pub mod verify;
