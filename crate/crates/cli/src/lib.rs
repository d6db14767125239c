//! File formats, scenario assembly and output writers for the `paas-sim`
//! command-line tool.

pub mod commands;
pub mod config;
pub mod pool;
pub mod report;
pub mod scenario;
pub mod script;
