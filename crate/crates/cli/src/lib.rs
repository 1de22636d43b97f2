//! `navsim` command line: run scenarios, benchmark planner modes, provision
//! robot credentials and host the control API.

pub mod bench;
mod commands;

pub use commands::{main_with, ExitStatus};
