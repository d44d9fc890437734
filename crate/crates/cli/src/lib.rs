pub mod commands;
pub mod server;

pub use commands::{run, Cli, Command};
