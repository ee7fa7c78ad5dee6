pub mod cli;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod serve;

pub use cli::run;
