pub mod config;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod output;
