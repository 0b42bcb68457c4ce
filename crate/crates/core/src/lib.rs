pub mod agent;
pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod optimizer;
pub mod rnn;
pub mod scenarios;
pub mod synth;
pub use error::{Error, Result};
