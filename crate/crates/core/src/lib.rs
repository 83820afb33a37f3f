pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod report;
pub mod representation;
pub mod train;

pub use error::{Error, Result};
