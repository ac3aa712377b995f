pub mod chart;
pub mod corpus;
pub mod diff;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod scoring;
pub mod train;

pub use error::{Error, Result};
