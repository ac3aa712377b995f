//! Neural parameterisation of rule probabilities given a compound vector.

mod model;
mod tables;

pub use model::{FactorizationMode, LpcfgModel, ModelConfig, TableVars, WordRole};
pub use tables::RuleScoreTables;
