//! Exact inference over lexicalized trees: inside scores with their reverse
//! sweep, Viterbi parsing, exhaustive enumeration and ancestral sampling.

mod decode;
mod enumerate;
mod inside;
mod sample;
mod viterbi;

pub use decode::decode;
pub use enumerate::{enumerate_trees, oracle_compare, tree_log_score, OracleComparison, MAX_ENUMERATION_LEN};
pub use inside::{inside, inside_backward, inside_var, Chart, TableGradients};
pub use sample::{sample_tree, sample_with_retries, DenseGrammar, ModelGrammar, RuleSource, Sample};
pub use viterbi::viterbi;
