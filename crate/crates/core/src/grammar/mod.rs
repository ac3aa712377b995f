//! Symbols, lexicalized trees and the dependency structure they encode.

pub mod bracket;
pub mod deps;
pub mod heads;
pub mod tree;
pub mod vocab;

pub use bracket::{parse_bracketed, parse_tree_file, write_lex_tree, BracketTree};
pub use deps::{parse_dependency_file, write_dependency_file, DepSentence, DependencyArcs};
pub use heads::{heuristic_head_assign, relabel_heads, HeadRule};
pub use tree::{Direction, GrammarSignature, LexNode, LexTree, RuleInstance, Span};
pub use vocab::{Vocab, UNK_TOKEN};

/// Minimum sentence length the model can describe.
pub const MIN_SENTENCE_LEN: usize = 2;
