//! Greedy bottom-up constituency parsing with a jointly trained recursive
//! node composer.
//!
//! A sliding-window tagger scores BIOES-prefixed labels over the current
//! sequence of constituents, a constrained Viterbi pass turns the scores into
//! a coherent set of new nodes, and arity-specific composition networks
//! summarize each new node into a vector that feeds the next iteration.

pub mod composer;
pub mod decoder;
pub mod ensemble_eval;
pub mod error;
pub mod greedy_parser;
pub mod nncore;
pub mod synth;
pub mod tagger;
pub mod trainer;
pub mod tree;
pub mod treebank;
pub mod vocab;

pub use error::{Error, Result};
pub use tree::{ParseTree, Span};
