//! Grammar-constrained chart parsing for aspect sentiment quadruple
//! extraction.
//!
//! The pipeline: gold quadruples are rendered as opinion trees over the
//! sentence, trees are pruned to a compact span/label form, a span scorer
//! assigns each (start, end, label) a real score, and a CKY-style decoder
//! finds the best tree licensed by the grammar. Quadruples are then read
//! back off the decoded tree. Training is structured max-margin with
//! loss-augmented decoding.

pub mod bruteforce;
pub mod builder;
pub mod chart;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod quad;
pub mod recover;
pub mod scorer;
pub mod synth;
pub mod table;
pub mod trainer;
pub mod tree;

pub use error::{Error, Result};
