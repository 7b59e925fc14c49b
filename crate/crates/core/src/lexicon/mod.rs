//! Edit distance, character error rate and dictionary spell correction.

mod dictionary;
mod distance;

use thiserror::Error;

pub use dictionary::Dictionary;
pub use distance::{cer, cer_report, levenshtein, CerReport, EvalPair};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexiconError {
    #[error("corpus has no ground-truth characters")]
    EmptyCorpus,
    #[error("dictionary words must be non-empty")]
    EmptyWord,
    #[error("dictionary line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}
