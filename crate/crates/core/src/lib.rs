//! Typed implication questions for visual question answering.
//!
//! Rule-based generation of logical-equivalence, necessary-condition and
//! mutual-exclusion questions from question/answer pairs, dataset readers and
//! writers, consistency/robustness/NLG/attention metrics, and a cyclic loss
//! harness run against a pluggable answerer.

pub mod cli;
pub mod config;
pub mod cyclic;
pub mod error;
pub mod generate;
pub mod io;
pub mod metrics;
pub mod question;
pub mod text;

pub use error::{Error, JsonDefect, Result};
pub use generate::{generate, Implication, ImplicationType, ImpliedAnswer};
pub use io::{ImplicationRecord, QAPair, RephrasingGroup};
pub use question::{classify, ParsedQuestion, QuestionKind};
pub use text::{normalize, TokenSeq};
