//! Prelim-attention hallucination detection for vision-language traces.
//!
//! Traces are read from binary containers, object mentions are matched
//! against a class vocabulary, and each mention is scored by attention-
//! and logit-based detectors whose separation is then evaluated.

pub mod container;
pub mod eval;
pub mod matching;
pub mod scoring;
pub mod sim;
pub mod trace;

pub use container::{decode_trace, encode_trace, read_trace_file, validate_corpus, FormatError};
pub use eval::{auroc, evaluate, EvalError, EvalReport};
pub use matching::{discover_mentions, label_mentions, ClassVocabulary, Label, ObjectMention};
pub use scoring::{score_corpus, Detector, ScoreError, ScoreRecord};
pub use sim::{generate_corpus, generate_trace, SimConfig};
pub use trace::{SpanLayout, TokenRole, Trace, TraceError};
