//! Reverse-exclusion graph-of-thought reasoning for dialogue commonsense
//! multi-choice questions.
//!
//! The pipeline first asks a model which options are wrong, then judges every
//! option against that exclusion analysis, then combines both into an answer
//! set. Several sampled paths are merged into a thought graph and a vote.
//! Four prompting baselines share the same backend and evaluation harness.

pub mod backend;
pub mod dataset;
pub mod eval;
pub mod fixtures;
pub mod model;
pub mod parser;
pub mod prompts;
pub mod reasoner;
pub mod runner;

pub use backend::{Backend, BackendError, CacheMode, Completion, CompletionRequest};
pub use dataset::{corpus_stats, filter_multi, load_corpus, save_corpus, Corpus, CorpusFormat};
pub use eval::{compare_report, evaluate, exact_match, macro_f1, EvalReport};
pub use model::{McqInstance, OptionSet, Prediction, RawInstance, Strategy, Utterance};
pub use reasoner::{run_strategy, ReasonerConfig};
pub use runner::{run, RunConfig};
