//! Conversational query rewriting toolkit.
//!
//! Turns context-dependent conversational questions into standalone search
//! queries with instructed LLM rewriters and rewrite editors, retrieves
//! passages with BM25 and exact dense search, and scores the resulting runs
//! with TREC-style metrics.
//!
//! The pipeline stages map onto modules:
//!
//! - [`corpus`]: dataset ingestion, first-turn replacement, evaluable-task filtering
//! - [`prompting`]: byte-stable rewriter and editor prompts, instruction ablations
//! - [`llm`]: chat-completion client with caching, retries, rate limiting and a mock
//! - [`rewriter`]: rewrite methods and output sanitization
//! - [`sparse`]: analyzer, BM25 inverted index and its on-disk format
//! - [`dense`]: embedding providers and sharded brute-force cosine search
//! - [`retrieval`]: rewrite records to TREC runs over either retriever
//! - [`eval`]: run/qrels I/O, metrics, pairwise win/tie, report tables
//! - [`analysis`]: token statistics, ROUGE-1 and latency summaries
//! - [`distill`]: student-model training set export

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod dense;
pub mod distill;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod llm;
pub mod prompting;
pub mod ranking;
pub mod retrieval;
pub mod rewriter;
pub mod sparse;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use ranking::ScoredDoc;
