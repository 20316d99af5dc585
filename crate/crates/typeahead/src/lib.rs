//! Session-personalized query auto-completion for e-commerce search.
//!
//! The crate implements a retrieve-and-rerank type-ahead engine. A
//! noisy-channel prefix index retrieves candidate queries for the typed
//! seed, scoring each candidate `q` for typed text `t` as `P(q) * P(t|q)`:
//! a popularity prior from historical search logs times a keyboard-aware
//! typo model. Retrieved candidates are then reranked against the current
//! session, represented as the mean of reduced product image vectors the
//! shopper has viewed, either by cosine similarity against precomputed
//! query vectors or by a character-level encoder-decoder language model
//! conditioned on the session vector.
//!
//! Because the session vector lives in a product vector space shared across
//! shops, a vector pooled on one shop can personalize suggestions on
//! another shop where the shopper has no history at all.
//!
//! Modules:
//!
//! - [`ingest`]: dataset formats (catalogs, event logs, search logs) and a
//!   deterministic synthetic generator ([`ingest::synth`]).
//! - [`vectors`]: PCA reduction, query vectors, session pooling.
//! - [`lm`]: popularity priors, the typo error model, the prefix trie index
//!   and a category-bucketed Markov baseline.
//! - [`rerank`]: cosine reranking of retrieved candidates.
//! - [`encdec`]: the encoder-decoder character model, written from scratch
//!   with its own backpropagation and Adam optimizer.
//! - [`session`]: the online session-vector cache with TTL eviction and
//!   cross-shop transfer.
//! - [`eval`]: offline MRR@k evaluation pipelines and reports.
//! - [`service`]: the HTTP suggestion service with an asynchronous
//!   best-effort rescoring worker.
//! - [`cli`]: the `typeahead` command-line pipeline.
//!
//! The `book/` directory of the repository is an mdBook walking through the
//! same material chapter by chapter; its code snippets compile as doc-tests
//! via the [`book`] module.

pub mod book;
pub mod cli;
pub mod encdec;
pub mod error;
pub mod eval;
pub mod hash;
pub mod ingest;
pub mod linalg;
pub mod lm;
pub mod rerank;
pub mod service;
pub mod session;
pub mod text;
pub mod vectors;

pub use error::{Error, Result};
