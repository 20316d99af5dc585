//! The guide's chapters, compiled as doc-tests.
//!
//! mdBook renders `book/` for reading, but mdBook cannot type-check or run
//! the Rust snippets inside it. Each chapter is therefore included here as
//! the documentation of an empty module, which makes `cargo test --doc`
//! compile and execute every snippet in the book against the current public
//! API. One module per chapter, so a failure names the chapter it came from.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/noisy-channel.md")]
pub mod noisy_channel {}

#[doc = include_str!("../../../book/src/prefix-index.md")]
pub mod prefix_index {}

#[doc = include_str!("../../../book/src/vectors.md")]
pub mod vectors {}

#[doc = include_str!("../../../book/src/reranking.md")]
pub mod reranking {}

#[doc = include_str!("../../../book/src/session-cache.md")]
pub mod session_cache {}

#[doc = include_str!("../../../book/src/conditional-model.md")]
pub mod conditional_model {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/synthetic-data.md")]
pub mod synthetic_data {}

#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}

#[doc = include_str!("../../../book/src/cli-pipeline.md")]
pub mod cli_pipeline {}
