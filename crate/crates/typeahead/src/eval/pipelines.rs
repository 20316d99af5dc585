//! Model pipelines: each wires retrieval and one reranking strategy into
//! the common [`Suggester`] interface the benchmark runner drives.
//!
//! Every personalized pipeline follows the same retrieve-and-rerank shape:
//! fetch `k * RETRIEVAL_MULTIPLIER` candidates from the prefix index in
//! noisy-channel order, then reorder them with the model under test and
//! keep the top `k`. When a session carries no usable context the pipeline
//! degrades to the unconditioned retrieval order, so personalization can
//! only ever be additive on top of a working baseline.

use std::collections::HashMap;

use super::{pooled_mean, EvalCase};
use crate::encdec::{EncDecModel, EncoderKind, LengthNorm};
use crate::lm::markov::{modal_bucket, MarkovModel};
use crate::lm::TrieIndex;
use crate::rerank::{rerank, RerankRequest, RETRIEVAL_MULTIPLIER};
use crate::vectors::{Pooled, VectorTable};

/// A named suggestion model under evaluation. Implementations must be
/// deterministic and read-only: the benchmark runner may replay them in any
/// order.
pub trait Suggester {
    fn name(&self) -> &str;
    /// Up to `k` ranked suggestions for a typed seed within a session.
    fn suggest(&self, case: &EvalCase, seed: &str, k: usize) -> Vec<String>;
}

/// Unpersonalized baseline: the prefix index's own noisy-channel order.
pub struct PopularityPipeline<'a> {
    trie: &'a TrieIndex,
}

impl<'a> PopularityPipeline<'a> {
    pub fn new(trie: &'a TrieIndex) -> Self {
        PopularityPipeline { trie }
    }
}

impl Suggester for PopularityPipeline<'_> {
    fn name(&self) -> &str {
        "popularity"
    }

    fn suggest(&self, _case: &EvalCase, seed: &str, k: usize) -> Vec<String> {
        self.trie.retrieve(seed, k).into_iter().map(|(q, _)| q.to_string()).collect()
    }
}

/// Cosine reranking against the pooled session vector, using the query
/// vectors attached to the index's candidate entries.
pub struct SimilarityPipeline<'a> {
    trie: &'a TrieIndex,
    products: &'a VectorTable,
    blend: f64,
}

impl<'a> SimilarityPipeline<'a> {
    pub fn new(trie: &'a TrieIndex, products: &'a VectorTable) -> Self {
        SimilarityPipeline { trie, products, blend: 0.0 }
    }

    /// Rerank with an explicit session vector (or none). The cross-shop
    /// benchmark calls this with a transferred vector.
    pub fn suggest_with_vector(
        &self,
        session_vector: Option<&[f64]>,
        seed: &str,
        k: usize,
    ) -> Vec<String> {
        let candidates = self.trie.retrieve(seed, k * RETRIEVAL_MULTIPLIER);
        let Some(sv) = session_vector else {
            return candidates.into_iter().take(k).map(|(q, _)| q.to_string()).collect();
        };
        let request = RerankRequest {
            candidates: &candidates,
            session_vector: sv,
            n_final: k,
            blend: self.blend,
        };
        rerank(&request, |q| self.trie.candidate(q).and_then(|c| c.query_vector.as_deref()))
            .into_iter()
            .map(|r| r.query.to_string())
            .collect()
    }
}

impl Suggester for SimilarityPipeline<'_> {
    fn name(&self) -> &str {
        "similarity"
    }

    fn suggest(&self, case: &EvalCase, seed: &str, k: usize) -> Vec<String> {
        let sv = pooled_mean(&case.context_skus, self.products);
        self.suggest_with_vector(sv.as_deref(), seed, k)
    }
}

/// Category-bucketed bigram baseline: candidates are rescored by the
/// character bigram model of the session's modal viewed category.
pub struct MarkovPipeline<'a> {
    trie: &'a TrieIndex,
    model: &'a MarkovModel,
    sku_category: &'a HashMap<String, String>,
}

impl<'a> MarkovPipeline<'a> {
    pub fn new(
        trie: &'a TrieIndex,
        model: &'a MarkovModel,
        sku_category: &'a HashMap<String, String>,
    ) -> Self {
        MarkovPipeline { trie, model, sku_category }
    }
}

impl Suggester for MarkovPipeline<'_> {
    fn name(&self) -> &str {
        "markov"
    }

    fn suggest(&self, case: &EvalCase, seed: &str, k: usize) -> Vec<String> {
        let categories: Vec<&str> = case
            .context_skus
            .iter()
            .filter_map(|sku| self.sku_category.get(sku).map(|c| c.as_str()))
            .collect();
        // An unknown bucket name falls back to the global counts, which is
        // exactly what a context-free session should score against.
        let bucket = modal_bucket(&categories).unwrap_or_default();
        let candidates = self.trie.retrieve(seed, k * RETRIEVAL_MULTIPLIER);
        let mut scored: Vec<(&str, f64)> = candidates
            .iter()
            .map(|(q, _)| {
                let score = self
                    .model
                    .score(&bucket, q)
                    .map(|s| s.log_prob)
                    .unwrap_or(f64::NEG_INFINITY);
                (*q, score)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        scored.into_iter().take(k).map(|(q, _)| q.to_string()).collect()
    }
}

/// Conditional language-model reranking: candidates are rescored by the
/// encoder-decoder's length-normalized log-likelihood given the session.
pub struct EncDecPipeline<'a> {
    trie: &'a TrieIndex,
    model: &'a EncDecModel,
    products: &'a VectorTable,
    norm: LengthNorm,
}

impl<'a> EncDecPipeline<'a> {
    pub fn new(trie: &'a TrieIndex, model: &'a EncDecModel, products: &'a VectorTable) -> Self {
        EncDecPipeline { trie, model, products, norm: LengthNorm::default() }
    }

    pub fn with_norm(mut self, norm: LengthNorm) -> Self {
        self.norm = norm;
        self
    }

    fn session_of(&self, case: &EvalCase) -> Option<Pooled> {
        let vectors: Vec<Vec<f64>> = case
            .context_skus
            .iter()
            .filter_map(|sku| self.products.get(sku).map(|v| v.to_vec()))
            .collect();
        if vectors.is_empty() {
            return None;
        }
        Some(match self.model.variant {
            EncoderKind::Avg => {
                Pooled::Vector(crate::linalg::mean(&vectors).expect("non-empty"))
            }
            EncoderKind::Full => Pooled::Sequence(vectors),
        })
    }

    /// Rerank with an explicit single session vector; a Full-variant model
    /// receives it as a length-1 sequence.
    pub fn suggest_with_vector(
        &self,
        session_vector: Option<&[f64]>,
        seed: &str,
        k: usize,
    ) -> Vec<String> {
        let session = session_vector.map(|v| match self.model.variant {
            EncoderKind::Avg => Pooled::Vector(v.to_vec()),
            EncoderKind::Full => Pooled::Sequence(vec![v.to_vec()]),
        });
        self.suggest_with_session(session, seed, k)
    }

    fn suggest_with_session(&self, session: Option<Pooled>, seed: &str, k: usize) -> Vec<String> {
        let candidates = self.trie.retrieve(seed, k * RETRIEVAL_MULTIPLIER);
        let passthrough = || -> Vec<String> {
            candidates.iter().take(k).map(|(q, _)| q.to_string()).collect()
        };
        let Some(session) = session else { return passthrough() };
        let names: Vec<&str> = candidates.iter().map(|(q, _)| *q).collect();
        match self.model.rerank_encdec(&session, &names, self.norm) {
            Ok(ranked) => ranked.into_iter().take(k).map(|(q, _)| q.to_string()).collect(),
            // A malformed session (e.g. wrong dimension) must not take the
            // suggestion path down; serve the unconditioned order.
            Err(_) => passthrough(),
        }
    }
}

impl Suggester for EncDecPipeline<'_> {
    fn name(&self) -> &str {
        match self.model.variant {
            EncoderKind::Avg => "encdec-avg",
            EncoderKind::Full => "encdec-full",
        }
    }

    fn suggest(&self, case: &EvalCase, seed: &str, k: usize) -> Vec<String> {
        self.suggest_with_session(self.session_of(case), seed, k)
    }
}
