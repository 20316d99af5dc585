//! Category-bucketed bigram baseline.
//!
//! Sessions are mapped to one of a fixed set of buckets (here: the modal
//! catalog category of viewed products) and each bucket carries a Laplace-
//! smoothed bigram model over query tokens. Scoring a query in an unknown
//! bucket falls back to the pooled global counts, and the result says so.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

#[derive(Debug, Clone, Default, PartialEq)]
struct BigramCounts {
    pairs: HashMap<(String, String), u64>,
    totals: HashMap<String, u64>,
}

impl BigramCounts {
    fn add(&mut self, prev: &str, next: &str, weight: u64) {
        *self.pairs.entry((prev.to_string(), next.to_string())).or_insert(0) += weight;
        *self.totals.entry(prev.to_string()).or_insert(0) += weight;
    }

    fn pair(&self, prev: &str, next: &str) -> u64 {
        self.pairs.get(&(prev.to_string(), next.to_string())).copied().unwrap_or(0)
    }

    fn total(&self, prev: &str) -> u64 {
        self.totals.get(prev).copied().unwrap_or(0)
    }
}

/// Per-bucket bigram counts with Laplace smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    alpha: f64,
    buckets: HashMap<String, BigramCounts>,
    global: BigramCounts,
    /// All tokens that may follow another token, EOS included. BOS is not a
    /// valid successor, so it stays outside.
    vocab: BTreeSet<String>,
}

/// Score of one query under one bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovScore {
    pub log_prob: f64,
    /// True when the requested bucket was unknown and the global counts
    /// answered instead.
    pub used_global_fallback: bool,
}

/// Train from `(bucket, query, weight)` observations.
pub fn train<'a>(
    examples: impl IntoIterator<Item = (&'a str, &'a str, u64)>,
    alpha: f64,
) -> Result<MarkovModel> {
    if alpha <= 0.0 {
        return Err(Error::Argument("laplace alpha must be positive".into()));
    }
    let mut model = MarkovModel {
        alpha,
        buckets: HashMap::new(),
        global: BigramCounts::default(),
        vocab: BTreeSet::new(),
    };
    let mut any = false;
    for (bucket, query, weight) in examples {
        let tokens = tokenize(query);
        if tokens.is_empty() || weight == 0 {
            continue;
        }
        any = true;
        let counts = model.buckets.entry(bucket.to_string()).or_default();
        let mut prev = BOS;
        for t in &tokens {
            counts.add(prev, t, weight);
            model.global.add(prev, t, weight);
            model.vocab.insert(t.to_string());
            prev = t;
        }
        counts.add(prev, EOS, weight);
        model.global.add(prev, EOS, weight);
    }
    model.vocab.insert(EOS.to_string());
    if !any {
        return Err(Error::Argument("markov train: no usable examples".into()));
    }
    Ok(model)
}

impl MarkovModel {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn buckets(&self) -> impl Iterator<Item = &str> {
        self.buckets.keys().map(|b| b.as_str())
    }

    /// Laplace-smoothed bigram log-probability of `query` in `bucket`,
    /// including begin/end transitions.
    pub fn score(&self, bucket: &str, query: &str) -> Result<MarkovScore> {
        let tokens = tokenize(query);
        if tokens.is_empty() {
            return Err(Error::Argument("markov score: query has no tokens".into()));
        }
        let (counts, used_global_fallback) = match self.buckets.get(bucket) {
            Some(c) => (c, false),
            None => (&self.global, true),
        };
        let v = self.vocab.len() as f64;
        let mut log_prob = 0.0;
        let mut prev = BOS;
        for t in tokens.iter().copied().chain(std::iter::once(EOS)) {
            let num = counts.pair(prev, t) as f64 + self.alpha;
            let den = counts.total(prev) as f64 + self.alpha * v;
            log_prob += (num / den).ln();
            prev = t;
        }
        Ok(MarkovScore { log_prob, used_global_fallback })
    }

    /// Smoothed conditional P(next | prev) in a bucket; test and audit hook.
    pub fn conditional(&self, bucket: Option<&str>, prev: &str, next: &str) -> f64 {
        let counts = bucket.and_then(|b| self.buckets.get(b)).unwrap_or(&self.global);
        let v = self.vocab.len() as f64;
        (counts.pair(prev, next) as f64 + self.alpha)
            / (counts.total(prev) as f64 + self.alpha * v)
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(|t| t.as_str())
    }
}

/// Bucket of a session: the modal category among viewed products, ties
/// broken by the most recently viewed contender. `categories` is ordered by
/// view time, oldest first.
pub fn modal_bucket(categories: &[&str]) -> Option<String> {
    if categories.is_empty() {
        return None;
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, cat) in categories.iter().enumerate() {
        let slot = counts.entry(cat).or_insert((0, 0));
        slot.0 += 1;
        slot.1 = pos;
    }
    counts
        .into_iter()
        .max_by_key(|(_, (count, last_pos))| (*count, *last_pos))
        .map(|(cat, _)| cat.to_string())
}
