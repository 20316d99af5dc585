//! Cosine re-ranking of retrieved candidates against the session vector.
//!
//! The unconditioned index hands over its top N*k candidates (k defaults to
//! 5, so 25 candidates for 5 suggestion slots) and this module reorders them
//! by cosine similarity between each candidate's query vector and the live
//! session vector, truncating to the final suggestion count. Candidates
//! without a query vector (never clicked in the training logs) are kept but
//! demoted below all vectorized candidates, preserving their unconditioned
//! relative order, so the suggestion list stays size-stable. Ties on cosine
//! also fall back to unconditioned order via stable sorting.
//!
//! Ranking is by pure similarity; `blend` can mix the unconditioned signal
//! back in but stays 0 unless explicitly requested.

use crate::error::{Error, Result};
use crate::linalg;

/// Multiplier between the final suggestion count and the retrieval depth.
pub const RETRIEVAL_MULTIPLIER: usize = 5;

/// Cosine similarity `a·b / (‖a‖‖b‖)`, clamped into [−1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    let na = linalg::norm(a);
    let nb = linalg::norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of zero vector".into()));
    }
    Ok((linalg::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// One rerank call: candidates in descending unconditioned order, the
/// session vector, and how many suggestions survive.
#[derive(Debug, Clone)]
pub struct RerankRequest<'a> {
    pub candidates: &'a [(&'a str, f64)],
    pub session_vector: &'a [f64],
    pub n_final: usize,
    /// Weight of the unconditioned score in the final key; 0 means pure
    /// similarity ordering.
    pub blend: f64,
}

impl<'a> RerankRequest<'a> {
    pub fn new(
        candidates: &'a [(&'a str, f64)],
        session_vector: &'a [f64],
        n_final: usize,
    ) -> Self {
        RerankRequest { candidates, session_vector, n_final, blend: 0.0 }
    }
}

/// One reranked suggestion. `similarity` is `None` for candidates that had
/// no query vector and were demoted.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranked<'a> {
    pub query: &'a str,
    pub similarity: Option<f64>,
    pub unconditioned: f64,
}

/// Reorder candidates by cosine against the session vector.
///
/// A session vector with zero norm carries no information; the request then
/// degrades to the unconditioned order, truncated. The same happens to any
/// candidate whose query vector has zero norm: it is treated as missing.
pub fn rerank<'a, F>(request: &RerankRequest<'a>, query_vector: F) -> Vec<Reranked<'a>>
where
    F: Fn(&str) -> Option<&'a [f64]>,
{
    let passthrough = |candidates: &[(&'a str, f64)]| {
        candidates
            .iter()
            .take(request.n_final)
            .map(|(q, s)| Reranked { query: *q, similarity: None, unconditioned: *s })
            .collect::<Vec<_>>()
    };
    if linalg::norm(request.session_vector) == 0.0 {
        return passthrough(request.candidates);
    }
    let max_uncond = request
        .candidates
        .iter()
        .map(|(_, s)| *s)
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let mut vectorized: Vec<(Reranked<'a>, f64)> = Vec::new();
    let mut missing: Vec<Reranked<'a>> = Vec::new();
    for (query, unconditioned) in request.candidates {
        match query_vector(query).and_then(|v| cosine(v, request.session_vector).ok()) {
            Some(similarity) => {
                let key = (1.0 - request.blend) * similarity
                    + request.blend * (unconditioned / max_uncond);
                vectorized.push((
                    Reranked { query, similarity: Some(similarity), unconditioned: *unconditioned },
                    key,
                ));
            }
            None => missing.push(Reranked {
                query,
                similarity: None,
                unconditioned: *unconditioned,
            }),
        }
    }
    // Stable sort: equal keys keep unconditioned order.
    vectorized.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    vectorized
        .into_iter()
        .map(|(r, _)| r)
        .chain(missing)
        .take(request.n_final)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_basics() {
        let v = vec![0.3, -1.2, 2.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_matches_formula_oracle() {
        let a = vec![1.5, -2.0, 0.25, 3.0];
        let b = vec![-0.5, 1.0, 4.0, 2.0];
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((cosine(&a, &b).unwrap() - dot / (na * nb)).abs() < 1e-12);
    }

    fn lookup<'a>(
        table: &'a [(&'a str, Vec<f64>)],
    ) -> impl Fn(&str) -> Option<&'a [f64]> + 'a {
        move |q| table.iter().find(|(name, _)| *name == q).map(|(_, v)| v.as_slice())
    }

    #[test]
    fn identical_vectors_keep_unconditioned_order() {
        let table = vec![
            ("a", vec![1.0, 1.0]),
            ("b", vec![1.0, 1.0]),
            ("c", vec![1.0, 1.0]),
        ];
        let candidates = [("a", 0.5), ("b", 0.3), ("c", 0.2)];
        let sv = vec![2.0, 0.5];
        let got = rerank(&RerankRequest::new(&candidates, &sv, 3), lookup(&table));
        let order: Vec<&str> = got.iter().map(|r| r.query).collect();
        assert_eq!(order, vec!["a", "b", "c"]);
    }

    #[test]
    fn matching_vector_wins() {
        let table = vec![
            ("a", vec![0.0, 1.0]),
            ("b", vec![1.0, 0.0]),
            ("c", vec![0.0, -1.0]),
        ];
        let candidates = [("a", 0.5), ("b", 0.3), ("c", 0.2)];
        let sv = vec![1.0, 0.0];
        let got = rerank(&RerankRequest::new(&candidates, &sv, 3), lookup(&table));
        assert_eq!(got[0].query, "b");
        assert_eq!(got[0].similarity, Some(1.0));
    }

    #[test]
    fn matches_full_sort_oracle() {
        let table: Vec<(&str, Vec<f64>)> = vec![
            ("q0", vec![0.9, 0.1, 0.3]),
            ("q1", vec![-0.2, 0.8, 0.1]),
            ("q2", vec![0.4, 0.4, 0.4]),
            ("q3", vec![-0.9, -0.1, 0.2]),
            ("q4", vec![0.1, -0.7, 0.6]),
            ("q5", vec![0.33, 0.21, -0.5]),
            ("q6", vec![0.05, 0.95, 0.05]),
            ("q7", vec![0.7, -0.3, 0.64]),
            ("q8", vec![-0.45, 0.5, 0.74]),
            ("q9", vec![0.6, 0.6, -0.2]),
        ];
        let candidates: Vec<(&str, f64)> =
            (0..10).map(|i| (table[i].0, 1.0 / (i + 1) as f64)).collect();
        let sv = vec![0.5, 0.2, 0.8];
        let got = rerank(&RerankRequest::new(&candidates, &sv, 10), lookup(&table));
        // Oracle: sort the full list by cosine, descending.
        let mut want: Vec<(&str, f64)> = table
            .iter()
            .map(|(q, v)| (*q, cosine(v, &sv).unwrap()))
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        for (r, (wq, ws)) in got.iter().zip(&want) {
            assert_eq!(r.query, *wq);
            assert!((r.similarity.unwrap() - ws).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_vectors_demoted_in_input_order() {
        let table = vec![("a", vec![1.0, 0.0]), ("d", vec![0.9, 0.1])];
        let candidates = [("b", 0.9), ("a", 0.5), ("c", 0.4), ("d", 0.1)];
        let sv = vec![1.0, 0.0];
        let got = rerank(&RerankRequest::new(&candidates, &sv, 4), lookup(&table));
        let order: Vec<&str> = got.iter().map(|r| r.query).collect();
        assert_eq!(order, vec!["a", "d", "b", "c"]);
        assert_eq!(got[2].similarity, None);
        // Truncation still applies after demotion.
        let got = rerank(&RerankRequest::new(&candidates, &sv, 2), lookup(&table));
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn zero_session_vector_degrades_to_unconditioned() {
        let table = vec![("a", vec![0.0, 1.0]), ("b", vec![1.0, 0.0])];
        let candidates = [("a", 0.5), ("b", 0.3)];
        let sv = vec![0.0, 0.0];
        let got = rerank(&RerankRequest::new(&candidates, &sv, 2), lookup(&table));
        let order: Vec<&str> = got.iter().map(|r| r.query).collect();
        assert_eq!(order, vec!["a", "b"]);
        assert!(got.iter().all(|r| r.similarity.is_none()));
    }

    #[test]
    fn full_blend_restores_unconditioned_order() {
        let table = vec![("a", vec![0.0, 1.0]), ("b", vec![1.0, 0.0])];
        let candidates = [("a", 0.5), ("b", 0.3)];
        let sv = vec![1.0, 0.0];
        let mut request = RerankRequest::new(&candidates, &sv, 2);
        request.blend = 1.0;
        let got = rerank(&request, lookup(&table));
        let order: Vec<&str> = got.iter().map(|r| r.query).collect();
        assert_eq!(order, vec!["a", "b"]);
    }

    proptest! {
        #[test]
        fn ranking_is_scale_invariant(
            scale in 0.001_f64..1000.0,
            sv in proptest::collection::vec(-5.0_f64..5.0, 3),
            vecs in proptest::collection::vec(proptest::collection::vec(-5.0_f64..5.0, 3), 2..8),
        ) {
            let table: Vec<(String, Vec<f64>)> =
                vecs.into_iter().enumerate().map(|(i, v)| (format!("q{i}"), v)).collect();
            let names: Vec<&str> = table.iter().map(|(n, _)| n.as_str()).collect();
            let candidates: Vec<(&str, f64)> =
                names.iter().enumerate().map(|(i, n)| (*n, 1.0 / (i + 1) as f64)).collect();
            let scaled: Vec<f64> = sv.iter().map(|v| v * scale).collect();
            let find = |q: &str| table.iter().find(|(n, _)| n == q).map(|(_, v)| v.as_slice());
            let a = rerank(&RerankRequest::new(&candidates, &sv, names.len()), find);
            let b = rerank(&RerankRequest::new(&candidates, &scaled, names.len()), find);
            let oa: Vec<&str> = a.iter().map(|r| r.query).collect();
            let ob: Vec<&str> = b.iter().map(|r| r.query).collect();
            prop_assert_eq!(oa, ob);
        }

        #[test]
        fn appending_candidate_preserves_relative_order(
            sv in proptest::collection::vec(-5.0_f64..5.0, 3),
            vecs in proptest::collection::vec(proptest::collection::vec(-5.0_f64..5.0, 3), 3..8),
        ) {
            let table: Vec<(String, Vec<f64>)> =
                vecs.into_iter().enumerate().map(|(i, v)| (format!("q{i}"), v)).collect();
            let names: Vec<&str> = table.iter().map(|(n, _)| n.as_str()).collect();
            let (extra, rest) = names.split_last().unwrap();
            let base: Vec<(&str, f64)> =
                rest.iter().enumerate().map(|(i, n)| (*n, 1.0 / (i + 1) as f64)).collect();
            let mut extended = base.clone();
            extended.push((*extra, 0.01));
            let find = |q: &str| table.iter().find(|(n, _)| n == q).map(|(_, v)| v.as_slice());
            let a = rerank(&RerankRequest::new(&base, &sv, base.len()), find);
            let b = rerank(&RerankRequest::new(&extended, &sv, extended.len()), find);
            let oa: Vec<&str> = a.iter().map(|r| r.query).collect();
            let ob: Vec<&str> = b.iter().filter(|r| r.query != *extra).map(|r| r.query).collect();
            prop_assert_eq!(oa, ob);
        }
    }
}
