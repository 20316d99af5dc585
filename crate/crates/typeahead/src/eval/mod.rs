//! Offline evaluation: temporal train/test split, MRR@k over seed lengths,
//! dispersion analysis, model comparison and cross-shop benchmarks.
//!
//! The protocol mirrors how a production type-ahead would be assessed from
//! logs alone: train every artifact on sessions before a time boundary,
//! then replay later sessions, asking each model for suggestions given the
//! session's product views and the first 0 or 1 characters of the query the
//! shopper eventually issued. The mean reciprocal rank of that query within
//! the top k suggestions, averaged over several sampled runs, is the
//! headline number.

pub mod pipelines;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{EventPayload, SearchLogEntry, SessionGroup};
use crate::linalg;
use crate::vectors::VectorTable;
use pipelines::Suggester;

/// One replayable test case: what the shopper viewed before searching, and
/// what they searched for.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub shop_id: String,
    pub session_id: String,
    /// SKUs viewed strictly before the first search event.
    pub context_skus: Vec<String>,
    /// The normalized first search query; the ground-truth suggestion.
    pub target: String,
    /// Timestamp of the search event, epoch milliseconds.
    pub timestamp: i64,
}

/// A cross-shop pair: browsing context on a source shop, and an
/// [`EvalCase`] on a different target shop for the same shopper.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedCase {
    pub source_shop: String,
    pub source_skus: Vec<String>,
    pub case: EvalCase,
}

/// Mean reciprocal rank at cutoff `k`.
///
/// Each ranked list contributes `1/rank` of its target within the first `k`
/// entries, or 0 when absent; the result is the mean over lists.
pub fn mrr_at_k(ranked_lists: &[Vec<String>], targets: &[String], k: usize) -> Result<f64> {
    if ranked_lists.is_empty() {
        return Err(Error::Argument("mrr_at_k: empty input".into()));
    }
    if ranked_lists.len() != targets.len() {
        return Err(Error::Argument(format!(
            "mrr_at_k: {} lists vs {} targets",
            ranked_lists.len(),
            targets.len()
        )));
    }
    if k == 0 {
        return Err(Error::Argument("mrr_at_k: k must be >= 1".into()));
    }
    let mut sum = 0.0;
    for (list, target) in ranked_lists.iter().zip(targets) {
        if let Some(pos) = list.iter().take(k).position(|s| s == target) {
            sum += 1.0 / (pos + 1) as f64;
        }
    }
    Ok(sum / ranked_lists.len() as f64)
}

/// Split sessions at a time boundary. A session belongs to the test side
/// when its first search event is at or after the boundary; sessions without
/// a search are assigned by their first event and can only train. Both sides
/// must end up non-empty.
pub fn temporal_split(
    sessions: &[SessionGroup],
    boundary: i64,
) -> Result<(Vec<SessionGroup>, Vec<SessionGroup>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for group in sessions {
        let anchor = group
            .first_search()
            .map(|(e, _)| e.timestamp)
            .or_else(|| group.events.first().map(|e| e.timestamp));
        let Some(anchor) = anchor else { continue };
        if anchor < boundary {
            train.push(group.clone());
        } else if group.first_search().is_some() {
            test.push(group.clone());
        }
        // A search-free session after the boundary is useless to either side.
    }
    if train.is_empty() {
        return Err(Error::Degenerate("temporal_split: no training sessions before boundary".into()));
    }
    if test.is_empty() {
        return Err(Error::Degenerate("temporal_split: no test sessions after boundary".into()));
    }
    Ok((train, test))
}

/// Extract replayable cases: sessions with at least one search event yield
/// one case each, whose context is every product viewed strictly before
/// that first search.
pub fn extract_cases(sessions: &[SessionGroup], shop_id: &str) -> Vec<EvalCase> {
    let mut cases = Vec::new();
    for group in sessions {
        let Some((search_event, query)) = group.first_search() else { continue };
        let search_ts = search_event.timestamp;
        let mut context = Vec::new();
        for event in &group.events {
            if event.timestamp >= search_ts {
                break;
            }
            if let EventPayload::View { sku } = &event.payload {
                context.push(sku.clone());
            }
        }
        cases.push(EvalCase {
            shop_id: shop_id.to_string(),
            session_id: group.session_id.clone(),
            context_skus: context,
            target: query.to_string(),
            timestamp: search_ts,
        });
    }
    cases
}

/// The most recent `fraction` of training sessions (by first event time),
/// for training-size sweeps.
pub fn latest_fraction(sessions: &[SessionGroup], fraction: f64) -> Result<Vec<SessionGroup>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument("fraction must be in (0, 1]".into()));
    }
    let mut sorted: Vec<&SessionGroup> = sessions.iter().collect();
    sorted.sort_by_key(|g| (g.events.first().map(|e| e.timestamp), g.session_id.clone()));
    let keep = ((sessions.len() as f64) * fraction).ceil() as usize;
    Ok(sorted[sessions.len() - keep..].iter().map(|g| (*g).clone()).collect())
}

/// Whether a query's clicked products scatter widely around their centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispersionClass {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionRecord {
    pub query: String,
    pub dispersion: f64,
    pub class: DispersionClass,
}

/// Dispersion per query: the sum of distances between each distinct clicked
/// product's vector and their centroid. Classes split at the median: above
/// is high, at or below is low.
pub fn dispersion_split(
    search_log: &[SearchLogEntry],
    product_vectors: &VectorTable,
) -> Result<Vec<DispersionRecord>> {
    if search_log.is_empty() {
        return Err(Error::Argument("dispersion_split: empty search log".into()));
    }
    let mut by_query: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for entry in search_log {
        let set = by_query.entry(&entry.query).or_default();
        for (sku, _) in &entry.clicked_skus {
            set.insert(sku);
        }
    }
    let mut records = Vec::with_capacity(by_query.len());
    for (query, skus) in by_query {
        let vectors: Vec<Vec<f64>> = skus
            .iter()
            .map(|sku| {
                product_vectors
                    .get(sku)
                    .map(|v| v.to_vec())
                    .ok_or_else(|| Error::UnknownSku((*sku).to_string()))
            })
            .collect::<Result<_>>()?;
        let centroid = linalg::mean(&vectors)?;
        let dispersion: f64 = vectors
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        records.push(DispersionRecord { query: query.to_string(), dispersion, class: DispersionClass::Low });
    }
    let mut values: Vec<f64> = records.iter().map(|r| r.dispersion).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if values.len() % 2 == 1 {
        values[values.len() / 2]
    } else {
        (values[values.len() / 2 - 1] + values[values.len() / 2]) / 2.0
    };
    for r in &mut records {
        r.class = if r.dispersion > median { DispersionClass::High } else { DispersionClass::Low };
    }
    Ok(records)
}

/// Partition cases by the dispersion class of their target query. Cases
/// whose target has no record are dropped.
pub fn split_cases_by_dispersion(
    cases: &[EvalCase],
    records: &[DispersionRecord],
) -> (Vec<EvalCase>, Vec<EvalCase>) {
    let classes: HashMap<&str, DispersionClass> =
        records.iter().map(|r| (r.query.as_str(), r.class)).collect();
    let mut high = Vec::new();
    let mut low = Vec::new();
    for case in cases {
        match classes.get(case.target.as_str()) {
            Some(DispersionClass::High) => high.push(case.clone()),
            Some(DispersionClass::Low) => low.push(case.clone()),
            None => {}
        }
    }
    (high, low)
}

/// Benchmark shape: cutoff, seed lengths, sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub k: usize,
    pub seed_lengths: Vec<usize>,
    pub runs: usize,
    pub sample_per_run: usize,
    pub rng_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            k: 5,
            seed_lengths: vec![0, 1],
            runs: 10,
            sample_per_run: 7500,
            rng_seed: 42,
        }
    }
}

/// One aggregated result line.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub seed_len: usize,
    /// "-" for within-shop runs; "a->b" style labels for cross-shop.
    pub direction: String,
    /// Eligible cases per run (after seed-length filtering), averaged.
    pub cases_per_run: f64,
    pub per_run: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub sd: f64,
}

/// Full evaluation output; writable as text and TSV, byte-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub runs: usize,
    pub sample_per_run: usize,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, model: &str, seed_len: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.seed_len == seed_len)
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run every model over `runs` samples of the cases and aggregate MRR@k.
///
/// Sampling is without replacement per run (the whole set when it is smaller
/// than the requested sample); everything is a deterministic function of the
/// inputs and `rng_seed`. For each seed length, cases whose target is not
/// strictly longer than the seed are skipped, so the seed is always a proper
/// prefix of the target.
pub fn run_benchmark(
    models: &[&dyn Suggester],
    cases: &[EvalCase],
    config: &BenchmarkConfig,
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::Argument("run_benchmark: no models".into()));
    }
    if cases.is_empty() {
        return Err(Error::Argument("run_benchmark: no cases".into()));
    }
    if config.k == 0 || config.runs == 0 || config.sample_per_run == 0 {
        return Err(Error::Argument(
            "run_benchmark: k, runs and sample_per_run must be >= 1".into(),
        ));
    }
    if config.seed_lengths.is_empty() {
        return Err(Error::Argument("run_benchmark: no seed lengths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let sample_size = config.sample_per_run.min(cases.len());
    // per (model, seed) → (per-run MRRs, per-run eligible counts)
    let mut acc: Vec<Vec<(f64, usize)>> =
        vec![Vec::with_capacity(config.runs); models.len() * config.seed_lengths.len()];

    let mut indices: Vec<usize> = (0..cases.len()).collect();
    for _ in 0..config.runs {
        indices.shuffle(&mut rng);
        let sampled = &indices[..sample_size];
        for (si, seed_len) in config.seed_lengths.iter().enumerate() {
            let eligible: Vec<&EvalCase> = sampled
                .iter()
                .map(|i| &cases[*i])
                .filter(|c| c.target.chars().count() > *seed_len)
                .collect();
            if eligible.is_empty() {
                return Err(Error::Degenerate(format!(
                    "run_benchmark: no eligible cases for seed length {seed_len}"
                )));
            }
            let targets: Vec<String> = eligible.iter().map(|c| c.target.clone()).collect();
            for (mi, model) in models.iter().enumerate() {
                let lists: Vec<Vec<String>> = eligible
                    .iter()
                    .map(|case| {
                        let seed: String = case.target.chars().take(*seed_len).collect();
                        model.suggest(case, &seed, config.k)
                    })
                    .collect();
                let mrr = mrr_at_k(&lists, &targets, config.k)?;
                acc[mi * config.seed_lengths.len() + si].push((mrr, eligible.len()));
            }
        }
    }

    let mut rows = Vec::new();
    for (mi, model) in models.iter().enumerate() {
        for (si, seed_len) in config.seed_lengths.iter().enumerate() {
            let runs = &acc[mi * config.seed_lengths.len() + si];
            let per_run: Vec<f64> = runs.iter().map(|(m, _)| *m).collect();
            let (mean, sd) = mean_sd(&per_run);
            let cases_per_run =
                runs.iter().map(|(_, n)| *n as f64).sum::<f64>() / runs.len() as f64;
            rows.push(ReportRow {
                model: model.name().to_string(),
                seed_len: *seed_len,
                direction: "-".to_string(),
                cases_per_run,
                per_run,
                mean,
                sd,
            });
        }
    }
    Ok(EvalReport { k: config.k, runs: config.runs, sample_per_run: sample_size, rows })
}

/// Everything the cross-shop conditions need on the target shop, plus the
/// source shop's product vectors for building transferred session vectors.
pub struct CrossShopResources<'a> {
    pub trie: &'a crate::lm::TrieIndex,
    pub source_products: &'a VectorTable,
    pub target_products: &'a VectorTable,
    pub encdec: Option<&'a crate::encdec::EncDecModel>,
}

/// Evaluate the cross-shop transfer conditions on paired cases: popularity
/// (no personalization), similarity with the transferred source-shop vector,
/// the within-shop similarity upper bound (target-shop views, which a
/// zero-shot shopper would not have), and optionally the conditional model
/// with the transferred vector.
pub fn cross_shop_benchmark(
    pairs: &[PairedCase],
    resources: &CrossShopResources<'_>,
    k: usize,
    seed_len: usize,
    direction: &str,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Argument("cross_shop_benchmark: no paired cases".into()));
    }
    if k == 0 {
        return Err(Error::Argument("cross_shop_benchmark: k must be >= 1".into()));
    }
    let eligible: Vec<&PairedCase> = pairs
        .iter()
        .filter(|p| p.case.target.chars().count() > seed_len && !p.source_skus.is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(Error::Degenerate(
            "cross_shop_benchmark: no eligible pairs after filtering".into(),
        ));
    }
    let similarity = pipelines::SimilarityPipeline::new(resources.trie, resources.target_products);
    let popularity = pipelines::PopularityPipeline::new(resources.trie);
    let encdec = resources
        .encdec
        .map(|m| pipelines::EncDecPipeline::new(resources.trie, m, resources.target_products));

    let targets: Vec<String> = eligible.iter().map(|p| p.case.target.clone()).collect();
    let transferred: Vec<Option<Vec<f64>>> = eligible
        .iter()
        .map(|p| pooled_mean(&p.source_skus, resources.source_products))
        .collect();

    let mut rows = Vec::new();
    let mut push = |model: &str, lists: Vec<Vec<String>>| -> Result<()> {
        let mrr = mrr_at_k(&lists, &targets, k)?;
        rows.push(ReportRow {
            model: model.to_string(),
            seed_len,
            direction: direction.to_string(),
            cases_per_run: eligible.len() as f64,
            per_run: vec![mrr],
            mean: mrr,
            sd: 0.0,
        });
        Ok(())
    };

    let seed_of = |p: &PairedCase| -> String { p.case.target.chars().take(seed_len).collect() };

    push(
        "popularity",
        eligible.iter().map(|p| popularity.suggest(&p.case, &seed_of(p), k)).collect(),
    )?;
    push(
        "similarity-cross",
        eligible
            .iter()
            .zip(&transferred)
            .map(|(p, tv)| similarity.suggest_with_vector(tv.as_deref(), &seed_of(p), k))
            .collect(),
    )?;
    push(
        "similarity-within",
        eligible.iter().map(|p| similarity.suggest(&p.case, &seed_of(p), k)).collect(),
    )?;
    if let Some(encdec) = &encdec {
        push(
            "encdec-cross",
            eligible
                .iter()
                .zip(&transferred)
                .map(|(p, tv)| encdec.suggest_with_vector(tv.as_deref(), &seed_of(p), k))
                .collect(),
        )?;
    }
    Ok(EvalReport { k, runs: 1, sample_per_run: eligible.len(), rows })
}

/// Mean vector of the SKUs that have vectors; `None` when none do.
pub(crate) fn pooled_mean(skus: &[String], products: &VectorTable) -> Option<Vec<f64>> {
    let vectors: Vec<Vec<f64>> = skus
        .iter()
        .filter_map(|sku| products.get(sku).map(|v| v.to_vec()))
        .collect();
    if vectors.is_empty() {
        None
    } else {
        Some(linalg::mean(&vectors).expect("non-empty, equal-length vectors"))
    }
}

/// Human-readable table.
pub fn write_report_text(path: &Path, report: &EvalReport) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "MRR@{} over {} run(s), {} case(s) sampled per run", report.k, report.runs, report.sample_per_run)?;
    writeln!(f)?;
    writeln!(
        f,
        "{:<20} {:>4} {:>10} {:>10} {:>10} {:>10}",
        "model", "seed", "direction", "cases", "mean", "sd"
    )?;
    for row in &report.rows {
        writeln!(
            f,
            "{:<20} {:>4} {:>10} {:>10.1} {:>10.6} {:>10.6}",
            row.model, row.seed_len, row.direction, row.cases_per_run, row.mean, row.sd
        )?;
    }
    Ok(())
}

/// Machine-readable rows, one per (model, seed, direction); diff-friendly.
pub fn write_report_tsv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# typeahead-eval-report v1")?;
    writeln!(f, "# k={} runs={} sample_per_run={}", report.k, report.runs, report.sample_per_run)?;
    writeln!(f, "model\tseed\tdirection\tcases\tmean\tsd\tper_run")?;
    for row in &report.rows {
        let per_run = row
            .per_run
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            f,
            "{}\t{}\t{}\t{:.1}\t{:.6}\t{:.6}\t{}",
            row.model, row.seed_len, row.direction, row.cases_per_run, row.mean, row.sd, per_run
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SessionEvent;

    fn lists(raw: &[&[&str]]) -> Vec<Vec<String>> {
        raw.iter().map(|l| l.iter().map(|s| s.to_string()).collect()).collect()
    }

    fn targets(raw: &[&str]) -> Vec<String> {
        raw.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn mrr_closed_form_examples() {
        // Target always first.
        let l = lists(&[&["a", "b"], &["c", "d"]]);
        assert_eq!(mrr_at_k(&l, &targets(&["a", "c"]), 5).unwrap(), 1.0);
        // Target absent everywhere.
        assert_eq!(mrr_at_k(&l, &targets(&["x", "y"]), 5).unwrap(), 0.0);
        // Ranks 1, 2 and absent at k=5: (1 + 0.5 + 0) / 3.
        let l = lists(&[&["a"], &["x", "b"], &["x", "y", "z"]]);
        let got = mrr_at_k(&l, &targets(&["a", "b", "c"]), 5).unwrap();
        assert!((got - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mrr_matches_brute_force_oracle_and_is_monotone_in_k() {
        // Oracle: an independently written reimplementation.
        fn oracle(lists: &[Vec<String>], targets: &[String], k: usize) -> f64 {
            let mut total = 0.0;
            for (list, t) in lists.iter().zip(targets) {
                let mut rank = 0usize;
                for (i, s) in list.iter().enumerate() {
                    if i >= k {
                        break;
                    }
                    if s == t {
                        rank = i + 1;
                        break;
                    }
                }
                if rank > 0 {
                    total += 1.0 / rank as f64;
                }
            }
            total / lists.len() as f64
        }
        let l = lists(&[
            &["q3", "q1", "q2", "q4"],
            &["q2", "q3"],
            &["q9", "q8", "q7", "q1", "q5"],
            &["q1"],
            &[],
        ]);
        let t = targets(&["q1", "q2", "q5", "q9", "q1"]);
        let mut last = 0.0;
        for k in 1..=6 {
            let got = mrr_at_k(&l, &t, k).unwrap();
            assert_eq!(got, oracle(&l, &t, k));
            assert!(got >= last, "MRR@{k} decreased");
            last = got;
        }
    }

    #[test]
    fn mrr_rejects_bad_input() {
        let l = lists(&[&["a"]]);
        assert!(mrr_at_k(&[], &[], 5).is_err());
        assert!(mrr_at_k(&l, &targets(&["a", "b"]), 5).is_err());
        assert!(mrr_at_k(&l, &targets(&["a"]), 0).is_err());
    }

    fn session(id: &str, events: Vec<(i64, EventPayload)>) -> SessionGroup {
        SessionGroup {
            session_id: id.to_string(),
            events: events
                .into_iter()
                .map(|(timestamp, payload)| SessionEvent {
                    timestamp,
                    session_id: id.to_string(),
                    payload,
                })
                .collect(),
        }
    }

    fn view(sku: &str) -> EventPayload {
        EventPayload::View { sku: sku.to_string() }
    }

    fn search(q: &str) -> EventPayload {
        EventPayload::Search { query: q.to_string() }
    }

    #[test]
    fn temporal_split_assigns_by_search_timestamp() {
        let sessions = vec![
            session("s1", vec![(100, view("a")), (200, search("ski"))]),
            // Straddles the boundary: views before, search after → test.
            session("s2", vec![(300, view("b")), (1200, search("boots"))]),
            session("s3", vec![(1500, view("c")), (1600, search("tent"))]),
            // No search: assigned by first event, train side only.
            session("s4", vec![(400, view("d"))]),
        ];
        let (train, test) = temporal_split(&sessions, 1000).unwrap();
        let ids = |groups: &[SessionGroup]| -> Vec<String> {
            groups.iter().map(|g| g.session_id.clone()).collect()
        };
        assert_eq!(ids(&train), vec!["s1", "s4"]);
        assert_eq!(ids(&test), vec!["s2", "s3"]);
        // Oracle: a plain filter by the anchor rule gives the same counts.
        let anchored: Vec<i64> = sessions
            .iter()
            .map(|g| g.first_search().map(|(e, _)| e.timestamp).unwrap_or(g.events[0].timestamp))
            .collect();
        assert_eq!(train.len(), anchored.iter().filter(|t| **t < 1000).count());
    }

    #[test]
    fn temporal_split_rejects_empty_sides() {
        let sessions = vec![session("s1", vec![(100, view("a")), (200, search("ski"))])];
        assert!(temporal_split(&sessions, 50).is_err());
        assert!(temporal_split(&sessions, 5000).is_err());
    }

    #[test]
    fn extract_cases_takes_views_strictly_before_first_search() {
        let sessions = vec![
            session(
                "s1",
                vec![
                    (100, view("a")),
                    (200, view("b")),
                    (300, search("ski")),
                    (400, view("c")),
                    (500, search("late query")),
                ],
            ),
            session("s2", vec![(100, view("x"))]),
        ];
        let cases = extract_cases(&sessions, "shop_a");
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].context_skus, vec!["a", "b"]);
        assert_eq!(cases[0].target, "ski");
        assert_eq!(cases[0].timestamp, 300);
        assert_eq!(cases[0].shop_id, "shop_a");
    }

    fn table(entries: &[(&str, &[f64])]) -> VectorTable {
        let mut t = VectorTable::new(entries[0].1.len());
        for (sku, v) in entries {
            t.insert(sku.to_string(), v.to_vec()).unwrap();
        }
        t
    }

    fn log_entry(query: &str, skus: &[&str]) -> SearchLogEntry {
        SearchLogEntry {
            query: query.to_string(),
            clicked_skus: skus.iter().map(|s| (s.to_string(), 1)).collect(),
            shop_id: "shop_a".to_string(),
        }
    }

    #[test]
    fn dispersion_geometry_basics() {
        let t = table(&[
            ("p1", &[0.0, 0.0]),
            ("p2", &[3.0, 4.0]),
            ("p3", &[10.0, 0.0]),
        ]);
        let log = vec![
            log_entry("single", &["p1"]),
            log_entry("pair", &["p1", "p2"]),
            log_entry("wide", &["p1", "p2", "p3"]),
        ];
        let records = dispersion_split(&log, &t).unwrap();
        let by_query: HashMap<&str, &DispersionRecord> =
            records.iter().map(|r| (r.query.as_str(), r)).collect();
        // One product: centroid is the point.
        assert_eq!(by_query["single"].dispersion, 0.0);
        // Two products distance 5 apart: 2 × 2.5.
        assert!((by_query["pair"].dispersion - 5.0).abs() < 1e-12);
        // Median of {0, 5, d} is 5: "pair" is low (at median), "wide" high.
        assert_eq!(by_query["single"].class, DispersionClass::Low);
        assert_eq!(by_query["pair"].class, DispersionClass::Low);
        assert_eq!(by_query["wide"].class, DispersionClass::High);
    }

    #[test]
    fn dispersion_matches_brute_oracle_and_scales_linearly() {
        let points: Vec<(String, Vec<f64>)> = (0..6)
            .map(|i| {
                let x = (i as f64 * 0.7).sin() * 3.0;
                let y = (i as f64 * 1.3).cos() * 2.0;
                (format!("p{i}"), vec![x, y, x * y])
            })
            .collect();
        let mut t = VectorTable::new(3);
        let mut scaled = VectorTable::new(3);
        let mut shifted = VectorTable::new(3);
        for (sku, v) in &points {
            t.insert(sku.clone(), v.clone()).unwrap();
            scaled.insert(sku.clone(), v.iter().map(|x| x * 2.5).collect()).unwrap();
            shifted.insert(sku.clone(), v.iter().map(|x| x + 7.0).collect()).unwrap();
        }
        let log = vec![
            log_entry("q1", &["p0", "p1", "p2", "p3", "p4", "p5"]),
            log_entry("q2", &["p0", "p3"]),
        ];
        let base = dispersion_split(&log, &t).unwrap();
        // Brute-force oracle.
        for record in &base {
            let skus: &[&str] = if record.query == "q1" {
                &["p0", "p1", "p2", "p3", "p4", "p5"]
            } else {
                &["p0", "p3"]
            };
            let vs: Vec<&Vec<f64>> =
                points.iter().filter(|(s, _)| skus.contains(&s.as_str())).map(|(_, v)| v).collect();
            let mut centroid = vec![0.0; 3];
            for v in &vs {
                for (c, x) in centroid.iter_mut().zip(v.iter()) {
                    *c += x / vs.len() as f64;
                }
            }
            let want: f64 = vs
                .iter()
                .map(|v| {
                    v.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                })
                .sum();
            assert!((record.dispersion - want).abs() < 1e-10);
        }
        // Scaling by c scales dispersion by c; translation leaves it alone.
        let s = dispersion_split(&log, &scaled).unwrap();
        let sh = dispersion_split(&log, &shifted).unwrap();
        for ((b, s), sh) in base.iter().zip(&s).zip(&sh) {
            assert!((s.dispersion - 2.5 * b.dispersion).abs() < 1e-9);
            assert!((sh.dispersion - b.dispersion).abs() < 1e-9);
            assert_eq!(s.class, b.class);
        }
    }

    #[test]
    fn dispersion_requires_vectors() {
        let t = table(&[("p1", &[0.0, 0.0])]);
        let log = vec![log_entry("q", &["p1", "missing"])];
        assert!(matches!(dispersion_split(&log, &t), Err(Error::UnknownSku(_))));
    }

    #[test]
    fn split_cases_by_dispersion_partitions() {
        let records = vec![
            DispersionRecord { query: "broad".into(), dispersion: 5.0, class: DispersionClass::High },
            DispersionRecord { query: "narrow".into(), dispersion: 0.0, class: DispersionClass::Low },
        ];
        let mk = |target: &str| EvalCase {
            shop_id: "shop_a".into(),
            session_id: "s".into(),
            context_skus: vec![],
            target: target.into(),
            timestamp: 0,
        };
        let cases = vec![mk("broad"), mk("narrow"), mk("unknown")];
        let (high, low) = split_cases_by_dispersion(&cases, &records);
        assert_eq!(high.len(), 1);
        assert_eq!(low.len(), 1);
        assert_eq!(high[0].target, "broad");
    }

    /// Suggester that always puts the target first.
    struct Perfect;
    impl Suggester for Perfect {
        fn name(&self) -> &str {
            "perfect"
        }
        fn suggest(&self, case: &EvalCase, _seed: &str, _k: usize) -> Vec<String> {
            vec![case.target.clone()]
        }
    }

    /// Suggester returning a fixed list, target never first.
    struct Fixed;
    impl Suggester for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn suggest(&self, _case: &EvalCase, _seed: &str, _k: usize) -> Vec<String> {
            vec!["other".to_string(), "ski".to_string()]
        }
    }

    fn bench_cases(n: usize) -> Vec<EvalCase> {
        (0..n)
            .map(|i| EvalCase {
                shop_id: "shop_a".into(),
                session_id: format!("s{i}"),
                context_skus: vec![],
                target: if i % 2 == 0 { "ski".into() } else { "boots".into() },
                timestamp: i as i64,
            })
            .collect()
    }

    #[test]
    fn benchmark_perfect_model_scores_one_with_zero_sd() {
        let cases = bench_cases(10);
        let config = BenchmarkConfig {
            k: 5,
            seed_lengths: vec![0, 1],
            runs: 3,
            sample_per_run: 6,
            rng_seed: 1,
        };
        let report = run_benchmark(&[&Perfect], &cases, &config).unwrap();
        for row in &report.rows {
            assert_eq!(row.mean, 1.0);
            assert_eq!(row.sd, 0.0);
            assert_eq!(row.per_run.len(), 3);
        }
        // "ski" at rank 2 for half the cases under the fixed model.
        let report = run_benchmark(&[&Fixed], &cases, &config).unwrap();
        for row in &report.rows {
            assert!(row.mean > 0.0 && row.mean < 1.0);
        }
    }

    #[test]
    fn benchmark_is_deterministic_and_handles_small_case_sets() {
        let cases = bench_cases(7);
        let config = BenchmarkConfig {
            k: 5,
            seed_lengths: vec![1],
            runs: 4,
            // More than available: every run uses the whole set.
            sample_per_run: 100,
            rng_seed: 9,
        };
        let a = run_benchmark(&[&Fixed], &cases, &config).unwrap();
        let b = run_benchmark(&[&Fixed], &cases, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample_per_run, 7);
        // Identical full-set runs: zero variance.
        assert_eq!(a.rows[0].sd, 0.0);
        let first = a.rows[0].per_run[0];
        assert!(a.rows[0].per_run.iter().all(|v| *v == first));
    }

    #[test]
    fn benchmark_validates_input() {
        let cases = bench_cases(3);
        let ok = BenchmarkConfig::default();
        assert!(run_benchmark(&[], &cases, &ok).is_err());
        assert!(run_benchmark(&[&Perfect], &[], &ok).is_err());
        let bad = BenchmarkConfig { runs: 0, ..BenchmarkConfig::default() };
        assert!(run_benchmark(&[&Perfect], &cases, &bad).is_err());
        // Seed length as long as every target: nothing is eligible.
        let bad = BenchmarkConfig { seed_lengths: vec![50], ..BenchmarkConfig::default() };
        assert!(run_benchmark(&[&Perfect], &cases, &bad).is_err());
    }

    #[test]
    fn latest_fraction_takes_most_recent_sessions() {
        let sessions: Vec<SessionGroup> = (0..6)
            .map(|i| session(&format!("s{i}"), vec![(i as i64 * 100, view("a"))]))
            .collect();
        let third = latest_fraction(&sessions, 1.0 / 3.0).unwrap();
        assert_eq!(third.len(), 2);
        assert_eq!(third[0].session_id, "s4");
        assert_eq!(third[1].session_id, "s5");
        assert_eq!(latest_fraction(&sessions, 1.0).unwrap().len(), 6);
        assert!(latest_fraction(&sessions, 0.0).is_err());
        assert!(latest_fraction(&sessions, 1.5).is_err());
    }

    #[test]
    fn report_writers_are_byte_stable() {
        let report = EvalReport {
            k: 5,
            runs: 2,
            sample_per_run: 10,
            rows: vec![ReportRow {
                model: "popularity".into(),
                seed_len: 1,
                direction: "-".into(),
                cases_per_run: 10.0,
                per_run: vec![0.25, 0.3],
                mean: 0.275,
                sd: 0.025,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let text = dir.path().join("report.txt");
        let tsv = dir.path().join("report.tsv");
        write_report_text(&text, &report).unwrap();
        write_report_tsv(&tsv, &report).unwrap();
        let t1 = fs::read(&text).unwrap();
        let v1 = fs::read(&tsv).unwrap();
        write_report_text(&text, &report).unwrap();
        write_report_tsv(&tsv, &report).unwrap();
        assert_eq!(fs::read(&text).unwrap(), t1);
        assert_eq!(fs::read(&tsv).unwrap(), v1);
        let body = String::from_utf8(v1).unwrap();
        assert!(body.contains("popularity\t1\t-\t10.0\t0.275000\t0.025000\t0.250000,0.300000"));
    }
}
