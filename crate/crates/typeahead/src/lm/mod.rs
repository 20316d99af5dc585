//! The unconditioned noisy-channel model and its prefix index.
//!
//! A candidate query `q` is scored for typed text `t` as `P(q) * P(t|q)`:
//! the popularity prior estimated from search-log frequencies times an
//! error model describing how the true prefix of `q` may have been mistyped.
//! The index is a trie built on top of a hash map: for every prefix of every
//! candidate, and for every admissible one-substitution typo of such a
//! prefix, the top `max_fanout` candidates by `P(q) * P(t|q)` are
//! precomputed at build time, so lookup cost does not depend on candidate
//! count. The empty prefix holds the global popularity ranking, serving the
//! seed-length-0 case where the user has only clicked on the search bar.
//!
//! [`rescore_all`] is the reference scorer: it ranks candidates for a typed
//! prefix by direct evaluation, without the index. Index answers must match
//! it, and the test suite holds the two routes together.

pub mod markov;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::SearchLogEntry;
use crate::vectors::VectorTable;

/// Retrieval cap per prefix: the top 25 candidates from the unconditioned
/// model feed the rerankers (N * k with N = 5 suggestions, k = 5).
pub const DEFAULT_MAX_FANOUT: usize = 25;

/// One candidate query of the index.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEntry {
    pub query: String,
    /// Popularity prior P(q); priors over the candidate set sum to 1.
    pub prior: f64,
    /// Reduced query vector, when the query appears in the query-vector map.
    pub query_vector: Option<Vec<f64>>,
}

/// Keyboard-aware single-substitution typo model.
///
/// For a candidate whose true prefix (at the typed length) is `p`:
/// the exact prefix `t = p` receives `exact_match_mass`; the remaining mass
/// is split over all strings obtained by replacing one character of `p`
/// with a keyboard-adjacent character, proportionally to adjacency weights.
/// Strings further away get zero. When no substitution is possible (empty
/// prefix, `max_edits = 0`, or no adjacent keys anywhere in `p`), the exact
/// prefix receives the full mass instead, so for every candidate and typed
/// length the conditional P(t|q) sums to exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pub exact_match_mass: f64,
    pub max_edits: usize,
    adjacency: BTreeMap<char, Vec<(char, f64)>>,
}

/// Keyboard rows with their physical stagger; two keys are adjacent when
/// their center distance is at most [`ADJACENT_DIST`].
const QWERTY_ROWS: [(&str, f64); 3] = [("qwertyuiop", 0.0), ("asdfghjkl", 0.25), ("zxcvbnm", 0.75)];
const ADJACENT_DIST: f64 = 1.7;

fn qwerty_adjacency() -> BTreeMap<char, Vec<(char, f64)>> {
    let keys: Vec<(char, f64, f64)> = QWERTY_ROWS
        .iter()
        .enumerate()
        .flat_map(|(row, (chars, offset))| {
            chars
                .chars()
                .enumerate()
                .map(move |(col, c)| (c, col as f64 + offset, row as f64))
        })
        .collect();
    let mut adjacency = BTreeMap::new();
    for &(a, ax, ay) in &keys {
        let mut neighbors = Vec::new();
        for &(b, bx, by) in &keys {
            if a == b {
                continue;
            }
            let d2 = (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
            if d2.sqrt() <= ADJACENT_DIST {
                neighbors.push((b, 1.0));
            }
        }
        adjacency.insert(a, neighbors);
    }
    adjacency
}

impl ErrorModel {
    /// Default model: qwerty adjacency, 0.9 exact mass, one edit.
    pub fn qwerty() -> Self {
        ErrorModel { exact_match_mass: 0.9, max_edits: 1, adjacency: qwerty_adjacency() }
    }

    /// Typo handling disabled; only exact prefixes match.
    pub fn exact_only() -> Self {
        ErrorModel { exact_match_mass: 1.0, max_edits: 0, adjacency: BTreeMap::new() }
    }

    pub fn with_mass(exact_match_mass: f64) -> Result<Self> {
        if !(exact_match_mass > 0.0 && exact_match_mass <= 1.0) {
            return Err(Error::Argument("exact_match_mass must lie in (0, 1]".into()));
        }
        Ok(ErrorModel { exact_match_mass, ..ErrorModel::qwerty() })
    }

    pub fn adjacent(&self, c: char) -> &[(char, f64)] {
        self.adjacency.get(&c).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Total adjacency weight over all positions of `p`; the normalizer for
    /// substitution mass.
    fn prefix_weight(&self, p: &[char]) -> f64 {
        p.iter().map(|c| self.adjacent(*c).iter().map(|(_, w)| w).sum::<f64>()).sum()
    }

    fn substitutions_possible(&self, p: &[char]) -> bool {
        self.max_edits >= 1 && self.prefix_weight(p) > 0.0
    }

    /// Mass assigned to typing the true prefix verbatim.
    fn exact_mass(&self, p: &[char]) -> f64 {
        if self.substitutions_possible(p) {
            self.exact_match_mass
        } else {
            1.0
        }
    }

    /// All admissible mistyped variants of true prefix `p` with their mass.
    fn typo_variants(&self, p: &[char]) -> Vec<(String, f64)> {
        if !self.substitutions_possible(p) {
            return Vec::new();
        }
        let total = self.prefix_weight(p);
        let leftover = 1.0 - self.exact_match_mass;
        let mut out = Vec::new();
        for (i, c) in p.iter().enumerate() {
            for (sub, w) in self.adjacent(*c) {
                let mut typed: Vec<char> = p.to_vec();
                typed[i] = *sub;
                out.push((typed.iter().collect(), leftover * w / total));
            }
        }
        out
    }

    /// P(typed | candidate with true prefix `true_prefix`). Both strings are
    /// compared at the typed length; callers pass equal-length arguments.
    pub fn p_typed_given_true(&self, typed: &str, true_prefix: &str) -> f64 {
        let t: Vec<char> = typed.chars().collect();
        let p: Vec<char> = true_prefix.chars().collect();
        if t.len() != p.len() {
            return 0.0;
        }
        if t == p {
            return self.exact_mass(&p);
        }
        if !self.substitutions_possible(&p) {
            return 0.0;
        }
        let diffs: Vec<usize> = (0..p.len()).filter(|&i| t[i] != p[i]).collect();
        if diffs.len() != 1 {
            return 0.0;
        }
        let i = diffs[0];
        match self.adjacent(p[i]).iter().find(|(c, _)| *c == t[i]) {
            Some((_, w)) => (1.0 - self.exact_match_mass) * w / self.prefix_weight(&p),
            None => 0.0,
        }
    }
}

/// Estimate popularity priors from a search log.
///
/// `count(q)` sums all clicks recorded under `q`; the prior is the count
/// divided by the total. Entries for the same query are merged. Candidates
/// come back ordered by descending prior, ties by query string.
pub fn estimate_priors(search_log: &[SearchLogEntry]) -> Result<Vec<CandidateEntry>> {
    if search_log.is_empty() {
        return Err(Error::Argument("estimate_priors: empty search log".into()));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for entry in search_log {
        let clicks: u64 = entry.clicked_skus.iter().map(|(_, n)| n).sum();
        *counts.entry(entry.query.as_str()).or_insert(0) += clicks;
    }
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(Error::Argument("estimate_priors: zero total count".into()));
    }
    let mut candidates: Vec<CandidateEntry> = counts
        .into_iter()
        .filter(|(_, count)| *count > 0)
        .map(|(query, count)| CandidateEntry {
            query: query.to_string(),
            prior: count as f64 / total as f64,
            query_vector: None,
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.prior.partial_cmp(&a.prior).unwrap().then_with(|| a.query.cmp(&b.query))
    });
    Ok(candidates)
}

/// Attach reduced query vectors to candidates that have one.
pub fn attach_query_vectors(candidates: &mut [CandidateEntry], query_vectors: &VectorTable) {
    for c in candidates {
        c.query_vector = query_vectors.get(&c.query).map(|v| v.to_vec());
    }
}

/// The precomputed prefix index. Immutable after build; concurrent readers
/// need no synchronization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrieIndex {
    candidates: Vec<CandidateEntry>,
    /// prefix → (candidate index, score), descending score, ≤ max_fanout.
    lists: HashMap<String, Vec<(u32, f64)>>,
    by_query: HashMap<String, u32>,
    max_fanout: usize,
    error_model: ErrorModel,
}

fn sort_scored(list: &mut [(u32, f64)], candidates: &[CandidateEntry]) {
    list.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| candidates[a.0 as usize].query.cmp(&candidates[b.0 as usize].query))
    });
}

/// Build the index: every prefix of every candidate plus every admissible
/// typo of such a prefix maps to its top `max_fanout` candidates.
pub fn build_trie(
    candidates: Vec<CandidateEntry>,
    error_model: ErrorModel,
    max_fanout: usize,
) -> Result<TrieIndex> {
    if max_fanout < 1 {
        return Err(Error::Argument("max_fanout must be >= 1".into()));
    }
    let total: f64 = candidates.iter().map(|c| c.prior).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("priors must sum to 1, got {total}")));
    }
    if candidates.iter().any(|c| c.prior <= 0.0) {
        return Err(Error::Argument("priors must be positive".into()));
    }

    let mut lists: HashMap<String, Vec<(u32, f64)>> = HashMap::new();
    for (ci, cand) in candidates.iter().enumerate() {
        let chars: Vec<char> = cand.query.chars().collect();
        for len in 0..=chars.len() {
            let p = &chars[..len];
            let exact: String = p.iter().collect();
            lists
                .entry(exact)
                .or_default()
                .push((ci as u32, cand.prior * error_model.exact_mass(p)));
            for (typed, mass) in error_model.typo_variants(p) {
                lists.entry(typed).or_default().push((ci as u32, cand.prior * mass));
            }
        }
    }
    for list in lists.values_mut() {
        sort_scored(list, &candidates);
        list.truncate(max_fanout);
    }
    let by_query =
        candidates.iter().enumerate().map(|(i, c)| (c.query.clone(), i as u32)).collect();
    Ok(TrieIndex { candidates, lists, by_query, max_fanout, error_model })
}

impl TrieIndex {
    /// Top `n` candidates for a typed prefix, descending `P(q) * P(t|q)`.
    /// The prefix is canonicalized with [`crate::text::normalize_prefix`];
    /// unknown prefixes yield an empty list.
    pub fn retrieve(&self, prefix: &str, n: usize) -> Vec<(&str, f64)> {
        let key = crate::text::normalize_prefix(prefix);
        match self.lists.get(&key) {
            Some(list) => list
                .iter()
                .take(n)
                .map(|(ci, score)| (self.candidates[*ci as usize].query.as_str(), *score))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn candidate(&self, query: &str) -> Option<&CandidateEntry> {
        self.by_query.get(query).map(|i| &self.candidates[*i as usize])
    }

    pub fn candidates(&self) -> &[CandidateEntry] {
        &self.candidates
    }

    pub fn max_fanout(&self) -> usize {
        self.max_fanout
    }

    pub fn error_model(&self) -> &ErrorModel {
        &self.error_model
    }

    pub fn prefix_count(&self) -> usize {
        self.lists.len()
    }
}

/// Reference scorer: rank every candidate for the typed prefix by direct
/// `P(q) * P(t|q)` evaluation. O(candidates) per call; the trie must return
/// exactly this list truncated to its fanout.
pub fn rescore_all<'a>(
    candidates: &'a [CandidateEntry],
    error_model: &ErrorModel,
    typed: &str,
    n: usize,
) -> Vec<(&'a str, f64)> {
    let typed = crate::text::normalize_prefix(typed);
    let typed_len = typed.chars().count();
    let mut scored: Vec<(&str, f64)> = candidates
        .iter()
        .filter_map(|c| {
            let true_prefix: String = c.query.chars().take(typed_len).collect();
            if true_prefix.chars().count() < typed_len {
                return None;
            }
            let mass = error_model.p_typed_given_true(&typed, &true_prefix);
            (mass > 0.0).then(|| (c.query.as_str(), c.prior * mass))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    scored.truncate(n);
    scored
}

/// Serialize an index: versioned header, candidate table, then prefix lists
/// sorted by prefix. Rebuilding from identical inputs reproduces the file
/// byte for byte.
pub fn save_index(path: &Path, index: &TrieIndex) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# typeahead-index v1")?;
    writeln!(
        f,
        "# max_fanout={} exact_match_mass={} max_edits={}",
        index.max_fanout, index.error_model.exact_match_mass, index.error_model.max_edits
    )?;
    for (c, neighbors) in &index.error_model.adjacency {
        let row = neighbors
            .iter()
            .map(|(n, w)| format!("{n}:{w}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(f, "adjacency\t{c}\t{row}")?;
    }
    for cand in &index.candidates {
        let vec = match &cand.query_vector {
            Some(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            None => "-".to_string(),
        };
        writeln!(f, "candidate\t{}\t{}\t{}", cand.query, cand.prior, vec)?;
    }
    let ordered: BTreeMap<&String, &Vec<(u32, f64)>> = index.lists.iter().collect();
    for (prefix, list) in ordered {
        let row = list
            .iter()
            .map(|(ci, score)| format!("{ci}:{score}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(f, "prefix\t{prefix}\t{row}")?;
    }
    Ok(())
}

pub fn load_index(path: &Path) -> Result<TrieIndex> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "# typeahead-index v1")) => {}
        other => {
            return Err(err(
                other.map(|(i, _)| i).unwrap_or(1),
                "expected header \"# typeahead-index v1\"".into(),
            ))
        }
    }
    let (meta_line, meta) = lines
        .next()
        .ok_or_else(|| err(2, "missing metadata line".into()))?;
    let meta_field = |key: &str| -> Result<f64> {
        meta.trim_start_matches('#')
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(meta_line, format!("missing {key}= in metadata")))
    };
    let max_fanout = meta_field("max_fanout")? as usize;
    let exact_match_mass = meta_field("exact_match_mass")?;
    let max_edits = meta_field("max_edits")? as usize;

    let mut adjacency = BTreeMap::new();
    let mut candidates = Vec::new();
    let mut lists = HashMap::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let tag = fields.next().unwrap();
        match tag {
            "adjacency" => {
                let (c, row) = match (fields.next(), fields.next()) {
                    (Some(c), Some(row)) => (c, row),
                    _ => return Err(err(line_no, "bad adjacency row".into())),
                };
                let c = c
                    .chars()
                    .next()
                    .ok_or_else(|| err(line_no, "empty adjacency key".into()))?;
                let mut neighbors = Vec::new();
                for part in row.split(',').filter(|p| !p.is_empty()) {
                    let (n, w) = part
                        .split_once(':')
                        .ok_or_else(|| err(line_no, format!("bad neighbor {part:?}")))?;
                    let n = n
                        .chars()
                        .next()
                        .ok_or_else(|| err(line_no, "empty neighbor".into()))?;
                    let w: f64 = w
                        .parse()
                        .map_err(|e| err(line_no, format!("bad weight: {e}")))?;
                    neighbors.push((n, w));
                }
                adjacency.insert(c, neighbors);
            }
            "candidate" => {
                let (query, rest) = match (fields.next(), fields.next()) {
                    (Some(q), Some(r)) => (q, r),
                    _ => return Err(err(line_no, "bad candidate row".into())),
                };
                let (prior, vec) = rest
                    .split_once('\t')
                    .ok_or_else(|| err(line_no, "bad candidate row".into()))?;
                let prior: f64 =
                    prior.parse().map_err(|e| err(line_no, format!("bad prior: {e}")))?;
                let query_vector = if vec == "-" {
                    None
                } else {
                    Some(
                        vec.split(',')
                            .map(|t| {
                                t.parse::<f64>()
                                    .map_err(|e| err(line_no, format!("bad vector: {e}")))
                            })
                            .collect::<Result<Vec<f64>>>()?,
                    )
                };
                candidates.push(CandidateEntry { query: query.to_string(), prior, query_vector });
            }
            "prefix" => {
                let (prefix, row) = match (fields.next(), fields.next()) {
                    (Some(p), Some(r)) => (p, r),
                    _ => return Err(err(line_no, "bad prefix row".into())),
                };
                let mut list = Vec::new();
                for part in row.split(',').filter(|p| !p.is_empty()) {
                    let (ci, score) = part
                        .split_once(':')
                        .ok_or_else(|| err(line_no, format!("bad entry {part:?}")))?;
                    let ci: u32 =
                        ci.parse().map_err(|e| err(line_no, format!("bad index: {e}")))?;
                    let score: f64 =
                        score.parse().map_err(|e| err(line_no, format!("bad score: {e}")))?;
                    list.push((ci, score));
                }
                lists.insert(prefix.to_string(), list);
            }
            other => return Err(err(line_no, format!("unknown tag {other:?}"))),
        }
    }
    for list in lists.values() {
        for (ci, _) in list {
            if *ci as usize >= candidates.len() {
                return Err(err(0, format!("prefix row references candidate {ci}")));
            }
        }
    }
    let by_query =
        candidates.iter().enumerate().map(|(i, c)| (c.query.clone(), i as u32)).collect();
    Ok(TrieIndex {
        candidates,
        lists,
        by_query,
        max_fanout,
        error_model: ErrorModel { exact_match_mass, max_edits, adjacency },
    })
}
