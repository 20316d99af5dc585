//! Query string normalization.
//!
//! Every query crosses this function exactly once, at ingest time, so all
//! downstream modules (priors, tries, query vectors, evaluation matching)
//! see one canonical spelling: lowercase, trimmed, internal whitespace runs
//! collapsed to a single space.

/// Canonicalize a raw query string.
///
/// ```
/// use typeahead::text::normalize_query;
/// assert_eq!(normalize_query("  Ski\t GLOVES "), "ski gloves");
/// ```
pub fn normalize_query(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.trim().chars() {
        if ch.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        for low in ch.to_lowercase() {
            out.push(low);
        }
    }
    out
}

/// Canonicalize a typed prefix.
///
/// Like [`normalize_query`] but keeps a single trailing space when the input
/// ended in whitespace: `"ski "` is a real prefix of `"ski gloves"` and must
/// stay distinct from `"ski"`.
///
/// ```
/// use typeahead::text::normalize_prefix;
/// assert_eq!(normalize_prefix("  SKI  "), "ski ");
/// assert_eq!(normalize_prefix("ski"), "ski");
/// ```
pub fn normalize_prefix(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
        }
        pending_space = false;
        for low in ch.to_lowercase() {
            out.push(low);
        }
    }
    if pending_space {
        out.push(' ');
    }
    out
}

/// Split a normalized query into whitespace tokens.
pub fn tokenize(query: &str) -> Vec<&str> {
    query.split_whitespace().collect()
}
