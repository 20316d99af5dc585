//! Dataset ingestion: catalogs, event logs and search logs.
//!
//! All on-disk formats are line-delimited UTF-8 text with tab-separated
//! fields; lines starting with `#` are comments. Concretely:
//!
//! - catalog: `sku<TAB>shop_id<TAB>category<TAB>v1,v2,...,vD`
//! - event log: `timestamp<TAB>session_id<TAB>event_type<TAB>payload`
//! - search log: `query<TAB>sku:count;sku:count;...`
//!
//! Query strings are normalized once here (see [`crate::text::normalize_query`])
//! so every downstream consumer sees canonical spellings. Parsing then
//! serializing then re-parsing a dataset yields an equal dataset.

pub mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::normalize_query;

/// One product row from a shop catalog.
///
/// `raw_vector` is the unreduced image feature vector for the product; its
/// dimension must be constant within one catalog file.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogRecord {
    pub sku: String,
    pub shop_id: String,
    pub category: String,
    pub raw_vector: Vec<f64>,
}

/// Tracking event kinds recorded by the storefront.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    View,
    Suggest,
    Search,
    Click,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::View => "view",
            EventKind::Suggest => "suggest",
            EventKind::Search => "search",
            EventKind::Click => "click",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Typed payload of a [`SessionEvent`], determined by the event kind.
#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    /// Product impression; carries the product identifier.
    View { sku: String },
    /// The type-ahead box was queried with a (possibly partial) prefix.
    Suggest { prefix: String },
    /// A full search was issued; the query is stored normalized.
    Search { query: String },
    /// A suggestion was clicked: the typed prefix and the chosen completion,
    /// encoded on disk as `prefix|completion`.
    Click { prefix: String, suggestion: String },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::View { .. } => EventKind::View,
            EventPayload::Suggest { .. } => EventKind::Suggest,
            EventPayload::Search { .. } => EventKind::Search,
            EventPayload::Click { .. } => EventKind::Click,
        }
    }

    fn encode(&self) -> String {
        match self {
            EventPayload::View { sku } => sku.clone(),
            EventPayload::Suggest { prefix } => prefix.clone(),
            EventPayload::Search { query } => query.clone(),
            EventPayload::Click { prefix, suggestion } => format!("{prefix}|{suggestion}"),
        }
    }
}

/// One tracking event, timestamped in epoch milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionEvent {
    pub timestamp: i64,
    pub session_id: String,
    pub payload: EventPayload,
}

/// All events of one session, ordered by non-decreasing timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionGroup {
    pub session_id: String,
    pub events: Vec<SessionEvent>,
}

impl SessionGroup {
    /// SKUs of view events, in time order.
    pub fn viewed_skus(&self) -> Vec<&str> {
        self.events
            .iter()
            .filter_map(|e| match &e.payload {
                EventPayload::View { sku } => Some(sku.as_str()),
                _ => None,
            })
            .collect()
    }

    /// The first search event of the session, if any.
    pub fn first_search(&self) -> Option<(&SessionEvent, &str)> {
        self.events.iter().find_map(|e| match &e.payload {
            EventPayload::Search { query } => Some((e, query.as_str())),
            _ => None,
        })
    }
}

/// Aggregated search-log row: a query and the products clicked after it.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchLogEntry {
    pub query: String,
    pub clicked_skus: Vec<(String, u64)>,
    pub shop_id: String,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Yields `(1-based line number, content)` for data lines, skipping comments
/// and blank lines.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Load one shop catalog.
///
/// Rejects duplicate SKUs, rows whose `shop_id` column disagrees with the
/// expected shop, non-finite vector entries, and rows whose vector length
/// differs from the first data row of the file.
pub fn load_catalog(path: &Path, shop_id: &str) -> Result<Vec<CatalogRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut dim: Option<usize> = None;
    for (line_no, line) in data_lines(&text) {
        let mut fields = line.split('\t');
        let (sku, shop, category, vector) = match (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) {
            (Some(a), Some(b), Some(c), Some(d)) if fields.next().is_none() => (a, b, c, d),
            _ => return Err(parse_err(path, line_no, "expected 4 tab-separated fields")),
        };
        if shop != shop_id {
            return Err(parse_err(
                path,
                line_no,
                format!("shop_id {shop:?} does not match expected {shop_id:?}"),
            ));
        }
        if !seen.insert(sku.to_string()) {
            return Err(Error::DuplicateSku(sku.to_string()));
        }
        let raw_vector = vector
            .split(',')
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| parse_err(path, line_no, format!("bad vector entry {t:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if raw_vector.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line_no, "non-finite vector entry"));
        }
        match dim {
            None => dim = Some(raw_vector.len()),
            Some(d) if d != raw_vector.len() => {
                return Err(Error::Schema {
                    path: path.display().to_string(),
                    line: line_no,
                    expected: d,
                    got: raw_vector.len(),
                })
            }
            _ => {}
        }
        records.push(CatalogRecord {
            sku: sku.to_string(),
            shop_id: shop.to_string(),
            category: category.to_string(),
            raw_vector,
        });
    }
    Ok(records)
}

/// Load an event log and group it by session.
///
/// Groups appear in order of first appearance in the file; within each group
/// events are (stably) ordered by timestamp.
pub fn load_events(path: &Path) -> Result<Vec<SessionGroup>> {
    let text = fs::read_to_string(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<SessionEvent>> =
        std::collections::HashMap::new();
    for (line_no, line) in data_lines(&text) {
        let mut fields = line.splitn(4, '\t');
        let (ts, session, kind, payload) = match (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(parse_err(path, line_no, "expected 4 tab-separated fields")),
        };
        let timestamp: i64 = ts
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("bad timestamp {ts:?}: {e}")))?;
        let payload = match kind {
            "view" => EventPayload::View {
                sku: payload.to_string(),
            },
            "suggest" => EventPayload::Suggest {
                prefix: payload.to_string(),
            },
            "search" => {
                let query = normalize_query(payload);
                if query.is_empty() {
                    return Err(parse_err(path, line_no, "empty query after normalization"));
                }
                EventPayload::Search { query }
            }
            "click" => {
                let (prefix, suggestion) = payload.split_once('|').ok_or_else(|| {
                    parse_err(path, line_no, "click payload must be prefix|completion")
                })?;
                EventPayload::Click {
                    prefix: prefix.to_string(),
                    suggestion: normalize_query(suggestion),
                }
            }
            other => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("unknown event_type {other:?}"),
                ))
            }
        };
        if !groups.contains_key(session) {
            order.push(session.to_string());
        }
        groups
            .entry(session.to_string())
            .or_default()
            .push(SessionEvent {
                timestamp,
                session_id: session.to_string(),
                payload,
            });
    }
    Ok(order
        .into_iter()
        .map(|session_id| {
            let mut events = groups.remove(&session_id).unwrap();
            events.sort_by_key(|e| e.timestamp);
            SessionGroup { session_id, events }
        })
        .collect())
}

/// Load a search log for one shop.
pub fn load_search_log(path: &Path, shop_id: &str) -> Result<Vec<SearchLogEntry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let (raw_query, clicks) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, line_no, "expected 2 tab-separated fields"))?;
        let query = normalize_query(raw_query);
        if query.is_empty() {
            return Err(parse_err(path, line_no, "empty query after normalization"));
        }
        let mut clicked_skus = Vec::new();
        for part in clicks.split(';').filter(|p| !p.is_empty()) {
            let (sku, count) = part
                .split_once(':')
                .ok_or_else(|| parse_err(path, line_no, format!("bad click entry {part:?}")))?;
            let count: u64 = count
                .parse()
                .map_err(|e| parse_err(path, line_no, format!("bad count {count:?}: {e}")))?;
            if count == 0 {
                return Err(parse_err(path, line_no, "click count must be positive"));
            }
            clicked_skus.push((sku.to_string(), count));
        }
        if clicked_skus.is_empty() {
            return Err(parse_err(path, line_no, "search-log row with no clicks"));
        }
        entries.push(SearchLogEntry {
            query,
            clicked_skus,
            shop_id: shop_id.to_string(),
        });
    }
    Ok(entries)
}

pub fn write_catalog(path: &Path, records: &[CatalogRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# sku\tshop_id\tcategory\tv1,v2,...,vD")?;
    for r in records {
        let vec = r
            .raw_vector
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(f, "{}\t{}\t{}\t{}", r.sku, r.shop_id, r.category, vec)?;
    }
    Ok(())
}

pub fn write_events(path: &Path, groups: &[SessionGroup]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# timestamp\tsession_id\tevent_type\tpayload")?;
    for g in groups {
        for e in &g.events {
            writeln!(
                f,
                "{}\t{}\t{}\t{}",
                e.timestamp,
                e.session_id,
                e.payload.kind(),
                e.payload.encode()
            )?;
        }
    }
    Ok(())
}

pub fn write_search_log(path: &Path, entries: &[SearchLogEntry]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# query\tsku:count;sku:count;...")?;
    for e in entries {
        let clicks = e
            .clicked_skus
            .iter()
            .map(|(sku, count)| format!("{sku}:{count}"))
            .collect::<Vec<_>>()
            .join(";");
        writeln!(f, "{}\t{}", e.query, clicks)?;
    }
    Ok(())
}

/// Check that every SKU referenced by events or search logs exists in exactly
/// one of the given catalogs.
pub fn verify_references(
    catalogs: &[&[CatalogRecord]],
    events: &[SessionGroup],
    search_logs: &[&[SearchLogEntry]],
) -> Result<()> {
    let mut owners: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (idx, catalog) in catalogs.iter().enumerate() {
        for r in *catalog {
            if owners.insert(r.sku.as_str(), idx).is_some() {
                return Err(Error::DuplicateSku(r.sku.clone()));
            }
        }
    }
    for g in events {
        for e in &g.events {
            if let EventPayload::View { sku } = &e.payload {
                if !owners.contains_key(sku.as_str()) {
                    return Err(Error::UnknownSku(sku.clone()));
                }
            }
        }
    }
    for log in search_logs {
        for entry in *log {
            for (sku, _) in &entry.clicked_skus {
                if !owners.contains_key(sku.as_str()) {
                    return Err(Error::UnknownSku(sku.clone()));
                }
            }
        }
    }
    Ok(())
}
