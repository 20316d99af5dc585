//! Deterministic synthetic clickstream generator.
//!
//! Produces two shops that share a latent category structure: category
//! centroids live in a common raw vector space, each shop adds a small
//! per-category offset, and each product adds isotropic noise on top. The
//! resulting geometry has three properties the evaluation harness depends on:
//!
//! - categories are well separated (centroid scale far above product noise),
//!   so pooled view vectors identify the session's category;
//! - the two shops' versions of a category are closer to each other than to
//!   any other category, so vectors transfer across shops;
//! - a shop's own products are closer to its own queries than the sister
//!   shop's are, so within-shop personalization keeps an edge over transfer.
//!
//! Each category carries one broad query (the bare category word, clicked on
//! many distinct products, hence high dispersion) and several specific
//! queries ("ski gloves" style, each clicked on exactly one designated
//! product, hence zero dispersion). Query and category popularity follow a
//! Zipf profile so popularity baselines are meaningful.
//!
//! All randomness flows from one seeded ChaCha stream in a fixed draw order,
//! so equal configs produce byte-identical datasets.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{
    CatalogRecord, EventPayload, SearchLogEntry, SessionEvent, SessionGroup,
};

/// Knobs for [`generate`]. Counts must be positive and fractions must lie in
/// [0, 1]; `vector_dim` is the raw (pre-reduction) dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub rng_seed: u64,
    pub n_categories: usize,
    pub products_per_category: usize,
    pub vector_dim: usize,
    pub intra_category_noise: f64,
    /// Sessions generated per shop.
    pub n_sessions: usize,
    /// Views per session are drawn uniformly from `min_views..=max_views`.
    pub min_views: usize,
    pub max_views: usize,
    /// Queries per category including the broad one.
    pub queries_per_category: usize,
    /// Per-category query strings; `None` uses the built-in word banks.
    /// Entry `[c][0]` is the broad query of category `c`.
    pub query_vocabulary: Option<Vec<Vec<String>>>,
    /// Fraction of session indices that belong to a shopper active on both
    /// shops with one shared latent intent.
    pub cross_shop_fraction: f64,
    /// Fraction of the session timeline placed before the suggested
    /// train/test boundary timestamp.
    pub train_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            rng_seed: 17,
            n_categories: 6,
            products_per_category: 20,
            vector_dim: 64,
            intra_category_noise: 0.25,
            n_sessions: 2400,
            min_views: 2,
            max_views: 6,
            queries_per_category: 8,
            query_vocabulary: None,
            cross_shop_fraction: 0.12,
            train_fraction: 0.75,
        }
    }
}

/// Ground-truth latent category of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentLabel {
    pub session_id: String,
    pub shop_id: String,
    pub category: String,
}

/// A shopper who produced one session on each shop under a single intent.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossShopPair {
    pub user_id: String,
    pub session_a: String,
    pub session_b: String,
    pub category: String,
}

/// Everything [`generate`] produces for the two shops `shop_a` and `shop_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub catalog_a: Vec<CatalogRecord>,
    pub catalog_b: Vec<CatalogRecord>,
    pub events_a: Vec<SessionGroup>,
    pub events_b: Vec<SessionGroup>,
    pub search_log_a: Vec<SearchLogEntry>,
    pub search_log_b: Vec<SearchLogEntry>,
    pub intents: Vec<IntentLabel>,
    pub pairs: Vec<CrossShopPair>,
    /// Suggested train/test split point: sessions whose search event lies
    /// before this timestamp were aggregated into the search logs.
    pub boundary: i64,
}

pub const SHOP_A: &str = "shop_a";
pub const SHOP_B: &str = "shop_b";

/// The default range mixes first letters on purpose: the two most popular
/// categories share 's', so a one-character seed stays ambiguous where most
/// traffic lives, while the remaining categories start uniquely and are
/// pinned down by their first character. A single typed character therefore
/// carries real but incomplete signal.
const CATEGORY_WORDS: [&str; 16] = [
    "ski", "soccer", "tennis", "running", "golf", "snowboard", "swim", "skate", "surf", "yoga",
    "boxing", "hockey", "sailing", "climbing", "rowing", "cycling",
];

const ITEM_WORDS: [&str; 12] = [
    "jacket", "gloves", "shoes", "pants", "helmet", "goggles", "socks", "shorts", "bag", "cap",
    "board", "racket",
];

/// Raw-space scale of category centroids.
const CENTROID_SCALE: f64 = 3.0;
/// Raw-space scale of the per-shop per-category offset. Kept well below the
/// centroid scale so both shops' vectors stay comparable after a shared
/// reduction, which is what cross-shop transfer relies on.
const SHOP_OFFSET_SCALE: f64 = 0.4;
/// Probability that a session's search target is the broad category query.
const BROAD_TARGET_WEIGHT: f64 = 0.3;
/// Probability that a session with a specific target actually viewed the
/// product designated to that query. Controls how often pooled view vectors
/// individuate a specific query instead of only its category.
const VIEW_TARGET_PROB: f64 = 0.35;
/// Session start spacing and epoch origin (2021-06-01T00:00:00Z).
const BASE_TS: i64 = 1_622_505_600_000;
const SESSION_SPACING_MS: i64 = 3_600_000;
const SHOP_B_OFFSET_MS: i64 = 1_800_000;
const VIEW_SPACING_MS: i64 = 30_000;

fn validate(config: &SyntheticConfig) -> Result<()> {
    let positive = [
        ("n_categories", config.n_categories),
        ("products_per_category", config.products_per_category),
        ("vector_dim", config.vector_dim),
        ("n_sessions", config.n_sessions),
        ("min_views", config.min_views),
        ("queries_per_category", config.queries_per_category),
    ];
    for (name, value) in positive {
        if value == 0 {
            return Err(Error::Argument(format!("{name} must be positive")));
        }
    }
    if config.max_views < config.min_views {
        return Err(Error::Argument("max_views must be >= min_views".into()));
    }
    if config.queries_per_category > config.products_per_category {
        return Err(Error::Argument(
            "queries_per_category must not exceed products_per_category".into(),
        ));
    }
    for (name, value) in [
        ("cross_shop_fraction", config.cross_shop_fraction),
        ("train_fraction", config.train_fraction),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Argument(format!("{name} must lie in [0, 1]")));
        }
    }
    if config.intra_category_noise < 0.0 {
        return Err(Error::Argument("intra_category_noise must be >= 0".into()));
    }
    if let Some(vocab) = &config.query_vocabulary {
        if vocab.len() != config.n_categories
            || vocab.iter().any(|qs| qs.len() != config.queries_per_category)
        {
            return Err(Error::Argument(
                "query_vocabulary must be n_categories lists of queries_per_category".into(),
            ));
        }
    }
    Ok(())
}

/// Standard normal draw via Box-Muller; two uniforms per call keeps the
/// stream layout independent of any cached spare value.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Index draw proportional to `weights` (all non-negative, sum positive).
fn weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn default_vocabulary(n_categories: usize, queries_per_category: usize) -> Vec<Vec<String>> {
    (0..n_categories)
        .map(|c| {
            let word = CATEGORY_WORDS[c % CATEGORY_WORDS.len()];
            let cat = if c < CATEGORY_WORDS.len() {
                word.to_string()
            } else {
                format!("{word}{}", c / CATEGORY_WORDS.len() + 1)
            };
            let mut queries = vec![cat.clone()];
            for j in 1..queries_per_category {
                let item = ITEM_WORDS[(j - 1) % ITEM_WORDS.len()];
                let suffix = (j - 1) / ITEM_WORDS.len();
                if suffix == 0 {
                    queries.push(format!("{cat} {item}"));
                } else {
                    queries.push(format!("{cat} {item} {}", suffix + 1));
                }
            }
            queries
        })
        .collect()
}

struct ShopPlan<'a> {
    shop_id: &'a str,
    short: &'a str,
    ts_offset: i64,
}

/// Generate a full two-shop dataset. Equal configs yield equal outputs.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let n_cats = config.n_categories;
    let dim = config.vector_dim;
    let vocab = config
        .query_vocabulary
        .clone()
        .unwrap_or_else(|| default_vocabulary(n_cats, config.queries_per_category));

    let centroids: Vec<Vec<f64>> = (0..n_cats)
        .map(|_| (0..dim).map(|_| normal(&mut rng) * CENTROID_SCALE).collect())
        .collect();
    let offsets: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|_| {
            (0..n_cats)
                .map(|_| (0..dim).map(|_| normal(&mut rng) * SHOP_OFFSET_SCALE).collect())
                .collect()
        })
        .collect();

    let shops = [
        ShopPlan { shop_id: SHOP_A, short: "a", ts_offset: 0 },
        ShopPlan { shop_id: SHOP_B, short: "b", ts_offset: SHOP_B_OFFSET_MS },
    ];

    // Catalogs. Product j of a category doubles as the designated product of
    // specific query j of that category on that shop.
    let mut catalogs: Vec<Vec<CatalogRecord>> = Vec::new();
    for (s, shop) in shops.iter().enumerate() {
        let mut records = Vec::new();
        for (c, cat_queries) in vocab.iter().enumerate().take(n_cats) {
            let category = cat_queries[0].clone();
            for p in 0..config.products_per_category {
                let raw_vector: Vec<f64> = (0..dim)
                    .map(|d| {
                        centroids[c][d]
                            + offsets[s][c][d]
                            + normal(&mut rng) * config.intra_category_noise
                    })
                    .collect();
                records.push(CatalogRecord {
                    sku: format!("{}-c{c:02}-p{p:03}", shop.short),
                    shop_id: shop.shop_id.to_string(),
                    category: category.clone(),
                    raw_vector,
                });
            }
        }
        catalogs.push(records);
    }
    let sku_of = |s: usize, c: usize, p: usize| catalogs[s][c * config.products_per_category + p].sku.clone();

    // Popularity profiles: Zipf across categories and across specific
    // queries; the broad query takes a fixed share of its category's mass.
    let cat_weights: Vec<f64> = (0..n_cats).map(|c| 1.0 / (c + 1) as f64).collect();
    let specific_weights: Vec<f64> =
        (1..config.queries_per_category).map(|j| 1.0 / j as f64).collect();

    // Cross-shop pairs occupy every k-th session index so they cover the
    // whole timeline (and hence both sides of the train/test boundary).
    let pair_stride = if config.cross_shop_fraction > 0.0 {
        (1.0 / config.cross_shop_fraction).floor().max(1.0) as usize
    } else {
        usize::MAX
    };
    let paired = |i: usize| pair_stride != usize::MAX && i % pair_stride == 0;
    let pair_categories: Vec<usize> = (0..config.n_sessions)
        .filter(|i| paired(*i))
        .map(|_| weighted(&mut rng, &cat_weights))
        .collect();

    let mut events: Vec<Vec<SessionGroup>> = vec![Vec::new(), Vec::new()];
    let mut logs: Vec<BTreeMap<String, BTreeMap<String, u64>>> =
        vec![BTreeMap::new(), BTreeMap::new()];
    let mut intents = Vec::new();
    let mut pairs = Vec::new();
    let boundary = BASE_TS
        + (config.train_fraction * config.n_sessions as f64).floor() as i64 * SESSION_SPACING_MS;

    for (s, shop) in shops.iter().enumerate() {
        let mut pair_no = 0usize;
        for i in 0..config.n_sessions {
            let c = if paired(i) {
                let c = pair_categories[pair_no];
                pair_no += 1;
                c
            } else {
                weighted(&mut rng, &cat_weights)
            };
            let session_id = format!("{}-s{i:05}", shop.short);

            // Target query for the session's search.
            let broad = config.queries_per_category == 1
                || rng.random_range(0.0..1.0) < BROAD_TARGET_WEIGHT;
            let (target, designated) = if broad {
                (vocab[c][0].clone(), None)
            } else {
                let j = weighted(&mut rng, &specific_weights) + 1;
                (vocab[c][j].clone(), Some(j))
            };

            // Views: category products, sometimes including the designated
            // product so pooled vectors can individuate specific targets.
            let n_views = rng.random_range(config.min_views..=config.max_views);
            let mut view_products: Vec<usize> = (0..n_views)
                .map(|_| rng.random_range(0..config.products_per_category))
                .collect();
            if let Some(j) = designated {
                let hit = rng.random_range(0.0..1.0) < VIEW_TARGET_PROB;
                let slot = rng.random_range(0..n_views);
                if hit {
                    view_products[slot] = j;
                }
            }

            // Post-search product click; drives the search log.
            let clicked = match designated {
                Some(j) => j,
                None => rng.random_range(0..config.products_per_category),
            };

            let start = BASE_TS + i as i64 * SESSION_SPACING_MS + shop.ts_offset;
            let mut evs: Vec<SessionEvent> = view_products
                .iter()
                .enumerate()
                .map(|(v, p)| SessionEvent {
                    timestamp: start + v as i64 * VIEW_SPACING_MS,
                    session_id: session_id.clone(),
                    payload: EventPayload::View { sku: sku_of(s, c, *p) },
                })
                .collect();
            let after_views = start + n_views as i64 * VIEW_SPACING_MS;
            let first_char = target.chars().next().unwrap().to_string();
            evs.push(SessionEvent {
                timestamp: after_views + 5_000,
                session_id: session_id.clone(),
                payload: EventPayload::Suggest { prefix: first_char.clone() },
            });
            evs.push(SessionEvent {
                timestamp: after_views + 6_000,
                session_id: session_id.clone(),
                payload: EventPayload::Click { prefix: first_char, suggestion: target.clone() },
            });
            let search_ts = after_views + 8_000;
            evs.push(SessionEvent {
                timestamp: search_ts,
                session_id: session_id.clone(),
                payload: EventPayload::Search { query: target.clone() },
            });

            if search_ts < boundary {
                *logs[s]
                    .entry(target.clone())
                    .or_default()
                    .entry(sku_of(s, c, clicked))
                    .or_insert(0) += 1;
            }
            intents.push(IntentLabel {
                session_id: session_id.clone(),
                shop_id: shop.shop_id.to_string(),
                category: vocab[c][0].clone(),
            });
            if s == 1 && paired(i) {
                pairs.push(CrossShopPair {
                    user_id: format!("u{i:05}"),
                    session_a: format!("a-s{i:05}"),
                    session_b: session_id.clone(),
                    category: vocab[c][0].clone(),
                });
            }
            events[s].push(SessionGroup { session_id, events: evs });
        }
    }

    let to_entries = |log: &BTreeMap<String, BTreeMap<String, u64>>, shop_id: &str| {
        log.iter()
            .map(|(query, clicks)| SearchLogEntry {
                query: query.clone(),
                clicked_skus: clicks.iter().map(|(sku, n)| (sku.clone(), *n)).collect(),
                shop_id: shop_id.to_string(),
            })
            .collect::<Vec<_>>()
    };
    let search_log_a = to_entries(&logs[0], SHOP_A);
    let search_log_b = to_entries(&logs[1], SHOP_B);
    let mut it = events.into_iter();
    Ok(SyntheticDataset {
        catalog_a: catalogs.swap_remove(0),
        catalog_b: catalogs.pop().unwrap(),
        events_a: it.next().unwrap(),
        events_b: it.next().unwrap(),
        search_log_a,
        search_log_b,
        intents,
        pairs,
        boundary,
    })
}

pub fn write_intents(path: &Path, intents: &[IntentLabel]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# session_id\tshop_id\tcategory")?;
    for label in intents {
        writeln!(f, "{}\t{}\t{}", label.session_id, label.shop_id, label.category)?;
    }
    Ok(())
}

pub fn load_intents(path: &Path) -> Result<Vec<IntentLabel>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (line_no, line) in super::data_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                msg: "expected 3 tab-separated fields".into(),
            });
        }
        out.push(IntentLabel {
            session_id: fields[0].to_string(),
            shop_id: fields[1].to_string(),
            category: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[CrossShopPair]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# user_id\tsession_a\tsession_b\tcategory")?;
    for p in pairs {
        writeln!(f, "{}\t{}\t{}\t{}", p.user_id, p.session_a, p.session_b, p.category)?;
    }
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<CrossShopPair>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (line_no, line) in super::data_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                msg: "expected 4 tab-separated fields".into(),
            });
        }
        out.push(CrossShopPair {
            user_id: fields[0].to_string(),
            session_a: fields[1].to_string(),
            session_b: fields[2].to_string(),
            category: fields[3].to_string(),
        });
    }
    Ok(out)
}
