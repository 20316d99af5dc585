//! Online session state: viewed products, a running-mean pooled vector,
//! expiry, and cross-shop vector transfer.
//!
//! The cache is keyed by (shop, session). Recording a view folds the
//! product's reduced vector into a running mean, so memory per session is
//! O(K) regardless of how long the shopper browses; the recent SKU list is
//! kept only up to a configurable window for diagnostics. Because all shops'
//! vectors live in one shared reduced space, a pooled vector computed on one
//! shop can be attached to the same session on another shop
//! ([`SessionCache::transfer_session`]) and used for personalization there
//! before the shopper has viewed anything: no model change or retraining is
//! involved, the vector is simply carried over unchanged.
//!
//! Lookup precedence is total and deterministic: in-shop pooled vector,
//! else transferred vector, else absent. Expired sessions behave as absent
//! and are reclaimed by [`SessionCache::purge_expired`] or reset in place by
//! the next write. All operations take the clock as an explicit `now_ms`
//! argument, which keeps every expiry path deterministic under test.
//!
//! Concurrency: per-key updates are serialized by the underlying sharded
//! map and readers never observe a partially applied update; operations on
//! distinct keys proceed concurrently. Only the admission of a brand-new
//! session takes a short global lock so capacity eviction stays orderly.

use std::collections::VecDeque;
use std::sync::Mutex;

use dashmap::DashMap;

use crate::error::{Error, Result};
use crate::vectors::VectorTable;

/// Cache behavior knobs. TTL follows the common 30-minute web session
/// convention; eviction is least-recently-updated.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheConfig {
    pub ttl_ms: u64,
    pub max_sessions: usize,
    pub eviction: Eviction,
    /// How many recent SKUs to retain per session for diagnostics. The
    /// pooled vector always reflects every view regardless of this window.
    pub viewed_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eviction {
    Lru,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            ttl_ms: 30 * 60 * 1000,
            max_sessions: 100_000,
            eviction: Eviction::Lru,
            viewed_window: 50,
        }
    }
}

#[derive(Debug, Clone)]
struct SessionState {
    viewed_skus: VecDeque<String>,
    /// Total views ever recorded, the denominator of the running mean.
    view_count: u64,
    pooled_vector: Option<Vec<f64>>,
    last_update: u64,
    source_shop_vector: Option<(String, Vec<f64>)>,
}

impl SessionState {
    fn fresh(now_ms: u64) -> SessionState {
        SessionState {
            viewed_skus: VecDeque::new(),
            view_count: 0,
            pooled_vector: None,
            last_update: now_ms,
            source_shop_vector: None,
        }
    }
}

/// Observable copy of one session's state.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub shop_id: String,
    pub viewed_skus: Vec<String>,
    pub view_count: u64,
    pub pooled_vector: Option<Vec<f64>>,
    pub last_update: u64,
    pub source_shop_vector: Option<(String, Vec<f64>)>,
}

/// What a session-vector lookup produced, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionVector {
    /// Mean of in-shop product views.
    Pooled(Vec<f64>),
    /// Vector carried over from another shop; no in-shop views yet.
    Transferred { from_shop: String, vector: Vec<f64> },
}

impl SessionVector {
    pub fn vector(&self) -> &[f64] {
        match self {
            SessionVector::Pooled(v) => v,
            SessionVector::Transferred { vector, .. } => vector,
        }
    }
}

type Key = (String, String);

/// Concurrent session cache; see the module docs for semantics.
pub struct SessionCache {
    map: DashMap<Key, SessionState>,
    config: CacheConfig,
    admit: Mutex<()>,
}

impl SessionCache {
    pub fn new(config: CacheConfig) -> Result<SessionCache> {
        if config.ttl_ms == 0 {
            return Err(Error::Argument("session ttl must be positive".into()));
        }
        if config.max_sessions == 0 {
            return Err(Error::Argument("max_sessions must be positive".into()));
        }
        Ok(SessionCache { map: DashMap::new(), config, admit: Mutex::new(()) })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn expired(&self, state: &SessionState, now_ms: u64) -> bool {
        now_ms.saturating_sub(state.last_update) > self.config.ttl_ms
    }

    /// Make room for a key not currently present: evict the
    /// least-recently-updated session (ties broken by key order) until the
    /// count is below capacity. Callers hold the admit lock.
    fn evict_for_admission(&self) {
        while self.map.len() >= self.config.max_sessions {
            let oldest = self
                .map
                .iter()
                .map(|e| (e.value().last_update, e.key().clone()))
                .min_by(|a, b| a.cmp(b));
            match oldest {
                Some((_, key)) => {
                    self.map.remove(&key);
                }
                None => break,
            }
        }
    }

    fn with_state<T>(
        &self,
        key: Key,
        now_ms: u64,
        apply: impl FnOnce(&mut SessionState) -> Result<T>,
    ) -> Result<T> {
        if !self.map.contains_key(&key) {
            let _admit = self.admit.lock().expect("admit lock poisoned");
            if !self.map.contains_key(&key) {
                self.evict_for_admission();
                self.map.insert(key.clone(), SessionState::fresh(now_ms));
            }
        }
        let mut entry = self
            .map
            .get_mut(&key)
            .ok_or_else(|| Error::UnknownSession(format!("{}/{}", key.0, key.1)))?;
        let state = entry.value_mut();
        if self.expired(state, now_ms) {
            *state = SessionState::fresh(now_ms);
        }
        apply(state)
    }

    /// Record a product view: append the SKU, fold its vector into the
    /// running mean, refresh the update timestamp.
    pub fn record_view(
        &self,
        session_id: &str,
        shop_id: &str,
        sku: &str,
        vectors: &VectorTable,
        now_ms: u64,
    ) -> Result<SessionSnapshot> {
        let v = vectors
            .get(sku)
            .ok_or_else(|| Error::UnknownSku(sku.to_string()))?
            .to_vec();
        let key = (shop_id.to_string(), session_id.to_string());
        self.with_state(key, now_ms, |state| {
            match &mut state.pooled_vector {
                None => state.pooled_vector = Some(v.clone()),
                Some(pooled) => {
                    if pooled.len() != v.len() {
                        return Err(Error::Dimension { expected: pooled.len(), got: v.len() });
                    }
                    let n = (state.view_count + 1) as f64;
                    for (p, x) in pooled.iter_mut().zip(&v) {
                        *p += (x - *p) / n;
                    }
                }
            }
            state.view_count += 1;
            state.viewed_skus.push_back(sku.to_string());
            while state.viewed_skus.len() > self.config.viewed_window {
                state.viewed_skus.pop_front();
            }
            state.last_update = now_ms;
            Ok(snapshot_of(session_id, shop_id, state))
        })
    }

    /// The session vector for personalization, by precedence: in-shop pooled
    /// mean, else transferred vector, else `None`. Expired sessions are
    /// `None`. Reading does not extend a session's lifetime.
    pub fn get_session_vector(
        &self,
        session_id: &str,
        shop_id: &str,
        now_ms: u64,
    ) -> Option<SessionVector> {
        let key = (shop_id.to_string(), session_id.to_string());
        let entry = self.map.get(&key)?;
        let state = entry.value();
        if self.expired(state, now_ms) {
            return None;
        }
        if let Some(pooled) = &state.pooled_vector {
            return Some(SessionVector::Pooled(pooled.clone()));
        }
        state
            .source_shop_vector
            .as_ref()
            .map(|(shop, v)| SessionVector::Transferred {
                from_shop: shop.clone(),
                vector: v.clone(),
            })
    }

    /// Copy the source shop's pooled vector onto the same session at the
    /// target shop. The vector is carried over unchanged; the shared reduced
    /// space makes it directly comparable there.
    pub fn transfer_session(
        &self,
        session_id: &str,
        from_shop: &str,
        to_shop: &str,
        now_ms: u64,
    ) -> Result<SessionSnapshot> {
        if from_shop == to_shop {
            return Err(Error::Argument("transfer requires two distinct shops".into()));
        }
        let source_key = (from_shop.to_string(), session_id.to_string());
        let pooled = {
            let entry = self.map.get(&source_key).ok_or_else(|| {
                Error::UnknownSession(format!("{from_shop}/{session_id}"))
            })?;
            let state = entry.value();
            if self.expired(state, now_ms) {
                return Err(Error::UnknownSession(format!(
                    "{from_shop}/{session_id} (expired)"
                )));
            }
            state.pooled_vector.clone().ok_or_else(|| {
                Error::EmptySession(format!("{from_shop}/{session_id} has no views to transfer"))
            })?
        };
        let key = (to_shop.to_string(), session_id.to_string());
        self.with_state(key, now_ms, |state| {
            if let Some(existing) = &state.pooled_vector {
                if existing.len() != pooled.len() {
                    return Err(Error::Dimension { expected: existing.len(), got: pooled.len() });
                }
            }
            state.source_shop_vector = Some((from_shop.to_string(), pooled.clone()));
            state.last_update = now_ms;
            Ok(snapshot_of(session_id, to_shop, state))
        })
    }

    /// Drop every expired session; returns how many were reclaimed.
    pub fn purge_expired(&self, now_ms: u64) -> usize {
        let before = self.map.len();
        self.map.retain(|_, state| !self.expired(state, now_ms));
        before - self.map.len()
    }

    /// Diagnostic copy of a session's state, expiry not applied.
    pub fn snapshot(&self, session_id: &str, shop_id: &str) -> Option<SessionSnapshot> {
        let key = (shop_id.to_string(), session_id.to_string());
        self.map
            .get(&key)
            .map(|e| snapshot_of(session_id, shop_id, e.value()))
    }
}

fn snapshot_of(session_id: &str, shop_id: &str, state: &SessionState) -> SessionSnapshot {
    SessionSnapshot {
        session_id: session_id.to_string(),
        shop_id: shop_id.to_string(),
        viewed_skus: state.viewed_skus.iter().cloned().collect(),
        view_count: state.view_count,
        pooled_vector: state.pooled_vector.clone(),
        last_update: state.last_update,
        source_shop_vector: state.source_shop_vector.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHOP_A: &str = "shop_a";
    const SHOP_B: &str = "shop_b";

    fn table(entries: &[(&str, &[f64])]) -> VectorTable {
        let mut t = VectorTable::new(entries[0].1.len());
        for (sku, v) in entries {
            t.insert(sku.to_string(), v.to_vec()).unwrap();
        }
        t
    }

    fn abc_table() -> VectorTable {
        table(&[
            ("sku-a", &[1.0, 0.0]),
            ("sku-b", &[0.0, 1.0]),
            ("sku-c", &[4.0, -2.0]),
            ("sku-d", &[-1.0, 3.0]),
            ("sku-e", &[0.5, 0.5]),
        ])
    }

    fn cache() -> SessionCache {
        SessionCache::new(CacheConfig::default()).unwrap()
    }

    #[test]
    fn first_view_equals_product_vector() {
        let cache = cache();
        let t = abc_table();
        let snap = cache.record_view("s1", SHOP_A, "sku-a", &t, 1000).unwrap();
        assert_eq!(snap.pooled_vector, Some(vec![1.0, 0.0]));
        assert_eq!(
            cache.get_session_vector("s1", SHOP_A, 1000),
            Some(SessionVector::Pooled(vec![1.0, 0.0]))
        );
    }

    #[test]
    fn repeated_view_is_idempotent_for_the_mean() {
        let cache = cache();
        let t = abc_table();
        cache.record_view("s1", SHOP_A, "sku-c", &t, 1000).unwrap();
        let snap = cache.record_view("s1", SHOP_A, "sku-c", &t, 2000).unwrap();
        assert_eq!(snap.pooled_vector, Some(vec![4.0, -2.0]));
        assert_eq!(snap.view_count, 2);
    }

    #[test]
    fn running_mean_matches_batch_mean_oracle() {
        let cache = cache();
        let t = abc_table();
        let skus = ["sku-a", "sku-b", "sku-c", "sku-d", "sku-e"];
        for (i, sku) in skus.iter().enumerate() {
            cache.record_view("s1", SHOP_A, sku, &t, 1000 + i as u64).unwrap();
        }
        let got = match cache.get_session_vector("s1", SHOP_A, 2000).unwrap() {
            SessionVector::Pooled(v) => v,
            other => panic!("expected pooled, got {other:?}"),
        };
        // Oracle: batch mean over the full view list.
        let vectors: Vec<Vec<f64>> = skus.iter().map(|s| t.get(s).unwrap().to_vec()).collect();
        let want = crate::linalg::mean(&vectors).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_sku_and_session_paths() {
        let cache = cache();
        let t = abc_table();
        assert!(matches!(
            cache.record_view("s1", SHOP_A, "nope", &t, 0),
            Err(Error::UnknownSku(_))
        ));
        // The failed view must not have admitted the session.
        assert_eq!(cache.get_session_vector("s1", SHOP_A, 0), None);
        assert!(cache.snapshot("s1", SHOP_A).is_none());
    }

    #[test]
    fn expiry_behaves_as_absent_and_is_reclaimable() {
        let cache = SessionCache::new(CacheConfig { ttl_ms: 1000, ..CacheConfig::default() })
            .unwrap();
        let t = abc_table();
        cache.record_view("s1", SHOP_A, "sku-a", &t, 0).unwrap();
        assert!(cache.get_session_vector("s1", SHOP_A, 1000).is_some());
        // Strictly past the ttl: absent.
        assert!(cache.get_session_vector("s1", SHOP_A, 1001).is_none());
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.purge_expired(1001), 1);
        assert_eq!(cache.len(), 0);
    }

    #[test]
    fn write_after_expiry_resets_the_session() {
        let cache = SessionCache::new(CacheConfig { ttl_ms: 1000, ..CacheConfig::default() })
            .unwrap();
        let t = abc_table();
        cache.record_view("s1", SHOP_A, "sku-a", &t, 0).unwrap();
        let snap = cache.record_view("s1", SHOP_A, "sku-b", &t, 5000).unwrap();
        // The stale view from before the expiry is gone.
        assert_eq!(snap.view_count, 1);
        assert_eq!(snap.pooled_vector, Some(vec![0.0, 1.0]));
        assert_eq!(snap.viewed_skus, vec!["sku-b".to_string()]);
    }

    #[test]
    fn transfer_copies_pooled_vector_unchanged() {
        let cache = cache();
        let t = abc_table();
        cache.record_view("s1", SHOP_A, "sku-c", &t, 0).unwrap();
        let snap = cache.transfer_session("s1", SHOP_A, SHOP_B, 10).unwrap();
        assert_eq!(snap.source_shop_vector, Some((SHOP_A.to_string(), vec![4.0, -2.0])));
        assert_eq!(
            cache.get_session_vector("s1", SHOP_B, 10),
            Some(SessionVector::Transferred {
                from_shop: SHOP_A.to_string(),
                vector: vec![4.0, -2.0]
            })
        );
        // The source shop state is untouched.
        assert_eq!(
            cache.get_session_vector("s1", SHOP_A, 10),
            Some(SessionVector::Pooled(vec![4.0, -2.0]))
        );
    }

    #[test]
    fn in_shop_views_take_precedence_over_transfer() {
        let cache = cache();
        let t = abc_table();
        cache.record_view("s1", SHOP_A, "sku-c", &t, 0).unwrap();
        cache.transfer_session("s1", SHOP_A, SHOP_B, 1).unwrap();
        cache.record_view("s1", SHOP_B, "sku-b", &t, 2).unwrap();
        // Pooled beats transferred outright; no blending.
        assert_eq!(
            cache.get_session_vector("s1", SHOP_B, 2),
            Some(SessionVector::Pooled(vec![0.0, 1.0]))
        );
        // The transferred vector is still recorded for diagnostics.
        let snap = cache.snapshot("s1", SHOP_B).unwrap();
        assert!(snap.source_shop_vector.is_some());
    }

    #[test]
    fn transfer_requires_a_pooled_source() {
        let cache = cache();
        let t = abc_table();
        // Never-seen source.
        assert!(matches!(
            cache.transfer_session("s1", SHOP_A, SHOP_B, 0),
            Err(Error::UnknownSession(_))
        ));
        // Source that only holds a transferred vector cannot chain-transfer.
        cache.record_view("s1", SHOP_A, "sku-a", &t, 0).unwrap();
        cache.transfer_session("s1", SHOP_A, SHOP_B, 1).unwrap();
        assert!(matches!(
            cache.transfer_session("s1", SHOP_B, "shop_c", 2),
            Err(Error::EmptySession(_))
        ));
        // Expired source behaves as absent.
        let short = SessionCache::new(CacheConfig { ttl_ms: 10, ..CacheConfig::default() })
            .unwrap();
        short.record_view("s1", SHOP_A, "sku-a", &t, 0).unwrap();
        assert!(matches!(
            short.transfer_session("s1", SHOP_A, SHOP_B, 100),
            Err(Error::UnknownSession(_))
        ));
        // Same-shop transfer is rejected.
        assert!(cache.transfer_session("s1", SHOP_A, SHOP_A, 3).is_err());
    }

    #[test]
    fn viewed_window_truncates_but_mean_covers_all_views() {
        let cache = SessionCache::new(CacheConfig { viewed_window: 3, ..CacheConfig::default() })
            .unwrap();
        let t = abc_table();
        let skus = ["sku-a", "sku-b", "sku-c", "sku-d", "sku-e"];
        for (i, sku) in skus.iter().enumerate() {
            cache.record_view("s1", SHOP_A, sku, &t, i as u64).unwrap();
        }
        let snap = cache.snapshot("s1", SHOP_A).unwrap();
        assert_eq!(snap.viewed_skus, vec!["sku-c", "sku-d", "sku-e"]);
        assert_eq!(snap.view_count, 5);
        let vectors: Vec<Vec<f64>> = skus.iter().map(|s| t.get(s).unwrap().to_vec()).collect();
        let want = crate::linalg::mean(&vectors).unwrap();
        for (g, w) in snap.pooled_vector.unwrap().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_eviction_drops_least_recently_updated() {
        let cache = SessionCache::new(CacheConfig { max_sessions: 2, ..CacheConfig::default() })
            .unwrap();
        let t = abc_table();
        cache.record_view("s1", SHOP_A, "sku-a", &t, 100).unwrap();
        cache.record_view("s2", SHOP_A, "sku-b", &t, 200).unwrap();
        // Touch s1 so s2 becomes the oldest.
        cache.record_view("s1", SHOP_A, "sku-b", &t, 300).unwrap();
        cache.record_view("s3", SHOP_A, "sku-c", &t, 400).unwrap();
        assert_eq!(cache.len(), 2);
        assert!(cache.get_session_vector("s2", SHOP_A, 400).is_none());
        assert!(cache.get_session_vector("s1", SHOP_A, 400).is_some());
        assert!(cache.get_session_vector("s3", SHOP_A, 400).is_some());
    }

    #[test]
    fn operations_on_distinct_sessions_commute() {
        // Exhaustive check over all interleavings of two ops on s1 and two
        // on s2: the final observable state of each session is independent
        // of the interleaving.
        let t = abc_table();
        let ops: [(&str, &str); 4] = [
            ("s1", "sku-a"),
            ("s1", "sku-c"),
            ("s2", "sku-b"),
            ("s2", "sku-d"),
        ];
        // All permutations keeping each session's own ops in order.
        let orders: Vec<Vec<usize>> = permutations(&[0, 1, 2, 3])
            .into_iter()
            .filter(|p| {
                let a: Vec<usize> = p.iter().copied().filter(|i| *i < 2).collect();
                let b: Vec<usize> = p.iter().copied().filter(|i| *i >= 2).collect();
                a == [0, 1] && b == [2, 3]
            })
            .collect();
        assert_eq!(orders.len(), 6);
        let mut outcomes = Vec::new();
        for order in orders {
            let cache = cache();
            for (step, i) in order.iter().enumerate() {
                let (sid, sku) = ops[*i];
                cache.record_view(sid, SHOP_A, sku, &t, step as u64).unwrap();
            }
            outcomes.push((
                cache.get_session_vector("s1", SHOP_A, 10),
                cache.get_session_vector("s2", SHOP_A, 10),
            ));
        }
        for pair in &outcomes[1..] {
            assert_eq!(pair, &outcomes[0]);
        }
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, head) in items.iter().enumerate() {
            let mut rest = items.to_vec();
            rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, *head);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn concurrent_views_from_many_threads_stay_consistent() {
        use std::sync::Arc;
        let cache = Arc::new(cache());
        let t = Arc::new(abc_table());
        let mut handles = Vec::new();
        for thread in 0..8 {
            let cache = Arc::clone(&cache);
            let t = Arc::clone(&t);
            handles.push(std::thread::spawn(move || {
                let sid = format!("s{}", thread % 2);
                for i in 0..100 {
                    cache.record_view(&sid, SHOP_A, "sku-e", &t, i).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        // Identical views: the mean is exact regardless of interleaving.
        for sid in ["s0", "s1"] {
            let snap = cache.snapshot(sid, SHOP_A).unwrap();
            assert_eq!(snap.view_count, 400);
            assert_eq!(snap.pooled_vector, Some(vec![0.5, 0.5]));
        }
    }

    #[test]
    fn rejects_degenerate_config() {
        assert!(SessionCache::new(CacheConfig { ttl_ms: 0, ..CacheConfig::default() }).is_err());
        assert!(
            SessionCache::new(CacheConfig { max_sessions: 0, ..CacheConfig::default() }).is_err()
        );
    }
}
