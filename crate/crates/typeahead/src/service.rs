//! HTTP suggestion service: synchronous trie retrieval plus cached
//! conditional scores refreshed by an asynchronous best-effort worker.
//!
//! The suggest path never runs model inference. In `similarity` mode it
//! reranks live against the session vector (a handful of dot products); in
//! the encoder-decoder modes it only looks up conditional scores that the
//! background worker wrote earlier. Each view event updates the session
//! cache synchronously and enqueues a rescoring task on a bounded queue;
//! when the queue is full or the worker is dead the task is simply dropped
//! and suggestions degrade to the unconditioned order. The worker reads the
//! session's current state, scores the global top-U candidates, and
//! publishes the whole score set with an atomic pointer swap under an
//! incremented per-session generation, so readers always observe a complete
//! set from exactly one generation.
//!
//! Endpoints are versioned under `/v1/` and speak line-delimited
//! tab-separated text. See the handler docs for the exact shapes.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Condvar, Mutex};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use dashmap::DashMap;

use crate::encdec::{EncDecModel, EncoderKind, LengthNorm};
use crate::error::{Error, Result};
use crate::ingest::EventPayload;
use crate::lm::TrieIndex;
use crate::rerank::{rerank, RerankRequest};
use crate::session::{SessionCache, SessionVector};
use crate::vectors::{Pooled, VectorTable};

/// Which reranking strategy the service applies on top of retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    Popularity,
    Similarity,
    EncDecAvg,
    EncDecFull,
}

impl ModelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelMode::Popularity => "popularity",
            ModelMode::Similarity => "similarity",
            ModelMode::EncDecAvg => "encdec_avg",
            ModelMode::EncDecFull => "encdec_full",
        }
    }

    pub fn parse(s: &str) -> Result<ModelMode> {
        match s {
            "popularity" => Ok(ModelMode::Popularity),
            "similarity" => Ok(ModelMode::Similarity),
            "encdec_avg" => Ok(ModelMode::EncDecAvg),
            "encdec_full" => Ok(ModelMode::EncDecFull),
            other => Err(Error::Argument(format!("unknown model mode {other:?}"))),
        }
    }

    fn is_encdec(self) -> bool {
        matches!(self, ModelMode::EncDecAvg | ModelMode::EncDecFull)
    }
}

/// Service tuning; `u_precompute` should be at least
/// `n_display * k_multiplier` so the worker covers everything the suggest
/// path may want to rerank.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub n_display: usize,
    pub k_multiplier: usize,
    pub u_precompute: usize,
    pub model_mode: ModelMode,
    pub bind: String,
    pub worker_queue_depth: usize,
    /// Skip a queued task when a newer one for the same session is queued.
    pub drop_stale: bool,
    /// Discard rescoring results for sessions that expired mid-computation.
    pub discard_expired: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            n_display: 5,
            k_multiplier: 5,
            u_precompute: 50,
            model_mode: ModelMode::Similarity,
            bind: "127.0.0.1:8080".to_string(),
            worker_queue_depth: 64,
            drop_stale: true,
            discard_expired: true,
        }
    }
}

/// Time source; injectable so expiry and latency are testable.
pub trait Clock: Send + Sync + 'static {
    fn now_ms(&self) -> u64;
}

/// Wall clock.
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .expect("system clock before epoch")
            .as_millis() as u64
    }
}

/// Hand-driven clock for tests.
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, delta_ms: u64) {
        self.0.fetch_add(delta_ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Everything the service needs for one shop.
pub struct ShopResources {
    pub trie: TrieIndex,
    pub products: VectorTable,
    pub encdec: Option<EncDecModel>,
}

/// One complete, immutable rescoring result for a session.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub generation: u64,
    pub updated_at: u64,
    /// Length-normalized conditional log-probabilities of the global top-U
    /// candidates under the session's vector at scoring time.
    pub scores: HashMap<String, f64>,
}

type SessionKey = (String, String);

#[derive(Debug)]
enum WorkerMsg {
    Task(RescoreTask),
    Stop,
}

#[derive(Debug)]
struct RescoreTask {
    shop_id: String,
    session_id: String,
    seq: u64,
}

/// Test gate: when installed, the worker waits for one permit per task and
/// reports completions, making asynchronous effects observable in two
/// deterministic phases.
#[derive(Default)]
pub struct WorkerGate {
    permits: Mutex<u64>,
    permit_cv: Condvar,
    finished: Mutex<u64>,
    finished_cv: Condvar,
}

impl WorkerGate {
    pub fn new() -> Arc<WorkerGate> {
        Arc::new(WorkerGate::default())
    }

    /// Allow the worker to consume `n` more tasks.
    pub fn release(&self, n: u64) {
        *self.permits.lock().unwrap() += n;
        self.permit_cv.notify_all();
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.permit_cv.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn mark_finished(&self) {
        *self.finished.lock().unwrap() += 1;
        self.finished_cv.notify_all();
    }

    /// Block until the worker has finished `n` tasks in total (processed,
    /// skipped or discarded).
    pub fn wait_finished(&self, n: u64) {
        let mut finished = self.finished.lock().unwrap();
        while *finished < n {
            finished = self.finished_cv.wait(finished).unwrap();
        }
    }
}

/// Worker and queue counters, all monotone.
#[derive(Default)]
pub struct ServiceStats {
    pub tasks_enqueued: AtomicU64,
    pub tasks_dropped: AtomicU64,
    pub tasks_completed: AtomicU64,
    pub tasks_stale: AtomicU64,
    pub tasks_discarded: AtomicU64,
}

/// Shared state behind the handlers and the worker.
pub struct AppState {
    pub config: ServiceConfig,
    shops: HashMap<String, ShopResources>,
    pub sessions: SessionCache,
    scores: DashMap<SessionKey, Arc<ScoreSet>>,
    /// Latest enqueued rescoring sequence per session; older queued tasks
    /// are stale and may be skipped.
    latest_seq: DashMap<SessionKey, u64>,
    seq_counter: AtomicU64,
    sender: Mutex<Option<SyncSender<WorkerMsg>>>,
    clock: Arc<dyn Clock>,
    pub stats: ServiceStats,
    gate: Option<Arc<WorkerGate>>,
    norm: LengthNorm,
}

impl AppState {
    /// Current score set for a session, if any.
    pub fn score_set(&self, session_id: &str, shop_id: &str) -> Option<Arc<ScoreSet>> {
        self.scores
            .get(&(shop_id.to_string(), session_id.to_string()))
            .map(|e| Arc::clone(e.value()))
    }

    fn enqueue_rescore(&self, session_id: &str, shop_id: &str) {
        if !self.config.model_mode.is_encdec() {
            return;
        }
        let key: SessionKey = (shop_id.to_string(), session_id.to_string());
        let seq = self.seq_counter.fetch_add(1, Ordering::SeqCst) + 1;
        let task = WorkerMsg::Task(RescoreTask {
            shop_id: shop_id.to_string(),
            session_id: session_id.to_string(),
            seq,
        });
        let sender = self.sender.lock().unwrap();
        let sent = match sender.as_ref() {
            Some(tx) => match tx.try_send(task) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => false,
            },
            None => false,
        };
        if sent {
            self.stats.tasks_enqueued.fetch_add(1, Ordering::SeqCst);
            // Recorded only on success: the worker must not skip an older
            // queued task in favor of one that was never admitted.
            self.latest_seq.insert(key, seq);
        } else {
            self.stats.tasks_dropped.fetch_add(1, Ordering::SeqCst);
        }
    }
}

/// A built service: state, router, and control over the worker thread.
pub struct Service {
    pub state: Arc<AppState>,
    worker: Option<std::thread::JoinHandle<()>>,
}

impl Service {
    /// Build state and router. The worker is not started yet; call
    /// [`Service::start_worker`] (encdec modes only need it).
    pub fn build(
        config: ServiceConfig,
        shops: HashMap<String, ShopResources>,
        sessions: SessionCache,
        clock: Arc<dyn Clock>,
    ) -> Result<Service> {
        if config.n_display == 0 || config.k_multiplier == 0 {
            return Err(Error::Argument("n_display and k_multiplier must be >= 1".into()));
        }
        if config.u_precompute < config.n_display * config.k_multiplier {
            return Err(Error::Argument(format!(
                "u_precompute {} below n_display * k_multiplier = {}",
                config.u_precompute,
                config.n_display * config.k_multiplier
            )));
        }
        if config.worker_queue_depth == 0 {
            return Err(Error::Argument("worker_queue_depth must be >= 1".into()));
        }
        if config.model_mode.is_encdec() {
            for (shop, res) in &shops {
                let Some(model) = &res.encdec else {
                    return Err(Error::Argument(format!(
                        "model mode {} needs a trained model for shop {shop}",
                        config.model_mode.as_str()
                    )));
                };
                let want = match config.model_mode {
                    ModelMode::EncDecAvg => EncoderKind::Avg,
                    ModelMode::EncDecFull => EncoderKind::Full,
                    _ => unreachable!(),
                };
                if model.variant != want {
                    return Err(Error::Argument(format!(
                        "shop {shop} has a {} model, mode wants {}",
                        model.variant.as_str(),
                        want.as_str()
                    )));
                }
            }
        }
        let state = Arc::new(AppState {
            config,
            shops,
            sessions,
            scores: DashMap::new(),
            latest_seq: DashMap::new(),
            seq_counter: AtomicU64::new(0),
            sender: Mutex::new(None),
            clock,
            stats: ServiceStats::default(),
            gate: None,
            norm: LengthNorm::default(),
        });
        Ok(Service { state, worker: None })
    }

    /// Install a test gate; must precede [`Service::start_worker`].
    pub fn with_gate(mut self, gate: Arc<WorkerGate>) -> Service {
        let state = Arc::get_mut(&mut self.state)
            .expect("with_gate must be called before the state is shared");
        state.gate = Some(gate);
        self
    }

    pub fn router(&self) -> Router {
        router(Arc::clone(&self.state))
    }

    /// Start the rescoring worker thread.
    pub fn start_worker(&mut self) {
        let (tx, rx) = sync_channel::<WorkerMsg>(self.state.config.worker_queue_depth);
        *self.state.sender.lock().unwrap() = Some(tx);
        let state = Arc::clone(&self.state);
        self.worker = Some(std::thread::spawn(move || worker_loop(state, rx)));
    }

    /// Stop the worker: it drains nothing further and drops the queue, so
    /// later enqueues fail and are dropped, which is the degraded mode.
    pub fn kill_worker(&mut self) {
        let sender = self.state.sender.lock().unwrap().take();
        if let Some(tx) = sender {
            // Stop jumps the queue no further than depth; the worker exits
            // on whichever message arrives after in-flight ones.
            let _ = tx.try_send(WorkerMsg::Stop);
        }
        if let Some(handle) = self.worker.take() {
            let _ = handle.join();
        }
    }

    /// Bind and serve until the process ends.
    pub async fn serve(&self) -> Result<()> {
        let listener = tokio::net::TcpListener::bind(&self.state.config.bind).await?;
        tracing::info!(bind = %self.state.config.bind, mode = %self.state.config.model_mode.as_str(), "serving");
        axum::serve(listener, self.router())
            .await
            .map_err(std::io::Error::other)?;
        Ok(())
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.kill_worker();
    }
}

fn worker_loop(state: Arc<AppState>, rx: Receiver<WorkerMsg>) {
    while let Ok(msg) = rx.recv() {
        let task = match msg {
            WorkerMsg::Task(task) => task,
            WorkerMsg::Stop => break,
        };
        if let Some(gate) = &state.gate {
            gate.acquire();
        }
        process_task(&state, &task);
        if let Some(gate) = &state.gate {
            gate.mark_finished();
        }
    }
    tracing::info!("rescoring worker stopped");
}

fn process_task(state: &Arc<AppState>, task: &RescoreTask) {
    let key: SessionKey = (task.shop_id.clone(), task.session_id.clone());
    if state.config.drop_stale {
        if let Some(latest) = state.latest_seq.get(&key) {
            if *latest.value() > task.seq {
                state.stats.tasks_stale.fetch_add(1, Ordering::SeqCst);
                return;
            }
        }
    }
    let now = state.clock.now_ms();
    let Some(shop) = state.shops.get(&task.shop_id) else {
        state.stats.tasks_discarded.fetch_add(1, Ordering::SeqCst);
        return;
    };
    let Some(model) = &shop.encdec else {
        state.stats.tasks_discarded.fetch_add(1, Ordering::SeqCst);
        return;
    };
    // Score from the session's current state, not the state at enqueue time:
    // a processed task always publishes the freshest picture.
    let Some(sv) = state.sessions.get_session_vector(&task.session_id, &task.shop_id, now) else {
        if state.config.discard_expired {
            state.scores.remove(&key);
        }
        state.stats.tasks_discarded.fetch_add(1, Ordering::SeqCst);
        return;
    };
    let session = session_repr(state, shop, &task.session_id, &task.shop_id, &sv);
    let Ok(enc_state) = model.encode(&session) else {
        state.stats.tasks_discarded.fetch_add(1, Ordering::SeqCst);
        return;
    };
    let candidates = shop.trie.retrieve("", state.config.u_precompute);
    let mut scores = HashMap::with_capacity(candidates.len());
    for (query, _) in candidates {
        if let Ok(score) = model.score_from_state(&enc_state, query, state.norm) {
            scores.insert(query.to_string(), score);
        }
    }
    let generation = state.scores.get(&key).map(|e| e.generation).unwrap_or(0) + 1;
    let set = Arc::new(ScoreSet { generation, updated_at: now, scores });
    state.scores.insert(key, set);
    state.stats.tasks_completed.fetch_add(1, Ordering::SeqCst);
}

/// Session representation for the shop's model variant. The Full variant
/// rebuilds the view sequence from the retained SKU window; a
/// transferred-only session contributes its single vector.
fn session_repr(
    state: &AppState,
    shop: &ShopResources,
    session_id: &str,
    shop_id: &str,
    sv: &SessionVector,
) -> Pooled {
    let model = shop.encdec.as_ref().expect("caller checked");
    match model.variant {
        EncoderKind::Avg => Pooled::Vector(sv.vector().to_vec()),
        EncoderKind::Full => {
            if let SessionVector::Pooled(_) = sv {
                if let Some(snap) = state.sessions.snapshot(session_id, shop_id) {
                    let seq: Vec<Vec<f64>> = snap
                        .viewed_skus
                        .iter()
                        .filter_map(|sku| shop.products.get(sku).map(|v| v.to_vec()))
                        .collect();
                    if !seq.is_empty() {
                        return Pooled::Sequence(seq);
                    }
                }
            }
            Pooled::Sequence(vec![sv.vector().to_vec()])
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/suggest", get(handle_suggest))
        .route("/v1/event", post(handle_event))
        .route("/v1/transfer", post(handle_transfer))
        .route("/v1/health", get(handle_health))
        .with_state(state)
}

const PROV_UNCONDITIONED: &str = "unconditioned";
const PROV_SIMILARITY: &str = "similarity";
const PROV_CONDITIONAL: &str = "conditional-cached";

fn bad_request(msg: impl Into<String>) -> (StatusCode, String) {
    (StatusCode::BAD_REQUEST, format!("error\t{}\n", msg.into()))
}

/// GET /v1/suggest?session=S&shop=H&prefix=P&n=N
///
/// Response: a comment header naming the provenance and generation, then
/// one `query\tscore` line per suggestion, scores non-increasing.
async fn handle_suggest(
    State(state): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
) -> (StatusCode, String) {
    let Some(session_id) = params.get("session") else {
        return bad_request("missing session parameter");
    };
    let Some(shop_id) = params.get("shop") else {
        return bad_request("missing shop parameter");
    };
    let prefix = params.get("prefix").map(|s| s.as_str()).unwrap_or("");
    let n = match params.get("n") {
        None => state.config.n_display,
        Some(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => return bad_request("n must be a positive integer"),
        },
    };
    let Some(shop) = state.shops.get(shop_id) else {
        return (
            StatusCode::SERVICE_UNAVAILABLE,
            format!("error\tno index loaded for shop {shop_id:?}\n"),
        );
    };
    let now = state.clock.now_ms();
    let retrieved = shop.trie.retrieve(prefix, n * state.config.k_multiplier);

    let (rows, provenance, generation): (Vec<(String, f64)>, &str, Option<u64>) =
        match state.config.model_mode {
            ModelMode::Popularity => (
                retrieved.iter().take(n).map(|(q, s)| (q.to_string(), *s)).collect(),
                PROV_UNCONDITIONED,
                None,
            ),
            ModelMode::Similarity => {
                match state.sessions.get_session_vector(session_id, shop_id, now) {
                    None => (
                        retrieved.iter().take(n).map(|(q, s)| (q.to_string(), *s)).collect(),
                        PROV_UNCONDITIONED,
                        None,
                    ),
                    Some(sv) => {
                        let request = RerankRequest::new(&retrieved, sv.vector(), n);
                        let reranked = rerank(&request, |q| {
                            shop.trie.candidate(q).and_then(|c| c.query_vector.as_deref())
                        });
                        // Candidates without a vector sit below every real
                        // cosine; -1 is the cosine floor, keeping the score
                        // column non-increasing.
                        let rows = reranked
                            .into_iter()
                            .map(|r| (r.query.to_string(), r.similarity.unwrap_or(-1.0)))
                            .collect();
                        (rows, PROV_SIMILARITY, None)
                    }
                }
            }
            ModelMode::EncDecAvg | ModelMode::EncDecFull => {
                let alive = state.sessions.get_session_vector(session_id, shop_id, now);
                let key: SessionKey = (shop_id.clone(), session_id.clone());
                let set = if alive.is_some() {
                    state.scores.get(&key).map(|e| Arc::clone(e.value()))
                } else {
                    // Scores must not outlive their session.
                    state.scores.remove(&key);
                    None
                };
                match set {
                    None => (
                        retrieved.iter().take(n).map(|(q, s)| (q.to_string(), *s)).collect(),
                        PROV_UNCONDITIONED,
                        None,
                    ),
                    Some(set) => {
                        let mut scored: Vec<(String, f64)> = Vec::new();
                        let mut unscored: Vec<(String, f64)> = Vec::new();
                        for (q, _) in &retrieved {
                            match set.scores.get(*q) {
                                Some(s) => scored.push((q.to_string(), *s)),
                                None => unscored.push((q.to_string(), f64::NEG_INFINITY)),
                            }
                        }
                        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
                        scored.extend(unscored);
                        scored.truncate(n);
                        (scored, PROV_CONDITIONAL, Some(set.generation))
                    }
                }
            }
        };

    let mut body = String::from("# typeahead-suggest v1\n");
    body.push_str(&format!(
        "# provenance={} generation={} n={}\n",
        provenance,
        generation.map(|g| g.to_string()).unwrap_or_else(|| "-".to_string()),
        n
    ));
    for (query, score) in rows {
        body.push_str(&format!("{query}\t{score}\t{provenance}\n"));
    }
    (StatusCode::OK, body)
}

/// One `timestamp\tsession\tshop\ttype\tpayload` event line.
fn parse_event_line(line: &str) -> Result<(i64, String, String, EventPayload)> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(Error::Argument(format!(
            "expected 5 tab-separated fields, got {}",
            fields.len()
        )));
    }
    let timestamp: i64 = fields[0]
        .parse()
        .map_err(|e| Error::Argument(format!("bad timestamp: {e}")))?;
    let session = fields[1].trim();
    let shop = fields[2].trim();
    if session.is_empty() || shop.is_empty() {
        return Err(Error::Argument("session and shop must be non-empty".into()));
    }
    let payload = match fields[3] {
        "view" => EventPayload::View { sku: fields[4].trim().to_string() },
        "suggest" => EventPayload::Suggest { prefix: fields[4].to_string() },
        "search" => EventPayload::Search { query: crate::text::normalize_query(fields[4]) },
        "click" => match fields[4].split_once('|') {
            Some((prefix, suggestion)) => EventPayload::Click {
                prefix: prefix.to_string(),
                suggestion: suggestion.to_string(),
            },
            None => return Err(Error::Argument("click payload must be prefix|completion".into())),
        },
        other => return Err(Error::Argument(format!("unknown event type {other:?}"))),
    };
    if let EventPayload::View { sku } = &payload {
        if sku.is_empty() {
            return Err(Error::Argument("view payload must name a sku".into()));
        }
    }
    let _ = timestamp;
    Ok((timestamp, session.to_string(), shop.to_string(), payload))
}

/// POST /v1/event
///
/// Body: one or more event lines (`timestamp\tsession\tshop\ttype\tpayload`).
/// View events update the session cache synchronously and enqueue a
/// rescoring task; other kinds are acknowledged without touching state.
/// Lines are applied in order; on a bad line the response is 400 and names
/// the line, earlier lines stay applied. The cache's clock is the server's,
/// so client timestamps cannot extend or shrink session lifetimes.
async fn handle_event(
    State(state): State<Arc<AppState>>,
    body: String,
) -> (StatusCode, String) {
    let mut applied = 0usize;
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (_, session_id, shop_id, payload) = match parse_event_line(line) {
            Ok(parsed) => parsed,
            Err(e) => return bad_request(format!("line {}: {e}", i + 1)),
        };
        if let EventPayload::View { sku } = &payload {
            let Some(shop) = state.shops.get(&shop_id) else {
                return bad_request(format!("line {}: unknown shop {shop_id:?}", i + 1));
            };
            let now = state.clock.now_ms();
            if let Err(e) =
                state.sessions.record_view(&session_id, &shop_id, sku, &shop.products, now)
            {
                return bad_request(format!("line {}: {e}", i + 1));
            }
            state.enqueue_rescore(&session_id, &shop_id);
        }
        applied += 1;
    }
    (StatusCode::OK, format!("ok\t{applied}\n"))
}

/// POST /v1/transfer
///
/// Body: one `session\tfrom_shop\tto_shop` line. Repeating a transfer is
/// idempotent; the latest source vector wins.
async fn handle_transfer(
    State(state): State<Arc<AppState>>,
    body: String,
) -> (StatusCode, String) {
    let line = body.trim();
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return bad_request("expected session\\tfrom_shop\\tto_shop");
    }
    let (session_id, from_shop, to_shop) = (fields[0], fields[1], fields[2]);
    let now = state.clock.now_ms();
    match state.sessions.transfer_session(session_id, from_shop, to_shop, now) {
        Ok(_) => {
            state.enqueue_rescore(session_id, to_shop);
            (StatusCode::OK, "ok\t1\n".to_string())
        }
        Err(e) => bad_request(e.to_string()),
    }
}

/// GET /v1/health: one `key\tvalue` line per stat.
async fn handle_health(State(state): State<Arc<AppState>>) -> (StatusCode, String) {
    let s = &state.stats;
    let enqueued = s.tasks_enqueued.load(Ordering::SeqCst);
    let completed = s.tasks_completed.load(Ordering::SeqCst);
    let stale = s.tasks_stale.load(Ordering::SeqCst);
    let discarded = s.tasks_discarded.load(Ordering::SeqCst);
    let lag = enqueued.saturating_sub(completed + stale + discarded);
    let worker_alive = state.sender.lock().unwrap().is_some();
    let body = format!(
        "status\tok\nmode\t{}\nindex_generation\t1\nshops\t{}\nsessions\t{}\nscore_entries\t{}\nworker_alive\t{}\nworker_lag\t{}\ntasks_enqueued\t{}\ntasks_dropped\t{}\ntasks_completed\t{}\ntasks_stale\t{}\ntasks_discarded\t{}\n",
        state.config.model_mode.as_str(),
        state.shops.len(),
        state.sessions.len(),
        state.scores.len(),
        worker_alive,
        lag,
        enqueued,
        s.tasks_dropped.load(Ordering::SeqCst),
        completed,
        stale,
        discarded,
    );
    (StatusCode::OK, body)
}
