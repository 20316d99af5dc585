//! Command-line pipeline.
//!
//! One binary orchestrates the full lifecycle over a workspace directory:
//! `generate` (or `ingest`) produces raw data, `fit-vectors` fits a shared
//! PCA and reduces every catalog, `build-index` turns search logs into
//! prefix tries, `train` fits the conditional model, `evaluate` and
//! `cross-eval` write benchmark reports, and `serve` runs the HTTP service.
//!
//! Every stage prints its resolved configuration as `config\tkey\tvalue`
//! lines and records a `(stage, version, config hash)` row in the
//! workspace manifest. Stages are resumable: each reads only files written
//! by earlier stages, and re-running a stage with the same inputs and seed
//! reproduces its outputs byte for byte.
//!
//! Exit codes: 0 success, 1 runtime failure (one `error\tclass\tmessage`
//! line on stderr), 2 usage error.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::encdec::{
    load_model, save_model, EncDecModel, EncoderKind, InitConfig, Vocabulary,
};
use crate::encdec::train::{train, TrainConfig, TrainPair};
use crate::error::{Error, Result};
use crate::eval::pipelines::{
    EncDecPipeline, MarkovPipeline, PopularityPipeline, SimilarityPipeline, Suggester,
};
use crate::eval::{
    cross_shop_benchmark, extract_cases, run_benchmark, temporal_split, write_report_text,
    write_report_tsv, BenchmarkConfig, CrossShopResources, EvalCase, EvalReport, PairedCase,
};
use crate::hash::fnv1a;
use crate::ingest::synth::{generate, load_pairs, write_intents, write_pairs, SyntheticConfig};
use crate::ingest::{
    load_catalog, load_events, load_search_log, write_catalog, write_events, write_search_log,
    CatalogRecord, SessionGroup,
};
use crate::lm::{
    attach_query_vectors, build_trie, estimate_priors, load_index, markov, save_index,
    ErrorModel,
};
use crate::service::{ModelMode, Service, ServiceConfig, ShopResources, SystemClock};
use crate::session::{CacheConfig, SessionCache};
use crate::vectors::{
    build_query_vectors, fit_pca, reduce_catalog, save_pca, Pooled, VectorTable,
    PRODUCT_VECTOR_KIND, QUERY_VECTOR_KIND,
};

#[derive(Parser)]
#[command(name = "typeahead", version, about = "Personalized query completion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic two-shop dataset.
    Generate(GenerateArgs),
    /// Validate external data files and copy them into the workspace.
    Ingest(IngestArgs),
    /// Fit one PCA over all catalogs and write reduced vectors per shop.
    FitVectors(FitVectorsArgs),
    /// Build the prefix-trie index per shop from its search log.
    BuildIndex(BuildIndexArgs),
    /// Train the conditional encoder-decoder model per shop.
    Train(TrainArgs),
    /// Benchmark suggestion models on held-out searches.
    Evaluate(EvaluateArgs),
    /// Benchmark zero-shot cross-shop transfer on paired sessions.
    CrossEval(CrossEvalArgs),
    /// Run the HTTP suggestion service in the foreground.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Workspace directory; created if absent.
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    categories: usize,
    #[arg(long, default_value_t = 20)]
    products_per_category: usize,
    #[arg(long, default_value_t = 64)]
    vector_dim: usize,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 2400)]
    sessions: usize,
    #[arg(long, default_value_t = 8)]
    queries_per_category: usize,
    #[arg(long, default_value_t = 0.12)]
    cross_shop_fraction: f64,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    workspace: PathBuf,
    /// Shop the files belong to.
    #[arg(long)]
    shop: String,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    search_log: PathBuf,
    /// Train/test boundary timestamp (milliseconds).
    #[arg(long)]
    boundary: i64,
}

#[derive(Args)]
struct FitVectorsArgs {
    #[arg(long)]
    workspace: PathBuf,
    /// Reduced dimensionality; clamped to the raw dimension.
    #[arg(long, default_value_t = crate::vectors::DEFAULT_K)]
    k: usize,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long, default_value_t = crate::lm::DEFAULT_MAX_FANOUT)]
    max_fanout: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    workspace: PathBuf,
    /// Session encoder variant: avg or full.
    #[arg(long, default_value = "avg")]
    variant: String,
    /// Train only this shop (default: every shop in the workspace).
    #[arg(long)]
    shop: Option<String>,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    lr_decay: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Keep only this fraction of the newest training sessions.
    #[arg(long, default_value_t = 1.0)]
    latest_fraction: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    workspace: PathBuf,
    /// Comma-separated: popularity,similarity,markov,encdec-avg,encdec-full.
    #[arg(long, default_value = "popularity,similarity")]
    models: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Comma-separated seed lengths.
    #[arg(long, default_value = "0,1")]
    seed_lens: String,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 7500)]
    sample_per_run: usize,
    #[arg(long, default_value_t = 42)]
    eval_seed: u64,
}

#[derive(Args)]
struct CrossEvalArgs {
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed_len: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    workspace: PathBuf,
    /// popularity, similarity, encdec_avg or encdec_full.
    #[arg(long, default_value = "similarity")]
    mode: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    #[arg(long, default_value_t = 5)]
    n_display: usize,
    #[arg(long, default_value_t = 5)]
    k_multiplier: usize,
    #[arg(long, default_value_t = 50)]
    u_precompute: usize,
    #[arg(long, default_value_t = 30)]
    ttl_minutes: u64,
    #[arg(long, default_value_t = 100_000)]
    max_sessions: usize,
}

pub fn run() -> ExitCode {
    ExitCode::from(run_from(std::env::args_os()))
}

/// Entry point with injectable argv, so tests can drive whole invocations.
/// Returns the process exit code: 0 success, 1 runtime failure, 2 usage.
pub fn run_from<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits; everything
            // else is a usage error.
            let code = e.exit_code();
            let _ = e.print();
            return u8::try_from(code).unwrap_or(2);
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::FitVectors(args) => cmd_fit_vectors(args),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::CrossEval(args) => cmd_cross_eval(args),
        Command::Serve(args) => cmd_serve(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error\t{}\t{e}", error_class(&e));
            1
        }
    }
}

/// Stable machine-greppable slug per error variant.
fn error_class(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } => "parse",
        Error::Schema { .. } => "schema",
        Error::DuplicateSku(_) => "duplicate-sku",
        Error::UnknownSku(_) => "unknown-sku",
        Error::Dimension { .. } => "dimension",
        Error::Argument(_) => "argument",
        Error::Degenerate(_) => "degenerate",
        Error::OutOfVocabulary(_) => "out-of-vocabulary",
        Error::EmptySession(_) => "empty-session",
        Error::UnknownSession(_) => "unknown-session",
        Error::Io(_) => "io",
    }
}

/// Paths inside one workspace directory.
struct Workspace {
    root: PathBuf,
}

impl Workspace {
    fn new(root: &Path) -> Workspace {
        Workspace { root: root.to_path_buf() }
    }

    fn shop_dir(&self, shop: &str) -> PathBuf {
        self.root.join(shop)
    }

    fn catalog(&self, shop: &str) -> PathBuf {
        self.shop_dir(shop).join("catalog.tsv")
    }

    fn events(&self, shop: &str) -> PathBuf {
        self.shop_dir(shop).join("events.tsv")
    }

    fn search_log(&self, shop: &str) -> PathBuf {
        self.shop_dir(shop).join("search_log.tsv")
    }

    fn product_vectors(&self, shop: &str) -> PathBuf {
        self.shop_dir(shop).join("product-vectors.tsv")
    }

    fn query_vectors(&self, shop: &str) -> PathBuf {
        self.shop_dir(shop).join("query-vectors.tsv")
    }

    fn index(&self, shop: &str) -> PathBuf {
        self.shop_dir(shop).join("index.tsv")
    }

    fn model(&self, shop: &str, variant: EncoderKind) -> PathBuf {
        self.shop_dir(shop).join(format!("encdec-{}.model", variant.as_str()))
    }

    fn pca(&self) -> PathBuf {
        self.root.join("pca.tsv")
    }

    fn boundary(&self) -> PathBuf {
        self.root.join("boundary.tsv")
    }

    fn intents(&self) -> PathBuf {
        self.root.join("intents.tsv")
    }

    fn pairs(&self) -> PathBuf {
        self.root.join("pairs.tsv")
    }

    fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn manifest(&self) -> PathBuf {
        self.root.join("manifest.tsv")
    }

    /// Shops present, in sorted order: subdirectories holding a catalog.
    fn shops(&self) -> Result<Vec<String>> {
        let mut shops = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().is_dir() && entry.path().join("catalog.tsv").is_file() {
                shops.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        if shops.is_empty() {
            return Err(Error::Argument(format!(
                "workspace {} has no shop directories with a catalog.tsv",
                self.root.display()
            )));
        }
        shops.sort();
        Ok(shops)
    }

    fn write_boundary(&self, boundary: i64) -> Result<()> {
        std::fs::write(self.boundary(), format!("# typeahead-boundary v1\n{boundary}\n"))?;
        Ok(())
    }

    fn read_boundary(&self) -> Result<i64> {
        let path = self.boundary();
        let text = std::fs::read_to_string(&path)?;
        let line = text
            .lines()
            .find(|l| !l.starts_with('#') && !l.trim().is_empty())
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: "no boundary value".into(),
            })?;
        line.trim().parse().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 2,
            msg: format!("bad boundary: {e}"),
        })
    }

    /// Record `(stage, version, config hash)` in the manifest, replacing any
    /// previous row for the stage. Rows are kept sorted by stage name.
    fn record_stage(&self, stage: &str, version: u32, config_hash: u64) -> Result<()> {
        let path = self.manifest();
        let mut rows: BTreeMap<String, String> = BTreeMap::new();
        if path.is_file() {
            for line in std::fs::read_to_string(&path)?.lines() {
                if line.starts_with('#') || line.trim().is_empty() {
                    continue;
                }
                if let Some((stage, rest)) = line.split_once('\t') {
                    rows.insert(stage.to_string(), rest.to_string());
                }
            }
        }
        rows.insert(stage.to_string(), format!("{version}\t{config_hash:016x}"));
        let mut out = String::from("# typeahead-manifest v1\n");
        for (stage, rest) in &rows {
            out.push_str(&format!("{stage}\t{rest}\n"));
        }
        std::fs::write(&path, out)?;
        Ok(())
    }
}

/// Print the resolved config and return its hash for the manifest.
fn print_config(stage: &str, entries: &[(&str, String)]) -> u64 {
    let mut joined = String::new();
    for (key, value) in entries {
        println!("config\t{key}\t{value}");
        joined.push_str(key);
        joined.push('=');
        joined.push_str(value);
        joined.push('\n');
    }
    let hash = fnv1a(joined.as_bytes());
    println!("stage\t{stage}\tconfig-hash\t{hash:016x}");
    hash
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let config = SyntheticConfig {
        rng_seed: args.seed,
        n_categories: args.categories,
        products_per_category: args.products_per_category,
        vector_dim: args.vector_dim,
        intra_category_noise: args.noise,
        n_sessions: args.sessions,
        queries_per_category: args.queries_per_category,
        cross_shop_fraction: args.cross_shop_fraction,
        train_fraction: args.train_fraction,
        ..SyntheticConfig::default()
    };
    let hash = print_config(
        "generate",
        &[
            ("seed", config.rng_seed.to_string()),
            ("categories", config.n_categories.to_string()),
            ("products_per_category", config.products_per_category.to_string()),
            ("vector_dim", config.vector_dim.to_string()),
            ("noise", config.intra_category_noise.to_string()),
            ("sessions", config.n_sessions.to_string()),
            ("queries_per_category", config.queries_per_category.to_string()),
            ("cross_shop_fraction", config.cross_shop_fraction.to_string()),
            ("train_fraction", config.train_fraction.to_string()),
        ],
    );
    let ws = Workspace::new(&args.workspace);
    let data = generate(&config)?;
    for (shop, catalog, events, log) in [
        (crate::ingest::synth::SHOP_A, &data.catalog_a, &data.events_a, &data.search_log_a),
        (crate::ingest::synth::SHOP_B, &data.catalog_b, &data.events_b, &data.search_log_b),
    ] {
        std::fs::create_dir_all(ws.shop_dir(shop))?;
        write_catalog(&ws.catalog(shop), catalog)?;
        write_events(&ws.events(shop), events)?;
        write_search_log(&ws.search_log(shop), log)?;
        println!(
            "generate\t{shop}\tproducts={} sessions={} log_queries={}",
            catalog.len(),
            events.len(),
            log.len()
        );
    }
    write_intents(&ws.intents(), &data.intents)?;
    write_pairs(&ws.pairs(), &data.pairs)?;
    ws.write_boundary(data.boundary)?;
    ws.record_stage("generate", 1, hash)?;
    println!("generate\tboundary\t{}", data.boundary);
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let hash = print_config(
        "ingest",
        &[
            ("shop", args.shop.clone()),
            ("catalog", args.catalog.display().to_string()),
            ("events", args.events.display().to_string()),
            ("search_log", args.search_log.display().to_string()),
            ("boundary", args.boundary.to_string()),
        ],
    );
    let ws = Workspace::new(&args.workspace);
    let catalog = load_catalog(&args.catalog, &args.shop)?;
    let events = load_events(&args.events)?;
    let log = load_search_log(&args.search_log, &args.shop)?;
    std::fs::create_dir_all(ws.shop_dir(&args.shop))?;
    write_catalog(&ws.catalog(&args.shop), &catalog)?;
    write_events(&ws.events(&args.shop), &events)?;
    write_search_log(&ws.search_log(&args.shop), &log)?;
    ws.write_boundary(args.boundary)?;
    ws.record_stage("ingest", 1, hash)?;
    println!(
        "ingest\t{}\tproducts={} sessions={} log_queries={}",
        args.shop,
        catalog.len(),
        events.len(),
        log.len()
    );
    Ok(())
}

fn cmd_fit_vectors(args: FitVectorsArgs) -> Result<()> {
    let ws = Workspace::new(&args.workspace);
    let shops = ws.shops()?;
    let mut catalogs: Vec<(String, Vec<CatalogRecord>)> = Vec::new();
    for shop in &shops {
        catalogs.push((shop.clone(), load_catalog(&ws.catalog(shop), shop)?));
    }
    // One PCA across every catalog so all shops share a vector space; this
    // is what makes cross-shop vectors comparable at all.
    let raw: Vec<Vec<f64>> = catalogs
        .iter()
        .flat_map(|(_, c)| c.iter().map(|r| r.raw_vector.clone()))
        .collect();
    let dim = raw.first().map(|v| v.len()).unwrap_or(0);
    let k = args.k.min(dim);
    let hash = print_config(
        "fit-vectors",
        &[
            ("k", k.to_string()),
            ("raw_dim", dim.to_string()),
            ("shops", shops.join(",")),
        ],
    );
    let pca = fit_pca(&raw, k)?;
    save_pca(&ws.pca(), &pca)?;
    for (shop, catalog) in &catalogs {
        let products = reduce_catalog(&pca, catalog)?;
        products.save(&ws.product_vectors(shop), PRODUCT_VECTOR_KIND)?;
        let log = load_search_log(&ws.search_log(shop), shop)?;
        let queries = build_query_vectors(&log, &products)?;
        queries.save(&ws.query_vectors(shop), QUERY_VECTOR_KIND)?;
        println!(
            "fit-vectors\t{shop}\tproducts={} queries={} k={k}",
            products.len(),
            queries.len()
        );
    }
    ws.record_stage("fit-vectors", 1, hash)?;
    Ok(())
}

fn cmd_build_index(args: BuildIndexArgs) -> Result<()> {
    let ws = Workspace::new(&args.workspace);
    let shops = ws.shops()?;
    let hash = print_config(
        "build-index",
        &[("max_fanout", args.max_fanout.to_string()), ("shops", shops.join(","))],
    );
    for shop in &shops {
        let log = load_search_log(&ws.search_log(shop), shop)?;
        let queries = VectorTable::load(&ws.query_vectors(shop), QUERY_VECTOR_KIND)?;
        let mut candidates = estimate_priors(&log)?;
        attach_query_vectors(&mut candidates, &queries);
        let n = candidates.len();
        let trie = build_trie(candidates, ErrorModel::qwerty(), args.max_fanout)?;
        save_index(&ws.index(shop), &trie)?;
        println!("build-index\t{shop}\tcandidates={n}");
    }
    ws.record_stage("build-index", 1, hash)?;
    Ok(())
}

/// Training pairs from the train-period sessions of one shop: context views
/// strictly before the session's first search, paired with that search.
fn training_pairs(
    train_sessions: &[SessionGroup],
    shop: &str,
    products: &VectorTable,
    variant: EncoderKind,
) -> Vec<TrainPair> {
    let cases = extract_cases(train_sessions, shop);
    let mut pairs = Vec::new();
    for case in cases {
        let vectors: Vec<Vec<f64>> = case
            .context_skus
            .iter()
            .filter_map(|sku| products.get(sku).map(|v| v.to_vec()))
            .collect();
        if vectors.is_empty() {
            continue;
        }
        let session = match variant {
            EncoderKind::Avg => {
                let k = vectors[0].len();
                let mut mean = vec![0.0; k];
                for v in &vectors {
                    for (m, x) in mean.iter_mut().zip(v) {
                        *m += x;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= vectors.len() as f64);
                Pooled::Vector(mean)
            }
            EncoderKind::Full => Pooled::Sequence(vectors),
        };
        pairs.push(TrainPair { session_id: case.session_id, session, query: case.target });
    }
    pairs
}

fn parse_variant(s: &str) -> Result<EncoderKind> {
    match s {
        "avg" => Ok(EncoderKind::Avg),
        "full" => Ok(EncoderKind::Full),
        other => Err(Error::Argument(format!("unknown variant {other:?}, want avg or full"))),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let ws = Workspace::new(&args.workspace);
    let variant = parse_variant(&args.variant)?;
    let shops = match &args.shop {
        Some(shop) => vec![shop.clone()],
        None => ws.shops()?,
    };
    let config = TrainConfig {
        learning_rate: args.lr,
        lr_decay: args.lr_decay,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        patience: args.patience,
        validation_fraction: args.val_fraction,
        rng_seed: args.seed,
    };
    let hash = print_config(
        "train",
        &[
            ("variant", variant.as_str().to_string()),
            ("shops", shops.join(",")),
            ("hidden", args.hidden.to_string()),
            ("epochs", config.max_epochs.to_string()),
            ("lr", config.learning_rate.to_string()),
            ("lr_decay", config.lr_decay.to_string()),
            ("batch_size", config.batch_size.to_string()),
            ("patience", config.patience.to_string()),
            ("val_fraction", config.validation_fraction.to_string()),
            ("seed", config.rng_seed.to_string()),
            ("latest_fraction", args.latest_fraction.to_string()),
        ],
    );
    let boundary = ws.read_boundary()?;
    for shop in &shops {
        let events = load_events(&ws.events(shop))?;
        let (train_sessions, _) = temporal_split(&events, boundary)?;
        let train_sessions = crate::eval::latest_fraction(&train_sessions, args.latest_fraction)?;
        let products = VectorTable::load(&ws.product_vectors(shop), PRODUCT_VECTOR_KIND)?;
        let pairs = training_pairs(&train_sessions, shop, &products, variant);
        if pairs.is_empty() {
            return Err(Error::Degenerate(format!("shop {shop}: no usable training pairs")));
        }
        // The vocabulary covers both the index candidates and the training
        // targets so every retrieved candidate stays scoreable.
        let log = load_search_log(&ws.search_log(shop), shop)?;
        let vocab_queries: Vec<&str> = log
            .iter()
            .map(|e| e.query.as_str())
            .chain(pairs.iter().map(|p| p.query.as_str()))
            .collect();
        let vocab = Vocabulary::build(vocab_queries)?;
        let model = EncDecModel::new(
            vocab,
            variant,
            products.k(),
            args.hidden,
            InitConfig::default(),
            config.rng_seed,
        )?;
        let (trained, report) = train(model, &pairs, &config)?;
        save_model(&ws.model(shop, variant), &trained)?;
        println!(
            "train\t{shop}\tpairs={} best_epoch={} epochs_run={} best_loss={:.6}",
            pairs.len(),
            report.best_epoch,
            report.epochs_run,
            report.best_loss
        );
    }
    ws.record_stage(&format!("train-{}", variant.as_str()), 1, hash)?;
    Ok(())
}

/// Test-period evaluation cases for one shop.
fn test_cases(ws: &Workspace, shop: &str, boundary: i64) -> Result<Vec<EvalCase>> {
    let events = load_events(&ws.events(shop))?;
    let (_, test_sessions) = temporal_split(&events, boundary)?;
    Ok(extract_cases(&test_sessions, shop))
}

fn sku_categories(catalog: &[CatalogRecord]) -> HashMap<String, String> {
    catalog.iter().map(|r| (r.sku.clone(), r.category.clone())).collect()
}

/// Markov bigram training data: one observation per (query, clicked sku)
/// with the sku's category as the bucket, weighted by clicks.
fn train_markov(
    log: &[crate::ingest::SearchLogEntry],
    categories: &HashMap<String, String>,
) -> Result<markov::MarkovModel> {
    let mut examples: Vec<(&str, &str, u64)> = Vec::new();
    for entry in log {
        for (sku, clicks) in &entry.clicked_skus {
            if let Some(cat) = categories.get(sku) {
                examples.push((cat.as_str(), entry.query.as_str(), *clicks));
            }
        }
    }
    markov::train(examples, 1.0)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let ws = Workspace::new(&args.workspace);
    let shops = ws.shops()?;
    let model_names: Vec<String> =
        args.models.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if model_names.is_empty() {
        return Err(Error::Argument("no models requested".into()));
    }
    let seed_lengths: Vec<usize> = args
        .seed_lens
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::Argument(format!("bad seed length {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let hash = print_config(
        "evaluate",
        &[
            ("models", model_names.join(",")),
            ("k", args.k.to_string()),
            ("seed_lens", args.seed_lens.clone()),
            ("runs", args.runs.to_string()),
            ("sample_per_run", args.sample_per_run.to_string()),
            ("eval_seed", args.eval_seed.to_string()),
            ("shops", shops.join(",")),
        ],
    );
    let boundary = ws.read_boundary()?;
    std::fs::create_dir_all(ws.reports_dir())?;
    for shop in &shops {
        let trie = load_index(&ws.index(shop))?;
        let products = VectorTable::load(&ws.product_vectors(shop), PRODUCT_VECTOR_KIND)?;
        let catalog = load_catalog(&ws.catalog(shop), shop)?;
        let log = load_search_log(&ws.search_log(shop), shop)?;
        let cases = test_cases(&ws, shop, boundary)?;

        // Owners first so trait objects can borrow them.
        let mut markov_model = None;
        let mut avg_model = None;
        let mut full_model = None;
        for name in &model_names {
            match name.as_str() {
                "markov" => {
                    let cats = sku_categories(&catalog);
                    markov_model = Some((train_markov(&log, &cats)?, cats));
                }
                "encdec-avg" => avg_model = Some(load_model(&ws.model(shop, EncoderKind::Avg))?),
                "encdec-full" => {
                    full_model = Some(load_model(&ws.model(shop, EncoderKind::Full))?)
                }
                "popularity" | "similarity" => {}
                other => {
                    return Err(Error::Argument(format!("unknown model {other:?}")));
                }
            }
        }
        let mut suggesters: Vec<Box<dyn Suggester>> = Vec::new();
        for name in &model_names {
            match name.as_str() {
                "popularity" => suggesters.push(Box::new(PopularityPipeline::new(&trie))),
                "similarity" => {
                    suggesters.push(Box::new(SimilarityPipeline::new(&trie, &products)))
                }
                "markov" => {
                    let (model, cats) = markov_model.as_ref().unwrap();
                    suggesters.push(Box::new(MarkovPipeline::new(&trie, model, cats)));
                }
                "encdec-avg" => suggesters.push(Box::new(EncDecPipeline::new(
                    &trie,
                    avg_model.as_ref().unwrap(),
                    &products,
                ))),
                "encdec-full" => suggesters.push(Box::new(EncDecPipeline::new(
                    &trie,
                    full_model.as_ref().unwrap(),
                    &products,
                ))),
                _ => unreachable!(),
            }
        }
        let refs: Vec<&dyn Suggester> = suggesters.iter().map(|b| b.as_ref()).collect();
        let config = BenchmarkConfig {
            k: args.k,
            seed_lengths: seed_lengths.clone(),
            runs: args.runs,
            sample_per_run: args.sample_per_run,
            rng_seed: args.eval_seed,
        };
        let report = run_benchmark(&refs, &cases, &config)?;
        print_report(shop, &report);
        write_report_text(&ws.reports_dir().join(format!("eval-{shop}.txt")), &report)?;
        write_report_tsv(&ws.reports_dir().join(format!("eval-{shop}.tsv")), &report)?;
    }
    ws.record_stage("evaluate", 1, hash)?;
    Ok(())
}

fn print_report(label: &str, report: &EvalReport) {
    for row in &report.rows {
        println!(
            "report\t{label}\t{}\tseed={}\tdirection={}\tmean={:.6}\tsd={:.6}\tcases={:.1}",
            row.model, row.seed_len, row.direction, row.mean, row.sd, row.cases_per_run
        );
    }
}

/// Paired evaluation cases for one transfer direction. The target-side
/// session must be a test-period session with a search; the source side
/// contributes its full view history on the other shop.
fn paired_cases(
    pairs: &[(String, String, String)],
    source_shop: &str,
    source_events: &[SessionGroup],
    target_shop: &str,
    target_test: &[SessionGroup],
) -> Vec<PairedCase> {
    let source_by_id: HashMap<&str, &SessionGroup> =
        source_events.iter().map(|g| (g.session_id.as_str(), g)).collect();
    let target_by_id: HashMap<&str, &SessionGroup> =
        target_test.iter().map(|g| (g.session_id.as_str(), g)).collect();
    let mut out = Vec::new();
    for (_user, source_session, target_session) in pairs {
        let Some(source) = source_by_id.get(source_session.as_str()) else { continue };
        let Some(target) = target_by_id.get(target_session.as_str()) else { continue };
        let source_skus: Vec<String> =
            source.viewed_skus().into_iter().map(str::to_string).collect();
        if source_skus.is_empty() {
            continue;
        }
        let cases = extract_cases(std::slice::from_ref(*target), target_shop);
        let Some(case) = cases.into_iter().next() else { continue };
        out.push(PairedCase { source_shop: source_shop.to_string(), source_skus, case });
    }
    out
}

fn cmd_cross_eval(args: CrossEvalArgs) -> Result<()> {
    let ws = Workspace::new(&args.workspace);
    let shops = ws.shops()?;
    if shops.len() != 2 {
        return Err(Error::Argument(format!(
            "cross-eval needs exactly 2 shops, workspace has {}",
            shops.len()
        )));
    }
    let hash = print_config(
        "cross-eval",
        &[
            ("k", args.k.to_string()),
            ("seed_len", args.seed_len.to_string()),
            ("shops", shops.join(",")),
        ],
    );
    let boundary = ws.read_boundary()?;
    let pairs = load_pairs(&ws.pairs())?;
    let pair_triples: Vec<(String, String, String)> = pairs
        .iter()
        .map(|p| (p.user_id.clone(), p.session_a.clone(), p.session_b.clone()))
        .collect();
    std::fs::create_dir_all(ws.reports_dir())?;
    // Shops are sorted, so shops[0] holds the pairs' session_a side.
    let (shop_a, shop_b) = (&shops[0], &shops[1]);
    for (source, target, swap) in [(shop_a, shop_b, false), (shop_b, shop_a, true)] {
        let source_events = load_events(&ws.events(source))?;
        let target_events = load_events(&ws.events(target))?;
        let (_, target_test) = temporal_split(&target_events, boundary)?;
        let directed: Vec<(String, String, String)> = pair_triples
            .iter()
            .map(|(u, a, b)| {
                if swap {
                    (u.clone(), b.clone(), a.clone())
                } else {
                    (u.clone(), a.clone(), b.clone())
                }
            })
            .collect();
        let cases = paired_cases(&directed, source, &source_events, target, &target_test);
        if cases.is_empty() {
            return Err(Error::Degenerate(format!(
                "no paired test cases in direction {source}->{target}"
            )));
        }
        let trie = load_index(&ws.index(target))?;
        let source_products = VectorTable::load(&ws.product_vectors(source), PRODUCT_VECTOR_KIND)?;
        let target_products = VectorTable::load(&ws.product_vectors(target), PRODUCT_VECTOR_KIND)?;
        // The conditional row is included when the target shop has a
        // trained averaging model on disk.
        let model_path = ws.model(target, EncoderKind::Avg);
        let encdec = model_path.is_file().then(|| load_model(&model_path)).transpose()?;
        let resources = CrossShopResources {
            trie: &trie,
            source_products: &source_products,
            target_products: &target_products,
            encdec: encdec.as_ref(),
        };
        let direction = format!("{source}->{target}");
        let report = cross_shop_benchmark(&cases, &resources, args.k, args.seed_len, &direction)?;
        print_report(&direction, &report);
        write_report_text(
            &ws.reports_dir().join(format!("cross-{source}-to-{target}.txt")),
            &report,
        )?;
        write_report_tsv(
            &ws.reports_dir().join(format!("cross-{source}-to-{target}.tsv")),
            &report,
        )?;
    }
    ws.record_stage("cross-eval", 1, hash)?;
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let ws = Workspace::new(&args.workspace);
    let mode = ModelMode::parse(&args.mode)?;
    let shops = ws.shops()?;
    print_config(
        "serve",
        &[
            ("mode", mode.as_str().to_string()),
            ("bind", args.bind.clone()),
            ("n_display", args.n_display.to_string()),
            ("k_multiplier", args.k_multiplier.to_string()),
            ("u_precompute", args.u_precompute.to_string()),
            ("ttl_minutes", args.ttl_minutes.to_string()),
            ("max_sessions", args.max_sessions.to_string()),
            ("shops", shops.join(",")),
        ],
    );
    let mut resources = HashMap::new();
    for shop in &shops {
        let trie = load_index(&ws.index(shop))?;
        let products = VectorTable::load(&ws.product_vectors(shop), PRODUCT_VECTOR_KIND)?;
        let encdec = match mode {
            ModelMode::EncDecAvg => Some(load_model(&ws.model(shop, EncoderKind::Avg))?),
            ModelMode::EncDecFull => Some(load_model(&ws.model(shop, EncoderKind::Full))?),
            _ => {
                let path = ws.model(shop, EncoderKind::Avg);
                path.is_file().then(|| load_model(&path)).transpose()?
            }
        };
        resources.insert(shop.clone(), ShopResources { trie, products, encdec });
    }
    let cache_config = CacheConfig {
        ttl_ms: args.ttl_minutes * 60 * 1000,
        max_sessions: args.max_sessions,
        ..CacheConfig::default()
    };
    let sessions = SessionCache::new(cache_config)?;
    let service_config = ServiceConfig {
        n_display: args.n_display,
        k_multiplier: args.k_multiplier,
        u_precompute: args.u_precompute,
        model_mode: mode,
        bind: args.bind,
        ..ServiceConfig::default()
    };
    let mut service = Service::build(service_config, resources, sessions, Arc::new(SystemClock))?;
    if mode == ModelMode::EncDecAvg || mode == ModelMode::EncDecFull {
        service.start_worker();
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service.serve())
}
