use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use biosage::system::{
    load_profiles, open_index, pick_profile, resolve_tags, write_json, ServerError, System,
    SystemConfig, DEFAULT_EMBED_SEED, DEFAULT_HISTORY_WINDOW, INDEX_DIR,
};
use biosage_causal::{analyze, load_runs, CausalError, NotearsParams, Treatment};
use biosage_core::agents::{AgentError, AgentRequest, AgentVariant, RetrievalAgent, TranslationAgent, TranslationRequest, TranslationVariant};
use biosage_core::corpus::{ChunkParams, Corpus, CorpusError, DEFAULT_OVERLAP_TOKENS, DEFAULT_WINDOW_TOKENS};
use biosage_core::eval::{
    emit_report, load_benchmark, score, AblationConfig, BenchmarkFormat, Condition, EvalError, Evaluator, ResultCell,
};
use biosage_core::gateway::{EmbedderSpec, Gateway};
use biosage_core::index::{build_index, HybridIndex, IndexConfig, IndexError, SearchMode, TermScorer, DEFAULT_EMBEDDING_DIM};
use biosage_core::orchestrator::{screen, Denylist};
use biosage_core::trace::Tracer;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Usage(String),
    #[error("refused ({stage}): {reason}")]
    Refused { stage: String, reason: String },
}

#[derive(Parser)]
#[command(name = "biosage", version, about = "Cross-disciplinary research assistant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manage the document corpus.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Build or query the hybrid index.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Answer a question with the retrieval agent.
    Ask(AskArgs),
    /// Translate knowledge from one domain into another.
    Translate(TranslateArgs),
    /// Benchmark ablations.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Structure learning over evaluation records.
    Causal {
        #[command(subcommand)]
        command: CausalCommand,
    },
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Ingest a JSONL file of documents.
    Ingest {
        path: PathBuf,
        #[arg(long, env = "BIOSAGE_CORPUS_DIR")]
        corpus_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Chunk, embed and index the whole corpus.
    Build {
        #[arg(long, env = "BIOSAGE_CORPUS_DIR")]
        corpus_dir: PathBuf,
        /// OpenAI-compatible embeddings URL; the offline hash embedder otherwise.
        #[arg(long)]
        embed_endpoint: Option<String>,
        #[arg(long, default_value = "text-embedding-3-small")]
        embed_model: String,
        #[arg(long, default_value_t = DEFAULT_EMBEDDING_DIM)]
        embed_dim: usize,
        /// Environment variable holding the embeddings API token.
        #[arg(long)]
        embed_auth_env: Option<String>,
        #[arg(long, default_value_t = DEFAULT_WINDOW_TOKENS)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_OVERLAP_TOKENS)]
        overlap: usize,
        #[arg(long, value_enum, default_value_t = Scorer::Bm25)]
        scorer: Scorer,
    },
    /// Search the index.
    Search {
        query: String,
        #[arg(long, env = "BIOSAGE_CORPUS_DIR")]
        corpus_dir: PathBuf,
        #[arg(long)]
        tags: Option<String>,
        #[arg(short, default_value_t = 10)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Mode::Hybrid)]
        mode: Mode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scorer {
    Bm25,
    Tfidf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Term,
    Vector,
    Hybrid,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Backend profile name, or an endpoint (`mock:<script.jsonl>`, `https://...`).
    #[arg(long, env = "BIOSAGE_BACKEND")]
    backend: Option<String>,
    /// JSON array of backend profiles.
    #[arg(long, env = "BIOSAGE_BACKENDS")]
    backends: Option<PathBuf>,
}

impl BackendArgs {
    fn gateway(&self) -> Result<(String, Arc<Gateway>), CliError> {
        let profiles = load_profiles(self.backends.as_deref())?;
        let profile = pick_profile(&profiles, self.backend.as_deref())?;
        let gw = Gateway::from_profile(&profile).map_err(ServerError::from)?;
        Ok((profile.name, Arc::new(gw)))
    }
}

#[derive(Args)]
struct AskArgs {
    question: String,
    #[arg(long, default_value = "v1")]
    variant: AgentVariant,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, env = "BIOSAGE_CORPUS_DIR")]
    corpus_dir: PathBuf,
    /// JSON array of answer choices.
    #[arg(long)]
    mcq: Option<PathBuf>,
    /// Writes the step events as a JSON array.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct TranslateArgs {
    question: String,
    /// Domain(s) the knowledge comes from, comma-separated.
    #[arg(long)]
    from: String,
    /// Domain(s) of the reader, comma-separated.
    #[arg(long)]
    to: String,
    #[arg(long, default_value = "persistent")]
    variant: TranslationVariant,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, env = "BIOSAGE_CORPUS_DIR")]
    corpus_dir: PathBuf,
    /// Answer the in-domain step from retrieved evidence.
    #[arg(long)]
    rag_in_domain: bool,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Run ablation conditions over a benchmark file.
    Run(EvalArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    format: BenchmarkFormat,
    #[arg(long, default_value = "vanilla_llm,vanilla_rag,agent_v1,agent_v2")]
    conditions: String,
    #[command(flatten)]
    backend: BackendArgs,
    /// Corpus for the retrieval-backed conditions.
    #[arg(long, env = "BIOSAGE_CORPUS_DIR")]
    corpus_dir: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    concurrency: usize,
    #[arg(long, default_value_t = 5)]
    retrieval_depth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CausalCommand {
    /// Fit a DAG over run metrics and export the intervention-effects heatmap.
    Fit {
        /// Per-item JSONL written by `eval run`.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value = "model,condition,benchmark")]
        treatments: String,
        #[arg(long)]
        out: PathBuf,
        /// Also writes the fitted graph as JSON.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        lambda1: f64,
        #[arg(long, default_value_t = 0.3)]
        w_threshold: f64,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "BIOSAGE_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long, env = "BIOSAGE_CORPUS_DIR")]
    corpus_dir: PathBuf,
    /// Session storage root; the corpus directory by default.
    #[arg(long, env = "BIOSAGE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Allowed CORS origin; repeat for several, `*` for any.
    #[arg(long = "cors-origin", env = "BIOSAGE_CORS_ORIGIN", value_delimiter = ',')]
    cors_origin: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_HISTORY_WINDOW)]
    history_window: usize,
    #[arg(long)]
    denylist: Option<PathBuf>,
}

fn open_agent(corpus_dir: &Path, gateway: Arc<Gateway>) -> Result<RetrievalAgent, CliError> {
    if !corpus_dir.is_dir() {
        return Err(CliError::Usage(format!("corpus directory {} does not exist", corpus_dir.display())));
    }
    let corpus = Corpus::open(corpus_dir)?;
    let (index, manifest) = open_index(&corpus, &corpus_dir.join(INDEX_DIR))?;
    let mut agent = RetrievalAgent::new(gateway, Arc::new(index), corpus.vocabulary().clone());
    if let Some(spec) = &manifest.embedder {
        agent = agent.with_embedder(spec.build());
    }
    Ok(agent)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::other)?;
    writeln!(out)?;
    Ok(())
}

fn check_safety(gateway: &Gateway, question: &str) -> Result<(), CliError> {
    let verdict = screen(&Denylist::default(), gateway, question);
    if verdict.allow {
        return Ok(());
    }
    let stage = serde_json::to_value(verdict.stage).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    Err(CliError::Refused { stage, reason: verdict.reason.unwrap_or_default() })
}

fn corpus_ingest(path: &Path, corpus_dir: &Path) -> Result<(), CliError> {
    let mut corpus = Corpus::open(corpus_dir)?;
    let report = corpus.load_corpus_file(path)?;
    eprintln!("ingested {} documents, rejected {}", report.ingested, report.rejected());
    print_json(&serde_json::json!({ "ingested": report.ingested, "rejected": report.rejected(), "documents": corpus.len() }))
}

#[allow(clippy::too_many_arguments)]
fn index_build(
    corpus_dir: &Path,
    embed_endpoint: Option<String>,
    embed_model: String,
    embed_dim: usize,
    embed_auth_env: Option<String>,
    window: usize,
    overlap: usize,
    scorer: Scorer,
) -> Result<(), CliError> {
    let corpus = Corpus::open(corpus_dir)?;
    let spec = match embed_endpoint {
        Some(endpoint) => EmbedderSpec::Http { endpoint, model: embed_model, dim: embed_dim, auth_env: embed_auth_env },
        None => EmbedderSpec::Hash { dim: embed_dim, seed: DEFAULT_EMBED_SEED },
    };
    let embedder = spec.build();
    let config = IndexConfig {
        scorer: match scorer {
            Scorer::Bm25 => TermScorer::default(),
            Scorer::Tfidf => TermScorer::TfIdfCosine,
        },
        ..IndexConfig::default()
    };
    let params = ChunkParams { window_tokens: window, overlap_tokens: overlap };
    let (index, manifest) = build_index(&corpus, Some(embedder.as_ref()), params, config)?;
    index.save(&corpus_dir.join(INDEX_DIR), &manifest)?;
    print_json(&index.stats())
}

fn index_search(query: &str, corpus_dir: &Path, tags: Option<&str>, k: usize, mode: Mode) -> Result<(), CliError> {
    let corpus = Corpus::open(corpus_dir)?;
    let (index, manifest) = open_index(&corpus, &corpus_dir.join(INDEX_DIR))?;
    let filter = match tags {
        Some(t) => Some(resolve_tags(corpus.vocabulary(), t)?.into_iter().collect()),
        None => None,
    };
    let embedding = match (mode, &manifest.embedder) {
        (Mode::Term, _) | (_, None) => None,
        (_, Some(spec)) => Some(spec.build().embed_one(query).map_err(ServerError::from)?),
    };
    let mode = match mode {
        Mode::Term => SearchMode::Term,
        Mode::Vector => SearchMode::Vector,
        Mode::Hybrid => SearchMode::Hybrid,
    };
    let hits = index.search(mode, query, embedding.as_deref(), filter.as_ref(), k)?;
    let rows: Vec<_> = hits
        .iter()
        .map(|h| {
            let chunk = index.chunk(&h.chunk_id);
            serde_json::json!({
                "chunk_id": h.chunk_id,
                "score": h.score,
                "doc_id": chunk.map(|c| c.doc_id.as_str()),
                "title": chunk.and_then(|c| corpus.get(&c.doc_id)).map(|d| d.title.as_str()),
            })
        })
        .collect();
    print_json(&rows)
}

fn ask(args: AskArgs) -> Result<(), CliError> {
    let (_, gateway) = args.backend.gateway()?;
    check_safety(&gateway, &args.question)?;
    let agent = open_agent(&args.corpus_dir, gateway)?;
    let choices: Vec<String> = match &args.mcq {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| CliError::Usage(format!("{}: expected a JSON array of strings: {e}", p.display())))?,
        None => Vec::new(),
    };
    let mut tracer = Tracer::new();
    let result = agent.answer_question(&AgentRequest::new(&args.question).with_choices(choices), args.variant, &mut tracer);
    if let Some(path) = &args.trace {
        write_json(path, &tracer.events())?;
    }
    print_json(&result?)
}

fn translate(args: TranslateArgs) -> Result<(), CliError> {
    let (_, gateway) = args.backend.gateway()?;
    check_safety(&gateway, &args.question)?;
    let agent = Arc::new(open_agent(&args.corpus_dir, gateway)?);
    let out_tags = resolve_tags(agent.vocabulary(), &args.from)?;
    let in_tags = resolve_tags(agent.vocabulary(), &args.to)?;
    let translator = TranslationAgent::new(agent).with_rag_in_domain(args.rag_in_domain);
    let mut tracer = Tracer::new();
    let req = TranslationRequest::new(&args.question, in_tags, out_tags, args.variant);
    let result = translator.translate(&req, &mut tracer);
    if let Some(path) = &args.trace {
        write_json(path, &tracer.events())?;
    }
    print_json(&result?)
}

fn eval_run(args: EvalArgs) -> Result<(), CliError> {
    let conditions = args
        .conditions
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse::<Condition>)
        .collect::<Result<Vec<_>, _>>()?;
    if conditions.is_empty() {
        return Err(CliError::Usage("no conditions given".into()));
    }
    let items = load_benchmark(&args.benchmark, args.format)?;
    let benchmark = args.benchmark.file_stem().map_or_else(|| "benchmark".into(), |s| s.to_string_lossy().into_owned());
    let (backend, gateway) = args.backend.gateway()?;
    let agent = match &args.corpus_dir {
        Some(dir) => open_agent(dir, gateway)?,
        None => RetrievalAgent::new(gateway, Arc::new(HybridIndex::default()), Default::default()),
    };
    fs::create_dir_all(&args.out)?;
    let evaluator = Evaluator::new(Arc::new(agent)).with_trace_dir(args.out.join("traces"));
    let mut cells = Vec::new();
    let mut records = Vec::new();
    for condition in conditions {
        let config = AblationConfig {
            retrieval_depth: args.retrieval_depth,
            seed: args.seed,
            concurrency: args.concurrency,
            ..AblationConfig::new(condition, &backend)
        };
        let recs = evaluator.run_condition(&config, &benchmark, &items, args.limit)?;
        let s = score(&recs)?;
        eprintln!("{benchmark} {} {backend}: accuracy {:.3} over {} items", condition.as_str(), s.accuracy, s.n);
        cells.push(ResultCell { benchmark: benchmark.clone(), condition, backend: backend.clone(), score: s });
        records.extend(recs);
    }
    let paths = emit_report(&cells, &records, &args.out)?;
    print_json(&serde_json::json!({
        "csv": paths.csv,
        "markdown": paths.markdown,
        "items": paths.items,
    }))
}

fn causal_fit(
    runs: &Path,
    treatments: &str,
    out: &Path,
    graph: Option<&Path>,
    lambda1: f64,
    w_threshold: f64,
) -> Result<(), CliError> {
    let treatments = treatments
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse::<Treatment>)
        .collect::<Result<Vec<_>, _>>()?;
    let rows = load_runs(runs)?;
    let params = NotearsParams { lambda1, w_threshold, ..NotearsParams::default() };
    let analysis = analyze(&rows, &treatments, &params)?;
    analysis.heatmap.save_csv(out)?;
    if let Some(path) = graph {
        write_json(path, &analysis.fit)?;
    }
    if !analysis.fit.converged {
        eprintln!("warning: acyclicity tolerance not reached (h = {:e})", analysis.fit.h);
    }
    print_json(&serde_json::json!({
        "rows": rows.len(),
        "columns": analysis.table.names,
        "dropped": analysis.dropped,
        "edges": analysis.fit.graph.edges().len(),
        "converged": analysis.fit.converged,
        "heatmap": out,
    }))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down; draining open streams");
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    if !args.corpus_dir.is_dir() {
        return Err(CliError::Usage(format!("corpus directory {} does not exist", args.corpus_dir.display())));
    }
    let config = SystemConfig {
        corpus_dir: args.corpus_dir,
        data_dir: args.data_dir,
        backends: load_profiles(args.backend.backends.as_deref())?,
        backend: args.backend.backend,
        history_window: args.history_window,
        denylist: args.denylist,
    };
    let system = Arc::new(System::open(&config)?);
    let app = biosage::router(system, &args.cors_origin)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.bind).await?;
        log::info!("listening on {}", listener.local_addr()?);
        biosage::serve(listener, app, shutdown_signal()).await
    })?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Corpus { command: CorpusCommand::Ingest { path, corpus_dir } } => corpus_ingest(&path, &corpus_dir),
        Command::Index { command } => match command {
            IndexCommand::Build { corpus_dir, embed_endpoint, embed_model, embed_dim, embed_auth_env, window, overlap, scorer } => {
                index_build(&corpus_dir, embed_endpoint, embed_model, embed_dim, embed_auth_env, window, overlap, scorer)
            }
            IndexCommand::Search { query, corpus_dir, tags, k, mode } => {
                index_search(&query, &corpus_dir, tags.as_deref(), k, mode)
            }
        },
        Command::Ask(args) => ask(args),
        Command::Translate(args) => translate(args),
        Command::Eval { command: EvalCommand::Run(args) } => eval_run(args),
        Command::Causal { command: CausalCommand::Fit { runs, treatments, out, graph, lambda1, w_threshold } } => {
            causal_fit(&runs, &treatments, &out, graph.as_deref(), lambda1, w_threshold)
        }
        Command::Serve(args) => serve(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Refused { .. }) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
