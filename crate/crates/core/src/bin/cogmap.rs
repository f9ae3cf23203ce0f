use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cogmap::hypergraph::ThresholdMode;
use cogmap::pipeline::{self, Artifacts, Pipeline, ProviderKind, RunConfig, Stage, StageOutcome};
use cogmap::query::{self, QueryError, Scored};

#[derive(Parser)]
#[command(name = "cogmap", version, about = "Task-construct graph pipeline and query tool")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override keys of the JSON config.
#[derive(Args, Clone, Default)]
struct Global {
    /// JSON run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Directory holding artifacts and the manifest.
    #[arg(long, short, global = true)]
    output_dir: Option<PathBuf>,
    /// Master seed; per-stage seeds derive from it unless set explicitly.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Re-run stages even when their manifest entry is current.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Precomputed document vectors for `--provider file`.
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    provider: Option<Provider>,
    #[arg(long, global = true)]
    embed_dim: Option<usize>,
    #[arg(long, global = true)]
    min_docs: Option<usize>,
    #[arg(long, global = true)]
    walks_per_node: Option<usize>,
    #[arg(long, global = true)]
    walk_length: Option<usize>,
    /// Node embedding dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// SGNS worker threads; 1 is deterministic.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    threshold_mode: Option<Mode>,
    /// Hyperedge membership threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// More log output (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Mock,
    TokenMock,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Strong,
    Band,
}

#[derive(Subcommand)]
enum Command {
    /// Harvest abstracts for every lexicon term.
    Fetch,
    /// Ingest and prune the corpus.
    Ingest,
    /// Embed documents.
    Embed,
    /// Cluster documents into topics.
    Topics,
    /// Build the term graph.
    Graph,
    /// Generate walks and train node embeddings.
    Train,
    /// Build the construct hypergraph.
    Hypergraph,
    /// Compute bibliometric statistics, or print one of them.
    Stats {
        /// Print this statistic after the stage runs.
        #[arg(value_enum)]
        name: Option<StatName>,
    },
    /// Run every stage in order.
    Run,
    /// Recommend tasks, e.g. "attention + memory - inhibition".
    Query {
        text: String,
        #[arg(long, short = 'k', default_value_t = query::DEFAULT_TOP_K)]
        top_k: usize,
        /// Where to write the JSON result.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Pick a small set of tasks covering the given constructs.
    Battery {
        #[arg(required = true)]
        constructs: Vec<String>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Divergence between two tasks.
    Distance { a: String, b: String },
    /// Tasks closest to a task by divergence.
    Nearest {
        task: String,
        #[arg(long, short = 'k', default_value_t = query::DEFAULT_TOP_K)]
        top_k: usize,
    },
    /// Copy an artifact file out of the output directory.
    Export {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(pipeline::EXPORTS.map(|(n, _)| n)))]
        artifact: String,
        dest: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StatName {
    Timelines,
    Innovation,
    Lags,
    TasksPerPaper,
    TasksByYear,
    Disciplines,
    Overlap,
    Summary,
}

impl StatName {
    fn file(self) -> &'static str {
        match self {
            StatName::Timelines => pipeline::TIMELINES,
            StatName::Innovation => pipeline::INNOVATION,
            StatName::Lags => pipeline::LAGS,
            StatName::TasksPerPaper => pipeline::TASKS_PER_PAPER,
            StatName::TasksByYear => pipeline::TASKS_BY_YEAR,
            StatName::Disciplines => pipeline::DISCIPLINES,
            StatName::Overlap => pipeline::DISCIPLINE_OVERLAP,
            StatName::Summary => pipeline::STATS,
        }
    }
}

fn load_config(g: &Global) -> anyhow::Result<RunConfig> {
    let mut c = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let p = &mut c.paths;
    if g.output_dir.is_some() {
        p.output_dir = g.output_dir.clone();
    }
    if p.output_dir.is_none() {
        p.output_dir = Some(PathBuf::from("cogmap-out"));
    }
    if g.lexicon.is_some() {
        p.lexicon = g.lexicon.clone();
    }
    if g.corpus.is_some() {
        p.corpus = g.corpus.clone();
    }
    if g.embeddings.is_some() {
        p.embeddings = g.embeddings.clone();
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(v) = g.provider {
        c.embedder.provider = match v {
            Provider::Mock => ProviderKind::Mock,
            Provider::TokenMock => ProviderKind::TokenMock,
            Provider::File => ProviderKind::File,
        };
    }
    if g.embed_dim.is_some() {
        c.embedder.dim = g.embed_dim;
    }
    if let Some(v) = g.min_docs {
        c.ingest.min_docs = v;
        c.graph.min_docs = v;
    }
    if let Some(v) = g.walks_per_node {
        c.walks.walks_per_node = v;
    }
    if let Some(v) = g.walk_length {
        c.walks.walk_length = v;
    }
    if let Some(v) = g.dim {
        c.sgns.dim = v;
    }
    if let Some(v) = g.epochs {
        c.sgns.epochs = v;
    }
    if let Some(v) = g.workers {
        c.sgns.workers = v;
    }
    if let Some(m) = g.threshold_mode {
        c.hypergraph.threshold_mode = match m {
            Mode::Strong => ThresholdMode::Strong,
            Mode::Band => ThresholdMode::Band,
        };
    }
    if let Some(t) = g.tau {
        c.hypergraph.membership_threshold = t;
    }
    if c.fetch.client.api_key.is_none() {
        c.fetch.client.api_key = std::env::var("NCBI_API_KEY").ok();
    }
    Ok(c)
}

fn output_dir(c: &RunConfig) -> PathBuf {
    c.paths.output_dir.clone().expect("set by load_config")
}

fn report(outcomes: &[StageOutcome]) {
    for o in outcomes {
        if o.ran {
            println!("{:<11} done in {:.2}s", o.stage.as_str(), o.seconds);
        } else {
            println!("{:<11} up to date", o.stage.as_str());
        }
    }
}

fn write_result(dir: &Path, explicit: Option<PathBuf>, default: &str, value: &serde_json::Value) -> anyhow::Result<PathBuf> {
    let path = match explicit {
        Some(p) => p,
        None => {
            let d = dir.join("results");
            std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
            d.join(default)
        }
    };
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn print_scores(rows: &[Scored], header: &str) {
    println!("{:>4}  {:<40} {:>10}", "rank", "task", header);
    for (i, r) in rows.iter().enumerate() {
        println!("{:>4}  {:<40} {:>10.4}", i + 1, r.term.as_str(), r.score);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli.global)?;
    let dir = output_dir(&config);
    let force = cli.global.force;
    let stage = |s: Stage| -> anyhow::Result<()> {
        let mut p = Pipeline::open(config.clone(), force)?;
        report(&[p.run_stage(s)?]);
        Ok(())
    };
    match cli.command {
        Command::Fetch => stage(Stage::Fetch)?,
        Command::Ingest => stage(Stage::Ingest)?,
        Command::Embed => stage(Stage::Embed)?,
        Command::Topics => stage(Stage::Topics)?,
        Command::Graph => stage(Stage::Graph)?,
        Command::Train => stage(Stage::Train)?,
        Command::Hypergraph => stage(Stage::Hypergraph)?,
        Command::Stats { name } => {
            stage(Stage::Stats)?;
            if let Some(n) = name {
                let p = dir.join(n.file());
                print!("{}", std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?);
            }
        }
        Command::Run => {
            let mut p = Pipeline::open(config.clone(), force)?;
            report(&p.run_all()?);
        }
        Command::Query { text, top_k, json } => {
            if top_k == 0 {
                return Err(QueryError::BadTopK.into());
            }
            // Parse before loading so syntax errors do not need artifacts.
            if text.trim().is_empty() {
                return Err(QueryError::Empty.into());
            }
            let a = Artifacts::load(&dir)?;
            let (_, results) = a.query(&text, top_k)?;
            print_scores(&results, "score");
            let path = write_result(&dir, json, "query.json", &query::results_json(&text, &results))?;
            eprintln!("wrote {}", path.display());
        }
        Command::Battery { constructs, json } => {
            let a = Artifacts::load(&dir)?;
            let names: Vec<&str> = constructs.iter().map(String::as_str).collect();
            let b = a.battery(&names)?;
            println!("{:<40} {:>10}", "task", "membership");
            for t in &b.tasks {
                println!("{:<40} {:>10.4}", t.task.as_str(), t.membership);
            }
            println!("tree edges:");
            for e in &b.edges {
                println!("  {} -- {}  {:.4}", e.a.as_str(), e.b.as_str(), e.distance);
            }
            println!("total distance {:.4}", b.total_distance);
            let path = write_result(&dir, json, "battery.json", &serde_json::to_value(&b)?)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Distance { a, b } => {
            let art = Artifacts::load(&dir)?;
            println!("{:.6}", art.distance(&a, &b)?);
        }
        Command::Nearest { task, top_k } => {
            let art = Artifacts::load(&dir)?;
            print_scores(&art.nearest(&task, top_k)?, "divergence");
        }
        Command::Export { artifact, dest } => {
            let Some((_, file)) = pipeline::EXPORTS.iter().find(|(n, _)| *n == artifact) else {
                bail!("unknown artifact {artifact}");
            };
            let src = dir.join(file);
            if !src.exists() {
                bail!("{} does not exist; run the pipeline first", src.display());
            }
            std::fs::copy(&src, &dest).with_context(|| format!("copying {} to {}", src.display(), dest.display()))?;
            eprintln!("wrote {}", dest.display());
        }
    }
    Ok(())
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let kind = err
        .downcast_ref::<cogmap::Error>()
        .map(|e| e.kind())
        .or_else(|| err.downcast_ref::<QueryError>().map(|_| "query"))
        .unwrap_or("cli");
    let mut v = serde_json::json!({ "error": { "kind": kind, "message": format!("{err:#}") } });
    let suggestions = match err.downcast_ref::<QueryError>() {
        Some(QueryError::UnknownTerm { suggestions, .. }) => Some(suggestions),
        _ => match err.downcast_ref::<cogmap::Error>() {
            Some(cogmap::Error::Query(QueryError::UnknownTerm { suggestions, .. })) => Some(suggestions),
            _ => None,
        },
    };
    if let Some(s) = suggestions {
        v["error"]["suggestions"] = serde_json::json!(s);
    }
    v
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(1)
        }
    }
}
