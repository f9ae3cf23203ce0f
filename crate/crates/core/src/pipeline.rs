//! Stage orchestration with content-hashed artifacts.
//!
//! Every stage reads files written by earlier stages, writes its own files
//! into the output directory and records a manifest entry holding the
//! sha256 of each input, of its effective configuration and of each output.
//! A stage whose inputs, configuration and outputs all still match its entry
//! is skipped unless forced. Wall-clock durations go to a separate timings
//! file so that the manifest itself is reproducible.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

use crate::corpus::{ingest_jsonl, prune_rare_terms, Corpus, Lexicon, TermId, TermKind};
use crate::embed::{embed_corpus, EmbedOptions, EmbeddingProvider, EmbeddingStore, FileProvider, MockProvider, TokenMockProvider};
use crate::error::{Error, Result};
use crate::graph::{build_graph, fit_term_nodes, GraphParams, TermGraph};
use crate::hash::{derive_seed, file_sha256, sha256_hex};
use crate::hypergraph::{build_hypergraph, Hypergraph, HypergraphParams};
use crate::metapath::{generate_walks, train_sgns, NodeEmbeddingStore, SgnsConfig, WalkConfig, WalkGraph};
use crate::pubmed::{harvest, ClientConfig, PubmedClient};
use crate::query::{self, Battery, Query, QueryError, Scored};
use crate::stats;
use crate::topics::{assign_documents, fit_topics, TopicModel, TopicParams};

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";
pub const LOCK: &str = ".lock";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage `{stage}` needs `{upstream}` to run first (run `cogmap {upstream}`)")]
    MissingUpstream { stage: Stage, upstream: Stage },
    #[error("artifact {artifact} of stage `{upstream}` is stale: {reason}; re-run `cogmap {upstream}` (or `cogmap run`) before `{stage}`")]
    StaleArtifact {
        stage: Stage,
        upstream: Stage,
        artifact: String,
        reason: String,
    },
    #[error("output directory {0} is locked by another run (remove {0}/.lock if no run is active)")]
    Locked(PathBuf),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Fetch,
    Ingest,
    Embed,
    Topics,
    Graph,
    Train,
    Hypergraph,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Fetch,
        Stage::Ingest,
        Stage::Embed,
        Stage::Topics,
        Stage::Graph,
        Stage::Train,
        Stage::Hypergraph,
        Stage::Stats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Fetch => "fetch",
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Topics => "topics",
            Stage::Graph => "graph",
            Stage::Train => "train",
            Stage::Hypergraph => "hypergraph",
            Stage::Stats => "stats",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

// Artifact file names.
pub const FETCHED: &str = "fetched.jsonl";
pub const FETCH_REPORT: &str = "fetch_report.json";
pub const CORPUS: &str = "corpus.jsonl";
pub const LEXICON: &str = "lexicon.json";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const EMBEDDINGS: &str = "embeddings.txt";
pub const EMBED_REPORT: &str = "embed_report.json";
pub const TOPICS: &str = "topics.json";
pub const DOC_TOPIC: &str = "doc_topic.csv";
pub const CENTROIDS: &str = "topic_centroids.txt";
pub const GRAPH: &str = "graph.json";
pub const GRAPHML: &str = "graph.graphml";
pub const EDGES: &str = "graph_edges.json";
pub const DIVERGENCE: &str = "divergence.csv";
pub const WALKS: &str = "walks.txt";
pub const NODE_VECTORS: &str = "node_embeddings.txt";
pub const NODE_CONTEXT_VECTORS: &str = "node_context_embeddings.txt";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const HYPERGRAPH: &str = "hypergraph.json";
pub const HYPEREDGES: &str = "hyperedges.json";
pub const MEMBERSHIPS: &str = "memberships.csv";
pub const INCIDENCE: &str = "incidence.csv";
pub const TIMELINES: &str = "timelines.csv";
pub const INNOVATION: &str = "innovation.csv";
pub const LAGS: &str = "lags.csv";
pub const TASKS_PER_PAPER: &str = "tasks_per_paper.csv";
pub const TASKS_BY_YEAR: &str = "tasks_per_paper_by_year.csv";
pub const DISCIPLINES: &str = "disciplines.csv";
pub const DISCIPLINE_OVERLAP: &str = "discipline_overlap.csv";
pub const STATS: &str = "stats.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub lexicon: Option<PathBuf>,
    /// JSONL corpus; when absent, `fetch` harvests one.
    pub corpus: Option<PathBuf>,
    /// Precomputed vectors for the `file` embedder.
    pub embeddings: Option<PathBuf>,
    /// Not part of the hashed configuration.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

/// Per-stage seeds; unset ones derive from the master seed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSeeds {
    pub embed: Option<u64>,
    pub graph: Option<u64>,
    pub walks: Option<u64>,
    pub sgns: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    TokenMock,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub provider: ProviderKind,
    /// Defaults to 64 for the mock providers.
    pub dim: Option<usize>,
    pub batch_size: usize,
    pub retries: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            provider: ProviderKind::Mock,
            dim: None,
            batch_size: 64,
            retries: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub min_docs: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { min_docs: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchConfig {
    pub client: ClientConfig,
    pub date_range: Option<(i32, i32)>,
    pub limit_per_query: usize,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            client: ClientConfig::default(),
            date_range: None,
            limit_per_query: 10_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub seed: u64,
    pub seeds: StageSeeds,
    pub fetch: FetchConfig,
    pub ingest: IngestConfig,
    pub embedder: EmbedderConfig,
    pub topics: TopicParams,
    pub graph: GraphParams,
    pub walks: WalkConfig,
    pub sgns: SgnsConfig,
    pub hypergraph: HypergraphParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())).into())
    }

    fn stage_seed(&self, name: &str, explicit: Option<u64>) -> u64 {
        explicit.unwrap_or_else(|| derive_seed(self.seed, &[name.as_bytes()]))
    }

    pub fn embed_seed(&self) -> u64 {
        self.stage_seed("embed", self.seeds.embed)
    }

    /// Graph parameters with the effective seed.
    pub fn graph_params(&self) -> GraphParams {
        GraphParams {
            seed: self.stage_seed("graph", self.seeds.graph),
            ..self.graph.clone()
        }
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            seed: self.stage_seed("walks", self.seeds.walks),
            ..self.walks.clone()
        }
    }

    pub fn sgns_config(&self) -> SgnsConfig {
        SgnsConfig {
            seed: self.stage_seed("sgns", self.seeds.sgns),
            ..self.sgns.clone()
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embedder.dim.unwrap_or(match self.embedder.provider {
            ProviderKind::File => 1024,
            _ => 64,
        })
    }

    /// The configuration a stage's outputs depend on, with seeds resolved.
    pub fn stage_config(&self, stage: Stage) -> serde_json::Value {
        use serde_json::json;
        match stage {
            Stage::Fetch => json!({ "fetch": self.fetch }),
            Stage::Ingest => json!({ "ingest": self.ingest }),
            Stage::Embed => json!({
                "embedder": self.embedder,
                "dim": self.embed_dim(),
                "seed": self.embed_seed(),
            }),
            Stage::Topics => json!({ "topics": self.topics }),
            Stage::Graph => json!({ "graph": self.graph_params() }),
            Stage::Train => json!({ "walks": self.walk_config(), "sgns": self.sgns_config() }),
            Stage::Hypergraph => json!({ "hypergraph": self.hypergraph }),
            Stage::Stats => json!({ "graph": self.graph_params() }),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub inputs: BTreeMap<String, String>,
    pub config_hash: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Effective configuration of the latest run, seeds resolved.
    pub config: serde_json::Value,
    pub stages: BTreeMap<Stage, StageEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        write_atomic(&dir.join(MANIFEST), text.as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn hash_file(path: &Path) -> Result<String> {
    file_sha256(path).map_err(|e| Error::io(path, e))
}

fn config_hash(value: &serde_json::Value) -> String {
    sha256_hex(value.to_string().as_bytes())
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(dir.to_path_buf()).into())
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    /// False when the stage was up to date and skipped.
    pub ran: bool,
    pub seconds: f64,
}

pub struct Pipeline {
    config: RunConfig,
    dir: PathBuf,
    force: bool,
    manifest: Manifest,
    provider: Option<Box<dyn EmbeddingProvider>>,
    pubmed: Option<PubmedClient>,
    _lock: DirLock,
}

impl Pipeline {
    /// Opens (creating if needed) the output directory and locks it.
    pub fn open(config: RunConfig, force: bool) -> Result<Self> {
        let dir = config
            .paths
            .output_dir
            .clone()
            .ok_or_else(|| PipelineError::Config("paths.output_dir is not set".into()))?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lock = DirLock::acquire(&dir)?;
        let manifest = Manifest::load(&dir)?;
        Ok(Pipeline {
            config,
            dir,
            force,
            manifest,
            provider: None,
            pubmed: None,
            _lock: lock,
        })
    }

    /// Replaces the configured embedding provider.
    pub fn with_provider(mut self, provider: Box<dyn EmbeddingProvider>) -> Self {
        self.provider = Some(provider);
        self
    }

    /// Replaces the network client used by `fetch`.
    pub fn with_pubmed_client(mut self, client: PubmedClient) -> Self {
        self.pubmed = Some(client);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn corpus_source(&self) -> Option<PathBuf> {
        self.config.paths.corpus.clone()
    }

    /// Stages whose outputs `stage` reads.
    pub fn upstream(&self, stage: Stage) -> Vec<Stage> {
        match stage {
            Stage::Fetch => vec![],
            Stage::Ingest if self.corpus_source().is_none() => vec![Stage::Fetch],
            Stage::Ingest => vec![],
            Stage::Embed => vec![Stage::Ingest],
            Stage::Topics => vec![Stage::Embed],
            Stage::Graph => vec![Stage::Ingest, Stage::Topics],
            Stage::Train => vec![Stage::Graph],
            Stage::Hypergraph => vec![Stage::Graph, Stage::Train],
            Stage::Stats => vec![Stage::Ingest, Stage::Topics],
        }
    }

    fn required_path(&self, p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        p.clone()
            .ok_or_else(|| PipelineError::Config(format!("paths.{key} is not set")).into())
    }

    /// Files read by `stage`, keyed by manifest name.
    fn inputs(&self, stage: Stage) -> Result<BTreeMap<String, PathBuf>> {
        let mut m = BTreeMap::new();
        let art = |m: &mut BTreeMap<String, PathBuf>, name: &str| {
            m.insert(name.to_string(), self.path(name));
        };
        match stage {
            Stage::Fetch => {
                m.insert("lexicon".into(), self.required_path(&self.config.paths.lexicon, "lexicon")?);
            }
            Stage::Ingest => {
                m.insert("lexicon".into(), self.required_path(&self.config.paths.lexicon, "lexicon")?);
                match self.corpus_source() {
                    Some(p) => {
                        m.insert("corpus".into(), p);
                    }
                    None => art(&mut m, FETCHED),
                }
            }
            Stage::Embed => {
                art(&mut m, CORPUS);
                art(&mut m, LEXICON);
                if self.config.embedder.provider == ProviderKind::File && self.provider.is_none() {
                    m.insert(
                        "embeddings".into(),
                        self.required_path(&self.config.paths.embeddings, "embeddings")?,
                    );
                }
            }
            Stage::Topics => art(&mut m, EMBEDDINGS),
            Stage::Graph | Stage::Stats => {
                art(&mut m, CORPUS);
                art(&mut m, LEXICON);
                art(&mut m, TOPICS);
            }
            Stage::Train => art(&mut m, GRAPH),
            Stage::Hypergraph => {
                art(&mut m, GRAPH);
                art(&mut m, NODE_VECTORS);
                art(&mut m, NODE_CONTEXT_VECTORS);
            }
        }
        Ok(m)
    }

    fn hash_inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        self.inputs(stage)?
            .into_iter()
            .map(|(k, p)| Ok((k, hash_file(&p)?)))
            .collect()
    }

    /// Checks that `up`'s recorded entry still describes the files on disk
    /// and the current configuration.
    fn check_fresh(&self, stage: Stage, up: Stage) -> Result<()> {
        let entry = self
            .manifest
            .stages
            .get(&up)
            .ok_or(PipelineError::MissingUpstream { stage, upstream: up })?;
        let stale = |artifact: &str, reason: String| -> Error {
            PipelineError::StaleArtifact {
                stage,
                upstream: up,
                artifact: artifact.to_string(),
                reason,
            }
            .into()
        };
        for (name, recorded) in &entry.outputs {
            let p = self.path(name);
            if !p.exists() {
                return Err(PipelineError::MissingUpstream { stage, upstream: up }.into());
            }
            if &hash_file(&p)? != recorded {
                return Err(stale(name, "file changed since it was written".into()));
            }
        }
        if config_hash(&self.config.stage_config(up)) != entry.config_hash {
            return Err(stale(up.as_str(), "configuration changed".into()));
        }
        for (name, p) in self.inputs(up)? {
            let current = if p.exists() { Some(hash_file(&p)?) } else { None };
            if current.as_ref() != entry.inputs.get(&name) {
                return Err(stale(&name, "its inputs changed".into()));
            }
        }
        Ok(())
    }

    fn up_to_date(&self, stage: Stage, inputs: &BTreeMap<String, String>, cfg: &str) -> Result<bool> {
        let Some(entry) = self.manifest.stages.get(&stage) else {
            return Ok(false);
        };
        if &entry.inputs != inputs || entry.config_hash != cfg {
            return Ok(false);
        }
        for (name, recorded) in &entry.outputs {
            let p = self.path(name);
            if !p.exists() || &hash_file(&p)? != recorded {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<StageOutcome> {
        for up in self.upstream(stage) {
            self.check_fresh(stage, up)?;
        }
        let inputs = self.hash_inputs(stage)?;
        let cfg = config_hash(&self.config.stage_config(stage));
        if !self.force && self.up_to_date(stage, &inputs, &cfg)? {
            log::info!("{stage}: up to date");
            return Ok(StageOutcome {
                stage,
                ran: false,
                seconds: 0.0,
            });
        }
        let start = Instant::now();
        log::info!("{stage}: running");
        let outputs = match stage {
            Stage::Fetch => self.fetch()?,
            Stage::Ingest => self.ingest()?,
            Stage::Embed => self.embed()?,
            Stage::Topics => self.topics()?,
            Stage::Graph => self.graph()?,
            Stage::Train => self.train()?,
            Stage::Hypergraph => self.hypergraph()?,
            Stage::Stats => self.stats()?,
        };
        let seconds = start.elapsed().as_secs_f64();
        let outputs = outputs
            .iter()
            .map(|name| Ok((name.to_string(), hash_file(&self.path(name))?)))
            .collect::<Result<_>>()?;
        self.manifest.stages.insert(
            stage,
            StageEntry {
                inputs,
                config_hash: cfg,
                outputs,
            },
        );
        self.manifest.config = serde_json::to_value(&self.config)?;
        self.manifest.save(&self.dir)?;
        self.record_timing(stage, seconds)?;
        Ok(StageOutcome {
            stage,
            ran: true,
            seconds,
        })
    }

    /// Runs every stage in order; `fetch` only when no corpus file is
    /// configured.
    pub fn run_all(&mut self) -> Result<Vec<StageOutcome>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            if stage == Stage::Fetch && self.corpus_source().is_some() {
                continue;
            }
            out.push(self.run_stage(stage)?);
        }
        Ok(out)
    }

    fn record_timing(&self, stage: Stage, seconds: f64) -> Result<()> {
        let path = self.path(TIMINGS);
        let mut timings: BTreeMap<String, f64> = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        timings.insert(stage.as_str().to_string(), seconds);
        write_atomic(&path, serde_json::to_string_pretty(&timings)?.as_bytes())
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        File::create(&p).map(BufWriter::new).map_err(|e| Error::io(&p, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        write_atomic(&self.path(name), text.as_bytes())
    }

    fn finish(&self, name: &str, w: BufWriter<File>) -> Result<()> {
        w.into_inner()
            .map_err(|e| Error::io(self.path(name), e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(self.path(name), e))
    }

    fn fetch(&mut self) -> Result<Vec<&'static str>> {
        let lexicon = Lexicon::load(&self.required_path(&self.config.paths.lexicon, "lexicon")?)?;
        let fetch = self.config.fetch.clone();
        let client = self
            .pubmed
            .take()
            .unwrap_or_else(|| PubmedClient::with_defaults(fetch.client.clone()));
        let result = harvest(&client, &lexicon, fetch.date_range, fetch.limit_per_query);
        self.pubmed = Some(client);
        let (docs, report) = result?;
        let mut w = self.create(FETCHED)?;
        for d in &docs {
            writeln!(w, "{}", serde_json::to_string(d)?).map_err(|e| Error::io(self.path(FETCHED), e))?;
        }
        self.finish(FETCHED, w)?;
        self.write_json(FETCH_REPORT, &report)?;
        Ok(vec![FETCHED, FETCH_REPORT])
    }

    fn ingest(&mut self) -> Result<Vec<&'static str>> {
        let lexicon = Lexicon::load(&self.required_path(&self.config.paths.lexicon, "lexicon")?)?;
        let source = self.corpus_source().unwrap_or_else(|| self.path(FETCHED));
        let (corpus, report) = ingest_jsonl(&source, &lexicon)?;
        let (pruned, removed) = prune_rare_terms(&corpus, self.config.ingest.min_docs);
        log::info!(
            "ingest: {} documents, {} terms pruned, report {report:?}",
            pruned.len(),
            removed.len()
        );
        let mut w = self.create(CORPUS)?;
        pruned.write_jsonl(&mut w).map_err(|e| Error::io(self.path(CORPUS), e))?;
        self.finish(CORPUS, w)?;
        write_atomic(&self.path(LEXICON), (pruned.lexicon.to_json() + "\n").as_bytes())?;
        let (tasks, constructs) = pruned.lexicon.counts();
        self.write_json(
            INGEST_REPORT,
            &serde_json::json!({
                "report": report,
                "pruned_terms": removed,
                "documents": pruned.len(),
                "tasks": tasks,
                "constructs": constructs,
            }),
        )?;
        Ok(vec![CORPUS, LEXICON, INGEST_REPORT])
    }

    fn embed(&mut self) -> Result<Vec<&'static str>> {
        let corpus = load_corpus(&self.dir)?;
        let owned: Box<dyn EmbeddingProvider>;
        let provider: &dyn EmbeddingProvider = match &self.provider {
            Some(p) => p.as_ref(),
            None => {
                let dim = self.config.embed_dim();
                let seed = self.config.embed_seed();
                owned = match self.config.embedder.provider {
                    ProviderKind::Mock => Box::new(MockProvider { seed, dim }),
                    ProviderKind::TokenMock => Box::new(TokenMockProvider { seed, dim }),
                    ProviderKind::File => Box::new(FileProvider::open(
                        &self.required_path(&self.config.paths.embeddings, "embeddings")?,
                    )?),
                };
                owned.as_ref()
            }
        };
        let opts = EmbedOptions {
            batch_size: self.config.embedder.batch_size,
            retries: self.config.embedder.retries,
        };
        let (store, report) = embed_corpus(&corpus, provider, &opts)?;
        store.save(&self.path(EMBEDDINGS))?;
        let missing: BTreeMap<&str, String> = report
            .missing
            .iter()
            .map(|(id, e)| (id.as_str(), e.to_string()))
            .collect();
        self.write_json(EMBED_REPORT, &serde_json::json!({ "embedded": store.len(), "missing": missing }))?;
        Ok(vec![EMBEDDINGS, EMBED_REPORT])
    }

    fn topics(&mut self) -> Result<Vec<&'static str>> {
        let store = EmbeddingStore::read(&self.path(EMBEDDINGS))?;
        let fitted = fit_topics(&store, &self.config.topics)?;
        let model = assign_documents(&fitted, &store, &self.config.topics)?;
        self.write_json(TOPICS, &model)?;
        let mut w = self.create(DOC_TOPIC)?;
        model.write_doc_topic_csv(&mut w)?;
        self.finish(DOC_TOPIC, w)?;
        model.centroid_store().save(&self.path(CENTROIDS))?;
        Ok(vec![TOPICS, DOC_TOPIC, CENTROIDS])
    }

    fn graph(&mut self) -> Result<Vec<&'static str>> {
        let corpus = load_corpus(&self.dir)?;
        let topics: TopicModel = read_json(&self.path(TOPICS))?;
        let params = self.config.graph_params();
        let (nodes, _) = fit_term_nodes(&corpus, &topics, &params)?;
        let graph = build_graph(nodes, &params)?;
        self.write_json(GRAPH, &graph)?;
        self.write_json(EDGES, &graph.edge_list_json())?;
        let mut w = self.create(GRAPHML)?;
        graph.write_graphml(&mut w).map_err(|e| Error::io(self.path(GRAPHML), e))?;
        self.finish(GRAPHML, w)?;
        let mut w = self.create(DIVERGENCE)?;
        graph.write_divergence_csv(&mut w)?;
        self.finish(DIVERGENCE, w)?;
        Ok(vec![GRAPH, EDGES, GRAPHML, DIVERGENCE])
    }

    fn train(&mut self) -> Result<Vec<&'static str>> {
        let graph: TermGraph = read_json(&self.path(GRAPH))?;
        let walks = generate_walks(&WalkGraph::from_term_graph(&graph), &self.config.walk_config())?;
        let mut w = self.create(WALKS)?;
        walks.write(&mut w).map_err(|e| Error::io(self.path(WALKS), e))?;
        self.finish(WALKS, w)?;
        let (store, report) = train_sgns(&walks, &self.config.sgns_config())?;
        let mut w = self.create(NODE_VECTORS)?;
        store.write_input(&mut w).map_err(|e| Error::io(self.path(NODE_VECTORS), e))?;
        self.finish(NODE_VECTORS, w)?;
        let mut w = self.create(NODE_CONTEXT_VECTORS)?;
        store
            .write_output(&mut w)
            .map_err(|e| Error::io(self.path(NODE_CONTEXT_VECTORS), e))?;
        self.finish(NODE_CONTEXT_VECTORS, w)?;
        self.write_json(
            TRAIN_REPORT,
            &serde_json::json!({ "walks": walks.report, "training": report }),
        )?;
        Ok(vec![WALKS, NODE_VECTORS, NODE_CONTEXT_VECTORS, TRAIN_REPORT])
    }

    fn hypergraph(&mut self) -> Result<Vec<&'static str>> {
        let graph: TermGraph = read_json(&self.path(GRAPH))?;
        let store = load_node_embeddings(&self.dir)?;
        let h = build_hypergraph(&graph, &store, &self.config.hypergraph)?;
        self.write_json(HYPERGRAPH, &h)?;
        self.write_json(HYPEREDGES, &h.hyperedges_json())?;
        let mut w = self.create(MEMBERSHIPS)?;
        h.write_membership_csv(&mut w)?;
        self.finish(MEMBERSHIPS, w)?;
        let mut w = self.create(INCIDENCE)?;
        h.write_incidence_csv(&mut w)?;
        self.finish(INCIDENCE, w)?;
        Ok(vec![HYPERGRAPH, HYPEREDGES, MEMBERSHIPS, INCIDENCE])
    }

    fn stats(&mut self) -> Result<Vec<&'static str>> {
        let corpus = load_corpus(&self.dir)?;
        let topics: TopicModel = read_json(&self.path(TOPICS))?;
        let timelines = stats::term_frequencies(&corpus);
        let tasks = stats::innovation_curve(&timelines, TermKind::Task);
        let constructs = stats::innovation_curve(&timelines, TermKind::Construct);
        let lags = stats::operationalization_lag(&timelines);
        let tpp = stats::tasks_per_paper(&corpus);
        let by_year = stats::tasks_per_paper_by_year(&corpus);
        let profiles = stats::discipline_profiles(&corpus, &topics, &self.config.graph_params());

        macro_rules! csv_out {
            ($name:expr, $f:expr) => {{
                let mut w = self.create($name)?;
                $f(&mut w)?;
                self.finish($name, w)?;
            }};
        }
        csv_out!(TIMELINES, |w: &mut BufWriter<File>| stats::write_timelines_csv(&timelines, w));
        csv_out!(INNOVATION, |w: &mut BufWriter<File>| stats::write_innovation_csv(
            &[(TermKind::Construct, &constructs), (TermKind::Task, &tasks)],
            w
        ));
        csv_out!(LAGS, |w: &mut BufWriter<File>| stats::write_lags_csv(&timelines, &lags, w));
        csv_out!(TASKS_PER_PAPER, |w: &mut BufWriter<File>| stats::write_histogram_csv(&tpp, w));
        csv_out!(TASKS_BY_YEAR, |w: &mut BufWriter<File>| stats::write_tasks_by_year_csv(&by_year, w));
        csv_out!(DISCIPLINES, |w: &mut BufWriter<File>| stats::write_discipline_csv(&profiles, w));
        csv_out!(DISCIPLINE_OVERLAP, |w: &mut BufWriter<File>| stats::write_overlap_csv(&profiles, w));
        self.write_json(
            STATS,
            &serde_json::json!({
                "documents": corpus.len(),
                "mean_lag": lags.mean,
                "never_cooccurring": lags.never_cooccurring,
                "multi_task_share": tpp.multi_task_share,
                "skipped_disciplines": profiles.skipped,
            }),
        )?;
        Ok(vec![
            TIMELINES,
            INNOVATION,
            LAGS,
            TASKS_PER_PAPER,
            TASKS_BY_YEAR,
            DISCIPLINES,
            DISCIPLINE_OVERLAP,
            STATS,
        ])
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Pruned corpus and lexicon written by `ingest`.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let lexicon = Lexicon::load(&dir.join(LEXICON))?;
    let (corpus, _) = ingest_jsonl(&dir.join(CORPUS), &lexicon)?;
    Ok(corpus)
}

pub fn load_node_embeddings(dir: &Path) -> Result<NodeEmbeddingStore> {
    let read = |name: &str| -> Result<_> {
        let p = dir.join(name);
        let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
        Ok(NodeEmbeddingStore::read_word2vec(
            std::io::BufReader::new(f),
            &p.display().to_string(),
        )?)
    };
    Ok(NodeEmbeddingStore::from_tables(read(NODE_VECTORS)?, read(NODE_CONTEXT_VECTORS)?)?)
}

/// Read-only view of a finished output directory for answering queries.
pub struct Artifacts {
    pub lexicon: Lexicon,
    pub graph: TermGraph,
    pub embeddings: NodeEmbeddingStore,
    pub hypergraph: Hypergraph,
}

impl Artifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        for needed in [Stage::Ingest, Stage::Graph, Stage::Train, Stage::Hypergraph] {
            if !manifest.stages.contains_key(&needed) {
                return Err(PipelineError::MissingUpstream {
                    stage: Stage::Hypergraph,
                    upstream: needed,
                }
                .into());
            }
        }
        Ok(Artifacts {
            lexicon: Lexicon::load(&dir.join(LEXICON))?,
            graph: read_json(&dir.join(GRAPH))?,
            embeddings: load_node_embeddings(dir)?,
            hypergraph: read_json(&dir.join(HYPERGRAPH))?,
        })
    }

    pub fn resolve(&self, text: &str) -> Result<TermId, QueryError> {
        query::resolve_term(text, &self.lexicon)
    }

    pub fn query(&self, text: &str, top_k: usize) -> Result<(Query, Vec<Scored>), QueryError> {
        let mut q = query::parse_query(text, &self.lexicon)?;
        q.top_k = top_k;
        let results = query::recommend_tasks(&q, &self.embeddings, &self.lexicon)?;
        Ok((q, results))
    }

    pub fn battery(&self, constructs: &[&str]) -> Result<Battery, QueryError> {
        let ids: Vec<TermId> = constructs
            .iter()
            .map(|c| self.resolve(c))
            .collect::<Result<_, _>>()?;
        for id in &ids {
            if self.lexicon.kind_of(id) != Some(TermKind::Construct) {
                return Err(QueryError::WrongKind {
                    id: id.clone(),
                    expected: "construct",
                    actual: "task",
                });
            }
        }
        query::build_battery(&ids, &self.hypergraph, &self.graph)
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64, QueryError> {
        query::task_distance(&self.resolve(a)?, &self.resolve(b)?, &self.graph)
    }

    pub fn nearest(&self, task: &str, k: usize) -> Result<Vec<Scored>, QueryError> {
        query::nearest_tasks(&self.resolve(task)?, k, &self.graph)
    }
}

/// Artifact files that `export` can copy out, by name.
pub const EXPORTS: [(&str, &str); 9] = [
    ("graphml", GRAPHML),
    ("graph-json", GRAPH),
    ("edges-json", EDGES),
    ("divergence-csv", DIVERGENCE),
    ("embeddings", NODE_VECTORS),
    ("walks", WALKS),
    ("hypergraph-json", HYPEREDGES),
    ("memberships-csv", MEMBERSHIPS),
    ("incidence-csv", INCIDENCE),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn output_dir_not_hashed() {
        let mut a = RunConfig::default();
        a.paths.output_dir = Some("/tmp/a".into());
        let mut b = a.clone();
        b.paths.output_dir = Some("/tmp/b".into());
        assert_eq!(serde_json::to_value(&a).unwrap(), serde_json::to_value(&b).unwrap());
    }

    #[test]
    fn stage_seeds_are_independent() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seeds.sgns = Some(99);
        for s in Stage::ALL {
            let same = a.stage_config(s) == b.stage_config(s);
            assert_eq!(same, s != Stage::Train, "{s}");
        }
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"sede": 3}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Pipeline(PipelineError::Config(_)))));
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let first = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(Error::Pipeline(PipelineError::Locked(_)))));
        drop(first);
        DirLock::acquire(dir.path()).unwrap();
    }
}
