use thiserror::Error;

use crate::cluster::ClusterError;
use crate::corpus::CorpusError;
use crate::embed::EmbedError;
use crate::graph::GraphError;
use crate::hypergraph::HypergraphError;
use crate::metapath::MetapathError;
use crate::pipeline::PipelineError;
use crate::pubmed::PubmedError;
use crate::query::QueryError;
use crate::topics::TopicError;

/// Any error produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pubmed(#[from] PubmedError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metapath(#[from] MetapathError),
    #[error(transparent)]
    Hypergraph(#[from] HypergraphError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable category, used in CLI and FFI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Corpus(_) => "corpus",
            Error::Pubmed(_) => "pubmed",
            Error::Embed(_) => "embed",
            Error::Cluster(_) => "cluster",
            Error::Topic(_) => "topics",
            Error::Graph(_) => "graph",
            Error::Metapath(_) => "metapath",
            Error::Hypergraph(_) => "hypergraph",
            Error::Query(_) => "query",
            Error::Pipeline(_) => "pipeline",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
