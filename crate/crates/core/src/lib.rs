//! Task-construct graph engine.
//!
//! Turns a loosely labeled corpus of scientific abstracts into a joint
//! task-construct graph embedding and an overlapping hypergraph, and answers
//! queries over the result: task recommendation by embedding arithmetic,
//! task batteries covering a set of constructs, task-task divergences and
//! bibliometric statistics.
//!
//! Pipeline stages, in order:
//!
//! 1. [`corpus`] / [`pubmed`]: lexicon, document ingestion, rare-term pruning.
//! 2. [`embed`]: document vectors from a pluggable provider.
//! 3. [`topics`]: density clustering ([`cluster`]) of the document vectors into
//!    topics and soft assignment of documents to topics.
//! 4. [`graph`]: one Gaussian per term over its documents' topic rows, pairwise
//!    Jensen-Shannon divergences, inverse-divergence edge weights.
//! 5. [`metapath`]: kind-alternating random walks plus skip-gram training.
//! 6. [`hypergraph`]: tasks as nodes, constructs as overlapping hyperedges.
//! 7. [`query`] and [`stats`]: read-only consumers of the artifacts.
//!
//! [`pipeline`] ties the stages together behind a manifest of content hashes.

pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod graph;
pub mod hash;
pub mod hypergraph;
pub mod metapath;
pub mod metrics;
pub mod pipeline;
pub mod pubmed;
pub mod query;
pub mod stats;
pub mod synthetic;
pub mod topics;

pub use corpus::{Corpus, Document, Lexicon, LexiconTerm, TermId, TermKind};
pub use error::{Error, Result};
