//! Document embeddings behind a pluggable provider.
//!
//! Providers receive the raw document text and return one vector per
//! document. Every vector entering an [`EmbeddingStore`] is L2-normalized.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::hash::derive_seed;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("provider returned dimension {got} for {doc_id}, declared {expected}")]
    DimensionMismatch {
        doc_id: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding file {path}: line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension must be at least 2, got {0}")]
    BadDimension(usize),
}

/// Per-document provider failure.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum ProviderError {
    #[error("no embedding available for {0}")]
    Missing(String),
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("non-finite value in embedding for {0}")]
    NonFinite(String),
}

impl ProviderError {
    pub fn retryable(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

pub trait EmbeddingProvider: Sync {
    /// Declared output dimension.
    fn dim(&self) -> usize;

    /// Embeds a batch; one result per input document, in order.
    fn embed_batch(&self, docs: &[&Document]) -> Vec<Result<Vec<f64>, ProviderError>>;
}

/// Deterministic pseudo-embedding: a seeded hash of `text` seeds a PRNG that
/// draws `dim` standard normals, which are then L2-normalized.
pub fn mock_embed(text: &str, seed: u64, dim: usize) -> Vec<f64> {
    assert!(dim >= 2, "mock_embed needs dim >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"mock", text.as_bytes()]));
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    v
}

/// Scales `v` to unit L2 norm; returns the original norm. Zero vectors are
/// left untouched.
pub fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Hashes the whole document text with [`mock_embed`].
#[derive(Clone, Debug)]
pub struct MockProvider {
    pub seed: u64,
    pub dim: usize,
}

impl EmbeddingProvider for MockProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, docs: &[&Document]) -> Vec<Result<Vec<f64>, ProviderError>> {
        docs.iter()
            .map(|d| Ok(mock_embed(&d.text(), self.seed, self.dim)))
            .collect()
    }
}

/// Sums [`mock_embed`] vectors of whitespace-separated tokens, so documents
/// sharing vocabulary land close together. Useful for synthetic corpora that
/// need semantic structure without a language model.
#[derive(Clone, Debug)]
pub struct TokenMockProvider {
    pub seed: u64,
    pub dim: usize,
}

impl EmbeddingProvider for TokenMockProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, docs: &[&Document]) -> Vec<Result<Vec<f64>, ProviderError>> {
        let mut cache: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        docs.iter()
            .map(|d| {
                let text = d.text();
                let mut acc = vec![0.0; self.dim];
                for token in text.split_whitespace() {
                    let v = cache
                        .entry(token.to_string())
                        .or_insert_with(|| mock_embed(token, self.seed, self.dim));
                    acc.iter_mut().zip(v.iter()).for_each(|(a, x)| *a += x);
                }
                if acc.iter().all(|x| *x == 0.0) {
                    return Ok(mock_embed(&text, self.seed, self.dim));
                }
                Ok(acc)
            })
            .collect()
    }
}

/// Serves vectors from a precomputed embedding file.
pub struct FileProvider {
    store: EmbeddingStore,
}

impl FileProvider {
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        Ok(FileProvider {
            store: EmbeddingStore::read(path)?,
        })
    }

    pub fn from_store(store: EmbeddingStore) -> Self {
        FileProvider { store }
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.store.dim
    }

    fn embed_batch(&self, docs: &[&Document]) -> Vec<Result<Vec<f64>, ProviderError>> {
        docs.iter()
            .map(|d| {
                self.store
                    .get(&d.doc_id)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| ProviderError::Missing(d.doc_id.clone()))
            })
            .collect()
    }
}

/// Document vectors keyed by `doc_id`, all of one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    index: BTreeMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Appends a vector; replaces an existing entry with the same id.
    pub fn insert(&mut self, doc_id: &str, vector: &[f64]) -> Result<(), EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                doc_id: doc_id.to_string(),
                expected: self.dim,
                got: vector.len(),
            });
        }
        match self.index.get(doc_id) {
            Some(&i) => self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(doc_id.to_string(), self.ids.len());
                self.ids.push(doc_id.to_string());
                self.data.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&[f64]> {
        self.index
            .get(doc_id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// `dim=<D> count=<N>` header, then `doc_id<TAB>v1 v2 ... vD` per line.
    /// Values use the shortest round-tripping decimal form.
    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "dim={} count={}", self.dim, self.len())?;
        for (id, v) in self.iter() {
            write!(out, "{id}\t")?;
            write_vector(&mut out, v)?;
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let file = std::fs::File::create(path).map_err(|e| EmbedError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| EmbedError::Io {
                path: path.display().to_string(),
                source: e,
            })
    }

    pub fn read(path: &Path) -> Result<Self, EmbedError> {
        let file = std::fs::File::open(path).map_err(|e| EmbedError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(BufReader::new(file), &path.display().to_string())
    }

    pub fn parse(reader: impl BufRead, origin: &str) -> Result<Self, EmbedError> {
        let fmt_err = |line: usize, message: String| EmbedError::Format {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| fmt_err(1, "missing header".into()))?
            .map_err(|e| fmt_err(1, e.to_string()))?;
        let (dim, count) = parse_header(&header).ok_or_else(|| {
            fmt_err(1, format!("expected `dim=<D> count=<N>`, got {header:?}"))
        })?;
        let mut store = EmbeddingStore::new(dim);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| fmt_err(lineno, e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| fmt_err(lineno, "missing tab separator".into()))?;
            let values: Vec<f64> = rest
                .split(' ')
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| fmt_err(lineno, e.to_string()))?;
            if values.len() != dim {
                return Err(fmt_err(
                    lineno,
                    format!("expected {dim} values, got {}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(fmt_err(lineno, "non-finite value".into()));
            }
            store.insert(id, &values)?;
        }
        if store.len() != count {
            return Err(fmt_err(
                0,
                format!("header declares {count} rows, found {}", store.len()),
            ));
        }
        Ok(store)
    }
}

fn parse_header(header: &str) -> Option<(usize, usize)> {
    let mut dim = None;
    let mut count = None;
    for part in header.split_whitespace() {
        let (k, v) = part.split_once('=')?;
        match k {
            "dim" => dim = v.parse().ok(),
            "count" => count = v.parse().ok(),
            _ => return None,
        }
    }
    Some((dim?, count?))
}

pub(crate) fn write_vector(out: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    for (j, x) in v.iter().enumerate() {
        if j > 0 {
            out.write_all(b" ")?;
        }
        write!(out, "{x:?}")?;
    }
    Ok(())
}

/// Outcome of [`embed_corpus`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbedReport {
    /// Documents excluded downstream because the provider failed.
    pub missing: Vec<(String, ProviderError)>,
}

#[derive(Clone, Debug)]
pub struct EmbedOptions {
    pub batch_size: usize,
    /// Extra attempts for retryable provider failures.
    pub retries: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            batch_size: 64,
            retries: 2,
        }
    }
}

/// Embeds every document of `corpus`.
///
/// Batches fan out across threads; results are assembled in `doc_id` order.
/// A document whose provider call keeps failing is recorded as missing and
/// left out of the store rather than zero-filled.
pub fn embed_corpus(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    opts: &EmbedOptions,
) -> Result<(EmbeddingStore, EmbedReport), EmbedError> {
    if corpus.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let dim = provider.dim();
    if dim < 2 {
        return Err(EmbedError::BadDimension(dim));
    }
    let docs: Vec<&Document> = corpus.documents.values().collect();
    let batches: Vec<Vec<(String, Result<Vec<f64>, ProviderError>)>> = docs
        .par_chunks(opts.batch_size.max(1))
        .map(|chunk| embed_with_retry(provider, chunk, opts.retries))
        .collect();

    let mut store = EmbeddingStore::new(dim);
    let mut report = EmbedReport::default();
    for (doc_id, result) in batches.into_iter().flatten() {
        match result {
            Ok(mut v) => {
                if v.len() != dim {
                    return Err(EmbedError::DimensionMismatch {
                        doc_id,
                        expected: dim,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) || normalize(&mut v) == 0.0 {
                    report.missing.push((doc_id.clone(), ProviderError::NonFinite(doc_id)));
                    continue;
                }
                store.insert(&doc_id, &v)?;
            }
            Err(e) => report.missing.push((doc_id, e)),
        }
    }
    if !report.missing.is_empty() {
        log::warn!("embed: {} documents without embeddings", report.missing.len());
    }
    Ok((store, report))
}

fn embed_with_retry(
    provider: &dyn EmbeddingProvider,
    chunk: &[&Document],
    retries: usize,
) -> Vec<(String, Result<Vec<f64>, ProviderError>)> {
    let mut results = provider.embed_batch(chunk);
    for _ in 0..retries {
        let pending: Vec<usize> = results
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, Err(e) if e.retryable()))
            .map(|(i, _)| i)
            .collect();
        if pending.is_empty() {
            break;
        }
        let again: Vec<&Document> = pending.iter().map(|&i| chunk[i]).collect();
        for (i, r) in pending.into_iter().zip(provider.embed_batch(&again)) {
            results[i] = r;
        }
    }
    chunk
        .iter()
        .zip(results)
        .map(|(d, r)| (d.doc_id.clone(), r))
        .collect()
}
