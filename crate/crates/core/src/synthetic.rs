//! Synthetic fixtures with planted structure.
//!
//! Used by tests, benchmarks and the acceptance suite to check that the
//! pipeline recovers structure that is known in advance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::corpus::{Corpus, Document, Lexicon, LexiconTerm, TermId, TermKind};
use crate::embed::{normalize, EmbeddingStore};

pub struct PlantedBlobs {
    pub store: EmbeddingStore,
    /// Unit-norm blob centres.
    pub blob_means: Vec<Vec<f64>>,
    /// Planted blob of each document, keyed by id.
    pub labels: BTreeMap<String, usize>,
    pub outlier_ids: Vec<String>,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    normalize(&mut v);
    v
}

/// Unit vectors in `n_blobs` tight groups (cosine to the group centre about
/// 0.95) plus `n_outliers` uniformly random unit vectors.
pub fn planted_blob_store(
    seed: u64,
    n_blobs: usize,
    per_blob: usize,
    dim: usize,
    n_outliers: usize,
) -> PlantedBlobs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blob_means: Vec<Vec<f64>> = (0..n_blobs).map(|_| unit_gaussian(&mut rng, dim)).collect();
    let spread = 0.33 / (dim as f64).sqrt();
    let mut store = EmbeddingStore::new(dim);
    let mut labels = BTreeMap::new();
    for (b, mean) in blob_means.iter().enumerate() {
        for i in 0..per_blob {
            let mut v: Vec<f64> = mean
                .iter()
                .map(|m| m + spread * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            normalize(&mut v);
            let id = format!("b{b}_{i:04}");
            store.insert(&id, &v).expect("dimension");
            labels.insert(id, b);
        }
    }
    let mut outlier_ids = Vec::new();
    for i in 0..n_outliers {
        let id = format!("o{i:04}");
        store.insert(&id, &unit_gaussian(&mut rng, dim)).expect("dimension");
        outlier_ids.push(id);
    }
    PlantedBlobs {
        store,
        blob_means,
        labels,
        outlier_ids,
    }
}

pub struct PlantedCorpus {
    pub corpus: Corpus,
    /// Planted community of every term.
    pub community: BTreeMap<TermId, usize>,
}

impl PlantedCorpus {
    pub fn construct_id(k: usize) -> TermId {
        TermId::new(format!("c{k}"))
    }

    pub fn task_id(k: usize, j: usize) -> TermId {
        TermId::new(format!("t{k}_{j}"))
    }

    /// Writes `lexicon.json` and `corpus.jsonl` into `dir`.
    pub fn write_files(&self, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        let lex = dir.join("lexicon.json");
        let docs = dir.join("corpus.jsonl");
        std::fs::write(&lex, self.corpus.lexicon.to_json())?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&docs)?);
        self.corpus.write_jsonl(&mut w)?;
        w.flush()?;
        Ok((lex, docs))
    }

    pub fn tasks_of(&self, k: usize) -> BTreeSet<TermId> {
        self.community
            .iter()
            .filter(|(id, c)| **c == k && id.as_str().starts_with('t'))
            .map(|(id, _)| id.clone())
            .collect()
    }
}

const JOURNALS: [&str; 4] = [
    "Journal of Social Psychology",
    "Psychological Science",
    "Journal of Neuroscience",
    "Cognitive Science",
];

/// A corpus with `n_communities` groups of one construct and
/// `tasks_per_community` tasks.
///
/// Every term is the primary label of `docs_per_term` documents; a quarter
/// of those also carry a second term from the same community. Document text
/// draws most tokens from a community vocabulary and a few from a shared
/// one, so a token-summing embedder separates communities cleanly.
pub fn planted_corpus(
    seed: u64,
    n_communities: usize,
    tasks_per_community: usize,
    docs_per_term: usize,
) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    let mut community = BTreeMap::new();
    for k in 0..n_communities {
        let c = PlantedCorpus::construct_id(k);
        terms.push(LexiconTerm {
            id: c.clone(),
            name: format!("Construct {k}"),
            kind: TermKind::Construct,
            queries: vec![format!("construct {k}")],
        });
        community.insert(c, k);
        for j in 0..tasks_per_community {
            let t = PlantedCorpus::task_id(k, j);
            terms.push(LexiconTerm {
                id: t.clone(),
                name: format!("Task {k} {j}"),
                kind: TermKind::Task,
                queries: vec![format!("task {k} {j}")],
            });
            community.insert(t, k);
        }
    }
    let lexicon = Lexicon::from_terms(terms).expect("planted lexicon is valid");

    let mut documents = BTreeMap::new();
    let mut serial = 0usize;
    for (term, &k) in &community {
        let peers: Vec<&TermId> = community
            .iter()
            .filter(|(other, c)| **c == k && *other != term)
            .map(|(id, _)| id)
            .collect();
        for _ in 0..docs_per_term {
            let mut labels = BTreeSet::from([term.clone()]);
            if rng.gen_bool(0.25) {
                if let Some(p) = peers.choose(&mut rng) {
                    labels.insert((*p).clone());
                }
            }
            let mut tokens: Vec<String> =
                (0..10).map(|_| format!("k{k}w{}", rng.gen_range(0..24))).collect();
            tokens.extend((0..3).map(|_| format!("shared{}", rng.gen_range(0..40))));
            let doc_id = format!("{serial:06}");
            serial += 1;
            documents.insert(
                doc_id.clone(),
                Document {
                    doc_id,
                    title: format!("study {serial}"),
                    abstract_text: tokens.join(" "),
                    year: Some(1980 + rng.gen_range(0..40)),
                    journal: JOURNALS[rng.gen_range(0..JOURNALS.len())].to_string(),
                    labels,
                },
            );
        }
    }
    PlantedCorpus {
        corpus: Corpus { documents, lexicon },
        community,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cosine;

    #[test]
    fn blobs_are_tight() {
        let fx = planted_blob_store(3, 2, 10, 32, 4);
        assert_eq!(fx.store.len(), 24);
        for (id, v) in fx.store.iter() {
            if let Some(&b) = fx.labels.get(id) {
                assert!(cosine(v, &fx.blob_means[b]) > 0.85);
            }
        }
    }

    #[test]
    fn planted_corpus_shape() {
        let fx = planted_corpus(1, 3, 5, 40);
        assert_eq!(fx.corpus.lexicon.counts(), (15, 3));
        assert_eq!(fx.corpus.len(), 18 * 40);
        for (term, n) in fx.corpus.term_support() {
            assert!(n >= 40, "{term}: {n}");
        }
        for doc in fx.corpus.documents.values() {
            let ks: BTreeSet<usize> = doc.labels.iter().map(|l| fx.community[l]).collect();
            assert_eq!(ks.len(), 1);
        }
        assert_eq!(fx.tasks_of(2).len(), 5);
    }
}
