//! Topic space over document embeddings.
//!
//! Documents are (optionally) projected onto their leading principal
//! components, clustered with [`crate::cluster`], and each cluster becomes a
//! topic whose centroid is the re-normalized mean of its members in the
//! original space. Assignment is a softmax over centroid cosines; documents
//! without a confident topic are set aside as outliers.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use thiserror::Error;

use crate::cluster::{self, ClusterError, ClusterParams};
use crate::embed::{normalize, EmbeddingStore};
use crate::metrics::cosine;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("topic fitting needs at least {needed} documents, got {got}")]
    TooFewDocuments { needed: usize, got: usize },
    #[error("every document was labelled noise ({n} documents, min_cluster_size {min_cluster_size}); lower the clustering parameters")]
    AllNoise { n: usize, min_cluster_size: usize },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("embedding store dimension {got} does not match topic model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicParams {
    pub cluster: ClusterParams,
    /// Principal components kept before clustering; `None` clusters in the
    /// full embedding space.
    pub reduce_dim: Option<usize>,
    pub temperature: f64,
    /// Documents whose largest topic probability is below this are outliers.
    pub outlier_threshold: f64,
    /// Documents the clustering called noise are kept only if their best
    /// centroid cosine reaches this value.
    pub recovery_cosine: f64,
    /// Every document whose best centroid cosine, in the original space, is
    /// below this is an outlier. Low-dimensional projections can fold
    /// isolated documents into clusters, so the clustering alone misses them.
    pub min_centroid_cosine: f64,
    /// Topics judged irrelevant; documents whose best topic is listed here
    /// become outliers.
    pub exclude_topics: Vec<usize>,
}

impl Default for TopicParams {
    fn default() -> Self {
        TopicParams {
            cluster: ClusterParams::default(),
            reduce_dim: Some(5),
            temperature: 0.1,
            outlier_threshold: 0.5,
            recovery_cosine: 0.5,
            min_centroid_cosine: 0.3,
            exclude_topics: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub dim: usize,
    /// T unit-norm centroids in the embedding space.
    pub centroids: Vec<Vec<f64>>,
    /// Documents the clustering labelled noise.
    pub fit_noise: Vec<String>,
    /// Row ids of `doc_topic`.
    pub doc_ids: Vec<String>,
    /// Row-stochastic document-topic probabilities, one row per `doc_ids`.
    pub doc_topic: Vec<Vec<f64>>,
    pub kept_docs: Vec<String>,
    pub outliers: Vec<String>,
}

impl TopicModel {
    pub fn n_topics(&self) -> usize {
        self.centroids.len()
    }

    /// Topic row of a kept document.
    pub fn kept_row(&self, doc_id: &str) -> Option<&[f64]> {
        let i = self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()?;
        self.kept_docs
            .binary_search_by(|d| d.as_str().cmp(doc_id))
            .ok()
            .map(|_| self.doc_topic[i].as_slice())
    }

    /// CSV with a `doc_id` column followed by one column per topic id.
    pub fn write_doc_topic_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["doc_id".to_string()];
        header.extend((0..self.n_topics()).map(|t| t.to_string()));
        w.write_record(&header)?;
        for (id, row) in self.doc_ids.iter().zip(&self.doc_topic) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn centroid_store(&self) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(self.dim);
        for (t, c) in self.centroids.iter().enumerate() {
            s.insert(&format!("topic_{t}"), c).expect("centroid dimension");
        }
        s
    }
}

/// Projection of `rows` onto their leading `k` principal components.
///
/// Component signs are fixed so the largest-magnitude loading is positive,
/// which makes the projection deterministic.
pub fn principal_components(rows: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return rows.to_vec();
    }
    let k = k.min(d).max(1);
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    let cov = (centered.transpose() * &centered) / denom;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut basis = DMatrix::zeros(d, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            basis[(r, c)] = sign * v[r];
        }
    }
    let projected = centered * basis;
    (0..n)
        .map(|i| projected.row(i).iter().copied().collect())
        .collect()
}

/// Clusters the store's vectors into topics.
pub fn fit_topics(store: &EmbeddingStore, params: &TopicParams) -> Result<TopicModel, TopicError> {
    let needed = 2 * params.cluster.min_cluster_size;
    if store.len() < needed {
        return Err(TopicError::TooFewDocuments {
            needed,
            got: store.len(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..store.len()).map(|i| store.row(i).to_vec()).collect();
    let space = match params.reduce_dim {
        Some(k) => principal_components(&rows, k),
        None => rows.clone(),
    };
    let model = cluster::fit(&space, &params.cluster)?;
    if model.n_clusters() == 0 || model.noise_count() == store.len() {
        return Err(TopicError::AllNoise {
            n: store.len(),
            min_cluster_size: params.cluster.min_cluster_size,
        });
    }
    let mut centroids = vec![vec![0.0; store.dim]; model.n_clusters()];
    for (row, label) in rows.iter().zip(&model.labels) {
        if let Some(t) = label {
            centroids[*t].iter_mut().zip(row).for_each(|(c, x)| *c += x);
        }
    }
    for c in &mut centroids {
        normalize(c);
    }
    let fit_noise = store
        .ids()
        .iter()
        .zip(&model.labels)
        .filter(|(_, l)| l.is_none())
        .map(|(id, _)| id.clone())
        .collect();
    log::info!(
        "topics: {} topics from {} documents ({} noise)",
        centroids.len(),
        store.len(),
        model.noise_count()
    );
    Ok(TopicModel {
        dim: store.dim,
        centroids,
        fit_noise,
        doc_ids: Vec::new(),
        doc_topic: Vec::new(),
        kept_docs: Vec::new(),
        outliers: Vec::new(),
    })
}

/// Softmax of `cosine(doc, centroid_j) / temperature` over topics.
pub fn topic_probabilities(doc: &[f64], centroids: &[Vec<f64>], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = centroids.iter().map(|c| cosine(doc, c) / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.iter().map(|e| e / total).collect()
}

/// Soft-assigns every document in `store` and splits kept docs from outliers.
///
/// A document is kept when its largest probability is at least
/// `params.outlier_threshold`, its best topic is not excluded, and, if the
/// clustering called it noise, its best centroid cosine reaches
/// `params.recovery_cosine`. Any document whose best centroid cosine is
/// below `params.min_centroid_cosine` is an outlier.
pub fn assign_documents(
    model: &TopicModel,
    store: &EmbeddingStore,
    params: &TopicParams,
) -> Result<TopicModel, TopicError> {
    if store.dim != model.dim {
        return Err(TopicError::DimensionMismatch {
            expected: model.dim,
            got: store.dim,
        });
    }
    if !(params.temperature > 0.0) {
        return Err(TopicError::BadTemperature(params.temperature));
    }
    let noise: BTreeSet<&str> = model.fit_noise.iter().map(String::as_str).collect();
    let excluded: BTreeSet<usize> = params.exclude_topics.iter().copied().collect();
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.sort_by(|&a, &b| store.ids()[a].cmp(&store.ids()[b]));

    let assigned: Vec<(Vec<f64>, bool)> = order
        .par_iter()
        .map(|&i| {
            let v = store.row(i);
            let probs = topic_probabilities(v, &model.centroids, params.temperature);
            let (best, best_p) = argmax(&probs);
            let best_cos = model
                .centroids
                .iter()
                .map(|c| cosine(v, c))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut keep = best_p >= params.outlier_threshold
                && !excluded.contains(&best)
                && best_cos >= params.min_centroid_cosine;
            if keep && noise.contains(store.ids()[i].as_str()) {
                keep = best_cos >= params.recovery_cosine;
            }
            (probs, keep)
        })
        .collect();

    let mut out = model.clone();
    out.doc_ids = order.iter().map(|&i| store.ids()[i].clone()).collect();
    out.doc_topic = Vec::with_capacity(order.len());
    out.kept_docs.clear();
    out.outliers.clear();
    for (id, (probs, keep)) in out.doc_ids.iter().zip(assigned) {
        if keep {
            out.kept_docs.push(id.clone());
        } else {
            out.outliers.push(id.clone());
        }
        out.doc_topic.push(probs);
    }
    log::info!(
        "topics: kept {} documents, {} outliers",
        out.kept_docs.len(),
        out.outliers.len()
    );
    Ok(out)
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Metric;
    use crate::embed::mock_embed;
    use crate::synthetic::planted_blob_store;
    use proptest::prelude::*;

    fn one_hot_model(centroids: Vec<Vec<f64>>) -> TopicModel {
        TopicModel {
            dim: centroids[0].len(),
            centroids,
            fit_noise: Vec::new(),
            doc_ids: Vec::new(),
            doc_topic: Vec::new(),
            kept_docs: Vec::new(),
            outliers: Vec::new(),
        }
    }

    fn params() -> TopicParams {
        TopicParams {
            cluster: ClusterParams {
                min_samples: 5,
                min_cluster_size: 15,
                metric: Metric::Cosine,
            },
            ..TopicParams::default()
        }
    }

    #[test]
    fn planted_blobs_give_three_topics() {
        let fx = planted_blob_store(11, 3, 40, 64, 0);
        let model = fit_topics(&fx.store, &params()).unwrap();
        assert_eq!(model.n_topics(), 3);
        for mean in &fx.blob_means {
            let best = model
                .centroids
                .iter()
                .map(|c| cosine(c, mean))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(best > 0.99, "best centroid cosine {best}");
        }
    }

    #[test]
    fn no_reduction_keeps_shape() {
        let fx = planted_blob_store(12, 3, 40, 32, 0);
        let p = TopicParams { reduce_dim: None, ..params() };
        let model = fit_topics(&fx.store, &p).unwrap();
        let assigned = assign_documents(&model, &fx.store, &p).unwrap();
        assert_eq!(assigned.doc_topic.len(), fx.store.len());
        assert!(assigned.doc_topic.iter().all(|r| r.len() == model.n_topics()));
    }

    #[test]
    fn too_few_documents() {
        let fx = planted_blob_store(1, 1, 10, 16, 0);
        assert!(matches!(
            fit_topics(&fx.store, &params()),
            Err(TopicError::TooFewDocuments { needed: 30, got: 10 })
        ));
    }

    #[test]
    fn near_zero_temperature_is_one_hot() {
        let c = vec![mock_embed("x", 1, 8), mock_embed("y", 1, 8)];
        let probs = topic_probabilities(&c[1], &c, 1e-3);
        assert!(probs[1] > 1.0 - 1e-12);
    }

    #[test]
    fn orthogonal_document_boundary() {
        let model = one_hot_model(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let mut store = EmbeddingStore::new(3);
        store.insert("doc", &[0.0, 0.0, 1.0]).unwrap();
        let half = TopicParams { outlier_threshold: 0.5, min_centroid_cosine: -1.0, ..params() };
        let a = assign_documents(&model, &store, &half).unwrap();
        assert_eq!(a.doc_topic[0], vec![0.5, 0.5]);
        assert_eq!(a.kept_docs, vec!["doc".to_string()]);
        let strict = TopicParams { outlier_threshold: 0.6, min_centroid_cosine: -1.0, ..params() };
        let b = assign_documents(&model, &store, &strict).unwrap();
        assert_eq!(b.outliers, vec!["doc".to_string()]);
    }

    #[test]
    fn excluded_topics_become_outliers() {
        let model = one_hot_model(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut store = EmbeddingStore::new(2);
        store.insert("a", &[1.0, 0.0]).unwrap();
        store.insert("b", &[0.0, 1.0]).unwrap();
        let p = TopicParams { exclude_topics: vec![1], ..params() };
        let a = assign_documents(&model, &store, &p).unwrap();
        assert_eq!(a.kept_docs, vec!["a".to_string()]);
        assert_eq!(a.outliers, vec!["b".to_string()]);
    }

    #[test]
    fn injected_outliers_are_flagged() {
        let fx = planted_blob_store(21, 3, 40, 64, 12);
        let model = fit_topics(&fx.store, &params()).unwrap();
        let a = assign_documents(&model, &fx.store, &params()).unwrap();
        let flagged: BTreeSet<&String> = a.outliers.iter().collect();
        let hits = fx.outlier_ids.iter().filter(|o| flagged.contains(o)).count();
        let recall = hits as f64 / fx.outlier_ids.len() as f64;
        assert!(recall >= 0.9, "outlier recall {recall}");
        // Planted documents stay.
        let lost = a.outliers.len() - hits;
        assert!(lost <= 2, "{lost} planted documents dropped");
    }

    #[test]
    fn permuting_documents_permutes_rows_only() {
        let fx = planted_blob_store(5, 3, 40, 32, 0);
        let mut reversed = EmbeddingStore::new(fx.store.dim);
        for i in (0..fx.store.len()).rev() {
            reversed.insert(&fx.store.ids()[i], fx.store.row(i)).unwrap();
        }
        let p = params();
        let a = assign_documents(&fit_topics(&fx.store, &p).unwrap(), &fx.store, &p).unwrap();
        let b = assign_documents(&fit_topics(&reversed, &p).unwrap(), &reversed, &p).unwrap();
        assert_eq!(a.n_topics(), b.n_topics());
        // Map topics of b onto a by best centroid match.
        let map: Vec<usize> = b
            .centroids
            .iter()
            .map(|cb| {
                (0..a.n_topics())
                    .max_by(|&i, &j| cosine(&a.centroids[i], cb).total_cmp(&cosine(&a.centroids[j], cb)))
                    .unwrap()
            })
            .collect();
        for (tb, &ta) in map.iter().enumerate() {
            assert!(cosine(&a.centroids[ta], &b.centroids[tb]) > 1.0 - 1e-12);
        }
        assert_eq!(a.doc_ids, b.doc_ids);
        for (ra, rb) in a.doc_topic.iter().zip(&b.doc_topic) {
            for (tb, &ta) in map.iter().enumerate() {
                assert!((ra[ta] - rb[tb]).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(
            docs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 1..30),
            temp in 0.01f64..2.0,
        ) {
            let model = one_hot_model(vec![
                vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.5, 0.5, 0.5, 0.5],
            ]);
            let mut store = EmbeddingStore::new(4);
            for (i, d) in docs.iter().enumerate() {
                store.insert(&format!("{i:03}"), d).unwrap();
            }
            let p = TopicParams { temperature: temp, ..params() };
            let a = assign_documents(&model, &store, &p).unwrap();
            for row in &a.doc_topic {
                prop_assert!(row.iter().all(|x| *x >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let kept: BTreeSet<_> = a.kept_docs.iter().collect();
            prop_assert!(a.outliers.iter().all(|o| !kept.contains(o)));
        }
    }
}
