//! Tasks as nodes, constructs as overlapping hyperedges.
//!
//! The complete term graph is thinned to its strongest edges, the node
//! embeddings are soft-clustered, and each construct gathers the tasks it
//! shares a strong edge with or whose cluster-membership profile resembles
//! its own.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use thiserror::Error;

use crate::cluster::{self, ClusterError, ClusterParams, Metric};
use crate::corpus::{TermId, TermKind};
use crate::graph::TermGraph;
use crate::metapath::NodeEmbeddingStore;
use crate::metrics::{cosine, median, sample_sd};

#[derive(Debug, Error)]
pub enum HypergraphError {
    #[error("thresholding needs at least 2 edges, got {0}")]
    TooFewEdges(usize),
    #[error("no edge survived thresholding (threshold {threshold:.4}); try band mode or inspect the weight distribution")]
    NoSurvivingEdges { threshold: f64 },
    #[error("term {0} has no node embedding")]
    MissingEmbedding(TermId),
    #[error("soft clustering labelled all {n} nodes noise; lower min_cluster_size or min_samples")]
    AllNoise { n: usize },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("unknown id {0}")]
    UnknownId(TermId),
    #[error("{id} is not a {expected}")]
    WrongKind { id: TermId, expected: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Keep edges heavier than median + SD.
    Strong,
    /// Keep edges farther than one SD from the median on either side.
    Band,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub median: f64,
    pub sd: f64,
    /// Indices of retained weights, ascending.
    pub kept: Vec<usize>,
    pub retention: f64,
}

/// Applies the median ± SD rule to `weights` (sample SD, n − 1).
/// A zero SD keeps every edge.
pub fn threshold_weights(weights: &[f64], mode: ThresholdMode) -> Result<Threshold, HypergraphError> {
    if weights.len() < 2 {
        return Err(HypergraphError::TooFewEdges(weights.len()));
    }
    let m = median(weights);
    let s = sample_sd(weights);
    let kept: Vec<usize> = if s == 0.0 {
        (0..weights.len()).collect()
    } else {
        weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| match mode {
                ThresholdMode::Strong => w > m + s,
                ThresholdMode::Band => (w - m).abs() > s,
            })
            .map(|(i, _)| i)
            .collect()
    };
    if kept.is_empty() {
        log::warn!("threshold: no edges retained (median {m}, sd {s})");
    }
    let retention = kept.len() as f64 / weights.len() as f64;
    Ok(Threshold {
        median: m,
        sd: s,
        kept,
        retention,
    })
}

/// Thresholds the edges of `graph`; `kept` indexes `graph.edges`.
pub fn threshold_edges(graph: &TermGraph, mode: ThresholdMode) -> Result<Threshold, HypergraphError> {
    let weights: Vec<f64> = graph.edges.iter().map(|e| e.weight).collect();
    threshold_weights(&weights, mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeSpace {
    /// Skip-gram input vectors.
    Embedding,
    /// Means of the per-term topic distributions.
    Topic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypergraphParams {
    pub cluster: ClusterParams,
    /// τ: membership-profile cosine that puts a task in a construct's
    /// hyperedge without a strong edge.
    pub membership_threshold: f64,
    pub threshold_mode: ThresholdMode,
    pub space: NodeSpace,
}

impl Default for HypergraphParams {
    fn default() -> Self {
        HypergraphParams {
            cluster: ClusterParams {
                min_samples: 3,
                min_cluster_size: 3,
                metric: Metric::Cosine,
            },
            membership_threshold: 0.7,
            threshold_mode: ThresholdMode::Strong,
            space: NodeSpace::Embedding,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Hypergraph {
    pub task_nodes: BTreeSet<TermId>,
    pub hyperedges: BTreeMap<TermId, BTreeSet<TermId>>,
    /// `memberships[construct][task]` for every hyperedge pair.
    pub memberships: BTreeMap<TermId, BTreeMap<TermId, f64>>,
    pub empty_constructs: Vec<TermId>,
    /// Soft-cluster label of every node (`None` for noise).
    pub node_clusters: BTreeMap<TermId, Option<usize>>,
    pub retention: f64,
}

pub fn build_hypergraph(
    graph: &TermGraph,
    embeddings: &NodeEmbeddingStore,
    params: &HypergraphParams,
) -> Result<Hypergraph, HypergraphError> {
    let threshold = threshold_edges(graph, params.threshold_mode)?;
    if threshold.kept.is_empty() {
        return Err(HypergraphError::NoSurvivingEdges {
            threshold: threshold.median + threshold.sd,
        });
    }
    let points: Vec<Vec<f64>> = graph
        .nodes
        .iter()
        .map(|n| match params.space {
            NodeSpace::Embedding => embeddings
                .input_vector(&n.id)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| HypergraphError::MissingEmbedding(n.id.clone())),
            NodeSpace::Topic => Ok(n.distribution.mean.clone()),
        })
        .collect::<Result<_, _>>()?;
    let model = cluster::fit(&points, &params.cluster)?;
    if model.n_clusters() == 0 {
        return Err(HypergraphError::AllNoise { n: points.len() });
    }
    let profiles: Vec<Vec<f64>> = points
        .iter()
        .map(|p| model.soft_membership(p))
        .collect::<Result<_, _>>()?;

    let n = graph.len();
    let mut strong = vec![vec![0.0; n]; n];
    let max_w = threshold
        .kept
        .iter()
        .map(|&k| graph.edges[k].weight)
        .fold(0.0, f64::max);
    for &k in &threshold.kept {
        let e = graph.edges[k];
        strong[e.u][e.v] = e.weight / max_w;
        strong[e.v][e.u] = e.weight / max_w;
    }

    let mut h = Hypergraph {
        retention: threshold.retention,
        ..Hypergraph::default()
    };
    for (i, node) in graph.nodes.iter().enumerate() {
        h.node_clusters.insert(node.id.clone(), model.labels[i]);
        if node.kind == TermKind::Task {
            h.task_nodes.insert(node.id.clone());
        }
    }
    for c in (0..n).filter(|&i| graph.kind(i) == TermKind::Construct) {
        let mut edge = BTreeSet::new();
        let mut members = BTreeMap::new();
        for t in (0..n).filter(|&i| graph.kind(i) == TermKind::Task) {
            let profile_cos = cosine(&profiles[c], &profiles[t]);
            if strong[c][t] > 0.0 || profile_cos >= params.membership_threshold {
                let id = graph.nodes[t].id.clone();
                members.insert(id.clone(), strong[c][t].max(profile_cos).clamp(0.0, 1.0));
                edge.insert(id);
            }
        }
        let cid = graph.nodes[c].id.clone();
        if edge.is_empty() {
            h.empty_constructs.push(cid.clone());
        }
        h.hyperedges.insert(cid.clone(), edge);
        h.memberships.insert(cid, members);
    }
    if !h.empty_constructs.is_empty() {
        log::warn!("hypergraph: {} constructs have empty hyperedges", h.empty_constructs.len());
    }
    Ok(h)
}

impl Hypergraph {
    pub fn hyperedge(&self, construct: &TermId) -> Result<&BTreeSet<TermId>, HypergraphError> {
        self.hyperedges
            .get(construct)
            .ok_or_else(|| HypergraphError::UnknownId(construct.clone()))
    }

    pub fn membership(&self, construct: &TermId, task: &TermId) -> f64 {
        self.memberships
            .get(construct)
            .and_then(|m| m.get(task))
            .copied()
            .unwrap_or(0.0)
    }

    /// Jaccard overlap of two hyperedges; 0 when both are empty.
    pub fn hypernomy(&self, c1: &TermId, c2: &TermId) -> Result<f64, HypergraphError> {
        let a = self.hyperedge(c1)?;
        let b = self.hyperedge(c2)?;
        let union = a.union(b).count();
        if union == 0 {
            return Ok(0.0);
        }
        Ok(a.intersection(b).count() as f64 / union as f64)
    }

    /// Number of hyperedges containing `task`.
    pub fn task_impurity(&self, task: &TermId) -> Result<usize, HypergraphError> {
        if !self.task_nodes.contains(task) {
            return Err(if self.hyperedges.contains_key(task) {
                HypergraphError::WrongKind {
                    id: task.clone(),
                    expected: "task",
                }
            } else {
                HypergraphError::UnknownId(task.clone())
            });
        }
        Ok(self.hyperedges.values().filter(|e| e.contains(task)).count())
    }

    /// `{construct_id: [task_ids...]}`
    pub fn hyperedges_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.hyperedges).expect("string maps serialize")
    }

    /// Rows `construct,task,membership`.
    pub fn write_membership_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["construct", "task", "membership"])?;
        for (c, m) in &self.memberships {
            for (t, v) in m {
                w.write_record([c.as_str(), t.as_str(), &format!("{v:?}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Task rows, construct columns, 1 where the task is in the hyperedge.
    pub fn write_incidence_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["task".to_string()];
        header.extend(self.hyperedges.keys().map(|c| c.to_string()));
        w.write_record(&header)?;
        for t in &self.task_nodes {
            let mut rec = vec![t.to_string()];
            rec.extend(
                self.hyperedges
                    .values()
                    .map(|e| if e.contains(t) { "1" } else { "0" }.to_string()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[&str]) -> BTreeSet<TermId> {
        ids.iter().map(|s| TermId::new(*s)).collect()
    }

    fn fixture(edges: &[(&str, &[&str])]) -> Hypergraph {
        let mut h = Hypergraph::default();
        for (c, tasks) in edges {
            let e = set(tasks);
            h.task_nodes.extend(e.iter().cloned());
            h.memberships
                .insert(TermId::new(*c), e.iter().map(|t| (t.clone(), 1.0)).collect());
            h.hyperedges.insert(TermId::new(*c), e);
        }
        h
    }

    #[test]
    fn threshold_keeps_only_the_top_weight() {
        let t = threshold_weights(&[1.0, 2.0, 3.0, 4.0, 5.0], ThresholdMode::Strong).unwrap();
        assert_eq!(t.median, 3.0);
        assert!((t.sd - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(t.kept, vec![4]);
        assert_eq!(t.retention, 0.2);
    }

    #[test]
    fn threshold_equal_weights_keep_all() {
        let t = threshold_weights(&[2.0; 4], ThresholdMode::Strong).unwrap();
        assert_eq!(t.kept, vec![0, 1, 2, 3]);
    }

    #[test]
    fn threshold_two_weights_keep_none() {
        let t = threshold_weights(&[1.0, 10.0], ThresholdMode::Strong).unwrap();
        assert_eq!(t.median, 5.5);
        assert!((t.median + t.sd - 11.863961030678928).abs() < 1e-12);
        assert!(t.kept.is_empty());
    }

    #[test]
    fn band_mode_keeps_both_tails() {
        let t = threshold_weights(&[1.0, 2.0, 3.0, 4.0, 5.0], ThresholdMode::Band).unwrap();
        assert_eq!(t.kept, vec![0, 4]);
    }

    #[test]
    fn threshold_needs_two_edges() {
        assert!(matches!(
            threshold_weights(&[1.0], ThresholdMode::Strong),
            Err(HypergraphError::TooFewEdges(1))
        ));
    }

    #[test]
    fn hypernomy_examples() {
        let h = fixture(&[
            ("c1", &["a", "b", "c"]),
            ("c2", &["b", "c", "d"]),
            ("c3", &["a", "b", "c"]),
            ("c4", &["x"]),
            ("c5", &[]),
            ("c6", &[]),
        ]);
        let id = TermId::new;
        assert_eq!(h.hypernomy(&id("c1"), &id("c2")).unwrap(), 0.5);
        assert_eq!(h.hypernomy(&id("c1"), &id("c3")).unwrap(), 1.0);
        assert_eq!(h.hypernomy(&id("c1"), &id("c4")).unwrap(), 0.0);
        assert_eq!(h.hypernomy(&id("c5"), &id("c6")).unwrap(), 0.0);
        assert!(matches!(h.hypernomy(&id("c1"), &id("zz")), Err(HypergraphError::UnknownId(_))));
        assert_eq!(h.task_impurity(&id("b")).unwrap(), 3);
        assert_eq!(h.task_impurity(&id("x")).unwrap(), 1);
        assert!(matches!(h.task_impurity(&id("c1")), Err(HypergraphError::WrongKind { .. })));
    }

    #[test]
    fn exports() {
        let h = fixture(&[("c1", &["a", "b"]), ("c2", &["b"])]);
        assert_eq!(h.hyperedges_json(), serde_json::json!({"c1": ["a", "b"], "c2": ["b"]}));
        let mut buf = Vec::new();
        h.write_incidence_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "task,c1,c2\na,1,0\nb,1,1\n");
        let mut buf = Vec::new();
        h.write_membership_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "construct,task,membership\nc1,a,1.0\nc1,b,1.0\nc2,b,1.0\n"
        );
    }

    fn arb_hypergraph() -> impl Strategy<Value = Hypergraph> {
        proptest::collection::vec(proptest::collection::btree_set(0u8..8, 0..6), 1..6).prop_map(|edges| {
            let mut h = Hypergraph::default();
            h.task_nodes = (0..8).map(|t| TermId::new(format!("t{t}"))).collect();
            for (c, e) in edges.into_iter().enumerate() {
                let e: BTreeSet<TermId> = e.into_iter().map(|t| TermId::new(format!("t{t}"))).collect();
                h.hyperedges.insert(TermId::new(format!("c{c}")), e);
            }
            h
        })
    }

    proptest! {
        #[test]
        fn hypernomy_symmetric_and_one_iff_equal(h in arb_hypergraph()) {
            let ids: Vec<&TermId> = h.hyperedges.keys().collect();
            for a in &ids {
                for b in &ids {
                    let x = h.hypernomy(a, b).unwrap();
                    prop_assert_eq!(x, h.hypernomy(b, a).unwrap());
                    prop_assert!((0.0..=1.0).contains(&x));
                    let ea = &h.hyperedges[*a];
                    let eb = &h.hyperedges[*b];
                    prop_assert_eq!(x == 1.0, ea == eb && !ea.is_empty());
                }
            }
        }

        #[test]
        fn impurity_double_counting(h in arb_hypergraph()) {
            let by_task: usize = h.task_nodes.iter().map(|t| h.task_impurity(t).unwrap()).sum();
            let by_edge: usize = h.hyperedges.values().map(BTreeSet::len).sum();
            prop_assert_eq!(by_task, by_edge);
        }

        #[test]
        fn threshold_retains_a_subset(weights in proptest::collection::vec(0.0f64..100.0, 2..40)) {
            let t = threshold_weights(&weights, ThresholdMode::Strong).unwrap();
            prop_assert!(t.kept.len() <= weights.len());
            prop_assert!(t.kept.windows(2).all(|w| w[0] < w[1]));
            if t.sd > 0.0 {
                prop_assert!(t.kept.iter().all(|&i| weights[i] > t.median));
            }
        }
    }
}
