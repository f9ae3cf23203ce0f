//! Heterogeneous task-construct graph.
//!
//! Each term gets a Gaussian fitted over the topic rows of its documents.
//! Terms are compared by the Jensen-Shannon divergence of their Gaussians
//! (Monte Carlo, log base 2, so values lie in [0, 1]) and every pair is
//! joined by an edge of weight `1 / (ε + divergence)`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};
use std::io::Write;
use thiserror::Error;

use crate::corpus::{Corpus, TermId, TermKind};
use crate::hash::pair_seed;
use crate::topics::TopicModel;

pub const MIN_JS_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("term {term} has {n} documents; at least 2 are needed to fit a distribution")]
    TooFewDocuments { term: TermId, n: usize },
    #[error("distributions have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("n_samples must be at least {MIN_JS_SAMPLES}, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite log-density comparing {0} and {1}; covariance is broken")]
    NonFiniteDensity(String, String),
    #[error("covariance of {0} is not positive definite")]
    NotPositiveDefinite(TermId),
    #[error("graph needs at least two nodes and one of each kind: {0}")]
    Precondition(String),
    #[error("unknown term {0}")]
    UnknownTerm(TermId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Diagonal,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDistribution {
    pub term_id: TermId,
    pub mean: Vec<f64>,
    pub covariance: Covariance,
    pub doc_count: usize,
    /// Full covariance was requested but the term had too few documents.
    #[serde(default)]
    pub diagonal_fallback: bool,
}

impl NodeDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        match &self.covariance {
            Covariance::Diagonal(d) => d.iter().copied().fold(f64::INFINITY, f64::min),
            Covariance::Full(m) => {
                let k = m.len();
                let mat = DMatrix::from_fn(k, k, |i, j| m[i][j]);
                SymmetricEigen::new(mat)
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    pub mode: CovarianceMode,
    /// Ridge added to the covariance as a multiple of its mean variance.
    pub shrinkage: f64,
    /// Lower bound on every variance (or eigenvalue, in full mode).
    pub variance_floor: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            mode: CovarianceMode::Diagonal,
            shrinkage: 0.1,
            variance_floor: 1e-6,
        }
    }
}

/// Fits a Gaussian to `rows` (each a topic-probability vector).
///
/// covariance = sample covariance (n − 1) + shrinkage · (trace / T) · I,
/// then floored at `variance_floor`. Full mode needs more documents than
/// topics and otherwise falls back to diagonal.
pub fn fit_node_distribution(
    term_id: &TermId,
    rows: &[&[f64]],
    params: &FitParams,
) -> Result<NodeDistribution, GraphError> {
    let n = rows.len();
    if n < 2 {
        return Err(GraphError::TooFewDocuments {
            term: term_id.clone(),
            n,
        });
    }
    let t = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != t) {
        return Err(GraphError::DimensionMismatch(t, r.len()));
    }
    let mut mean = vec![0.0; t];
    for r in rows {
        mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut mode = params.mode;
    let mut fallback = false;
    if mode == CovarianceMode::Full && n <= t {
        log::warn!("{term_id}: {n} documents in {t} topics; using diagonal covariance");
        mode = CovarianceMode::Diagonal;
        fallback = true;
    }
    let denom = (n - 1) as f64;
    let covariance = match mode {
        CovarianceMode::Diagonal => {
            let mut var = vec![0.0; t];
            for r in rows {
                for j in 0..t {
                    let d = r[j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= denom);
            let ridge = params.shrinkage * var.iter().sum::<f64>() / t as f64;
            var.iter_mut()
                .for_each(|v| *v = (*v + ridge).max(params.variance_floor));
            Covariance::Diagonal(var)
        }
        CovarianceMode::Full => {
            let mut cov = DMatrix::<f64>::zeros(t, t);
            for r in rows {
                let d = DVector::from_iterator(t, r.iter().zip(&mean).map(|(x, m)| x - m));
                cov += &d * d.transpose();
            }
            cov /= denom;
            let ridge = params.shrinkage * cov.trace() / t as f64;
            for j in 0..t {
                cov[(j, j)] += ridge;
            }
            let min_eig = SymmetricEigen::new(cov.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min_eig < params.variance_floor {
                let lift = params.variance_floor - min_eig;
                for j in 0..t {
                    cov[(j, j)] += lift;
                }
            }
            Covariance::Full((0..t).map(|i| (0..t).map(|j| cov[(i, j)]).collect()).collect())
        }
    };
    Ok(NodeDistribution {
        term_id: term_id.clone(),
        mean,
        covariance,
        doc_count: n,
        diagonal_fallback: fallback,
    })
}

/// Sampling and log-density for one Gaussian.
enum Gaussian {
    Diagonal {
        mean: Vec<f64>,
        sd: Vec<f64>,
        log_norm: f64,
    },
    Full {
        mean: DVector<f64>,
        chol: Cholesky<f64, nalgebra::Dyn>,
        log_norm: f64,
    },
}

impl Gaussian {
    fn new(d: &NodeDistribution) -> Result<Self, GraphError> {
        let k = d.dim() as f64;
        match &d.covariance {
            Covariance::Diagonal(var) => {
                if var.iter().any(|v| !(*v > 0.0)) {
                    return Err(GraphError::NotPositiveDefinite(d.term_id.clone()));
                }
                let log_det: f64 = var.iter().map(|v| v.ln()).sum();
                Ok(Gaussian::Diagonal {
                    mean: d.mean.clone(),
                    sd: var.iter().map(|v| v.sqrt()).collect(),
                    log_norm: -0.5 * (k * (2.0 * PI).ln() + log_det),
                })
            }
            Covariance::Full(m) => {
                let t = m.len();
                let mat = DMatrix::from_fn(t, t, |i, j| m[i][j]);
                let chol = Cholesky::new(mat)
                    .ok_or_else(|| GraphError::NotPositiveDefinite(d.term_id.clone()))?;
                let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                Ok(Gaussian::Full {
                    mean: DVector::from_column_slice(&d.mean),
                    chol,
                    log_norm: -0.5 * (k * (2.0 * PI).ln() + log_det),
                })
            }
        }
    }

    fn sample(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Gaussian::Diagonal { mean, sd, .. } => mean
                .iter()
                .zip(sd)
                .zip(z)
                .map(|((m, s), z)| m + s * z)
                .collect(),
            Gaussian::Full { mean, chol, .. } => {
                let x = mean + chol.l() * DVector::from_column_slice(z);
                x.iter().copied().collect()
            }
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            Gaussian::Diagonal { mean, sd, log_norm } => {
                let q: f64 = x
                    .iter()
                    .zip(mean)
                    .zip(sd)
                    .map(|((x, m), s)| {
                        let u = (x - m) / s;
                        u * u
                    })
                    .sum();
                log_norm - 0.5 * q
            }
            Gaussian::Full { mean, chol, log_norm } => {
                let d = DVector::from_column_slice(x) - mean;
                let y = chol
                    .l()
                    .solve_lower_triangular(&d)
                    .expect("cholesky factor is invertible");
                log_norm - 0.5 * y.norm_squared()
            }
        }
    }
}

/// `ln(e^a + e^b)`, symmetric in its arguments bit for bit.
fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Monte-Carlo Jensen-Shannon divergence in bits.
///
/// One set of `n_samples` standard-normal draws (from `seed`) is pushed
/// through both distributions, giving
/// `½·E_p[log2 p/m] + ½·E_q[log2 q/m]` with `m = (p + q) / 2`. Because both
/// halves share the draws the estimate is exactly symmetric in `p` and `q`.
/// The result is clamped to [0, 1].
pub fn js_divergence(
    p: &NodeDistribution,
    q: &NodeDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<f64, GraphError> {
    if p.dim() != q.dim() {
        return Err(GraphError::DimensionMismatch(p.dim(), q.dim()));
    }
    if n_samples < MIN_JS_SAMPLES {
        return Err(GraphError::TooFewSamples(n_samples));
    }
    let gp = Gaussian::new(p)?;
    let gq = Gaussian::new(q)?;
    let k = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n_samples * k).map(|_| StandardNormal.sample(&mut rng)).collect();

    let half = |own: &Gaussian, other: &Gaussian| -> Option<f64> {
        let mut acc = 0.0;
        for s in z.chunks_exact(k.max(1)) {
            let x = own.sample(s);
            let lo = own.log_density(&x);
            let lt = other.log_density(&x);
            let lm = log_add_exp(lo, lt) - LN_2;
            let term = lo - lm;
            if !term.is_finite() {
                return None;
            }
            acc += term;
        }
        Some(acc / n_samples as f64 / LN_2)
    };
    let non_finite = || GraphError::NonFiniteDensity(p.term_id.to_string(), q.term_id.to_string());
    let a = half(&gp, &gq).ok_or_else(non_finite)?;
    let b = half(&gq, &gp).ok_or_else(non_finite)?;
    Ok((0.5 * (a + b)).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    pub fit: FitParams,
    /// ε in the edge weight `1 / (ε + divergence)`.
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Minimum kept documents for a term to become a node.
    pub min_docs: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            fit: FitParams::default(),
            epsilon: 1e-3,
            n_samples: 8192,
            seed: 0,
            min_docs: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: TermId,
    pub kind: TermKind,
    pub distribution: NodeDistribution,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermGraph {
    /// Sorted by id; indices into this vector identify nodes.
    pub nodes: Vec<GraphNode>,
    pub divergence: Vec<Vec<f64>>,
    pub edges: Vec<Edge>,
    pub epsilon: f64,
}

pub fn edge_weight(divergence: f64, epsilon: f64) -> f64 {
    1.0 / (epsilon + divergence)
}

/// Builds the complete weighted graph over `nodes`.
///
/// Pairs are independent and computed in parallel; each pair's sampling seed
/// is derived from the global seed and the two term ids, so the result does
/// not depend on scheduling or argument order.
pub fn build_graph(mut nodes: Vec<GraphNode>, params: &GraphParams) -> Result<TermGraph, GraphError> {
    if nodes.len() < 2 {
        return Err(GraphError::Precondition(format!("{} node(s)", nodes.len())));
    }
    for kind in [TermKind::Task, TermKind::Construct] {
        if !nodes.iter().any(|n| n.kind == kind) {
            return Err(GraphError::Precondition(format!("no {} nodes", kind.as_str())));
        }
    }
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let n = nodes.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let seed = pair_seed(params.seed, nodes[i].id.as_str(), nodes[j].id.as_str());
            js_divergence(&nodes[i].distribution, &nodes[j].distribution, params.n_samples, seed)
        })
        .collect::<Result<_, _>>()?;
    let mut divergence = vec![vec![0.0; n]; n];
    let mut edges = Vec::with_capacity(pairs.len());
    for (&(i, j), &d) in pairs.iter().zip(&values) {
        divergence[i][j] = d;
        divergence[j][i] = d;
        edges.push(Edge {
            u: i,
            v: j,
            weight: edge_weight(d, params.epsilon),
        });
    }
    Ok(TermGraph {
        nodes,
        divergence,
        edges,
        epsilon: params.epsilon,
    })
}

/// Fits one distribution per lexicon term from the kept documents of
/// `topics`. Terms with fewer than `params.min_docs` (and at least 2) kept
/// documents are skipped and returned separately.
pub fn fit_term_nodes(
    corpus: &Corpus,
    topics: &TopicModel,
    params: &GraphParams,
) -> Result<(Vec<GraphNode>, Vec<TermId>), GraphError> {
    let mut rows: BTreeMap<&TermId, Vec<&[f64]>> = BTreeMap::new();
    for doc in corpus.documents.values() {
        if let Some(row) = topics.kept_row(&doc.doc_id) {
            for label in &doc.labels {
                rows.entry(label).or_default().push(row);
            }
        }
    }
    let min_docs = params.min_docs.max(2);
    let mut nodes = Vec::new();
    let mut skipped = Vec::new();
    for term in corpus.lexicon.terms() {
        let term_rows = rows.get(&term.id).map(Vec::as_slice).unwrap_or(&[]);
        if term_rows.len() < min_docs {
            skipped.push(term.id.clone());
            continue;
        }
        nodes.push(GraphNode {
            id: term.id.clone(),
            kind: term.kind,
            distribution: fit_node_distribution(&term.id, term_rows, &params.fit)?,
        });
    }
    if !skipped.is_empty() {
        log::warn!(
            "graph: {} terms below {min_docs} kept documents skipped",
            skipped.len()
        );
    }
    Ok((nodes, skipped))
}

impl TermGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &TermId) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.id.cmp(id)).ok()
    }

    pub fn kind(&self, i: usize) -> TermKind {
        self.nodes[i].kind
    }

    pub fn divergence_between(&self, a: &TermId, b: &TermId) -> Result<f64, GraphError> {
        let i = self.index_of(a).ok_or_else(|| GraphError::UnknownTerm(a.clone()))?;
        let j = self.index_of(b).ok_or_else(|| GraphError::UnknownTerm(b.clone()))?;
        Ok(self.divergence[i][j])
    }

    /// Adjacency lists `(neighbour, weight)` in neighbour order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.len()];
        for e in &self.edges {
            adj[e.u].push((e.v, e.weight));
            adj[e.v].push((e.u, e.weight));
        }
        for a in &mut adj {
            a.sort_by_key(|(j, _)| *j);
        }
        adj
    }

    pub fn write_divergence_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["term_id".to_string()];
        header.extend(self.nodes.iter().map(|n| n.id.to_string()));
        w.write_record(&header)?;
        for (node, row) in self.nodes.iter().zip(&self.divergence) {
            let mut rec = vec![node.id.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `[{"u": id, "v": id, "weight": w}, ...]`
    pub fn edge_list_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.edges
                .iter()
                .map(|e| {
                    serde_json::json!({
                        "u": self.nodes[e.u].id,
                        "v": self.nodes[e.v].id,
                        "weight": e.weight,
                    })
                })
                .collect(),
        )
    }

    pub fn write_graphml(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
        writeln!(
            out,
            r#"<graphml xmlns="http://graphml.graphdrawing.org/xmlns">"#
        )?;
        writeln!(out, r#"  <key id="kind" for="node" attr.name="kind" attr.type="string"/>"#)?;
        writeln!(out, r#"  <key id="docs" for="node" attr.name="doc_count" attr.type="int"/>"#)?;
        writeln!(out, r#"  <key id="weight" for="edge" attr.name="weight" attr.type="double"/>"#)?;
        writeln!(out, r#"  <key id="jsd" for="edge" attr.name="divergence" attr.type="double"/>"#)?;
        writeln!(out, r#"  <graph id="G" edgedefault="undirected">"#)?;
        for n in &self.nodes {
            writeln!(out, r#"    <node id="{}">"#, xml_escape(n.id.as_str()))?;
            writeln!(out, r#"      <data key="kind">{}</data>"#, n.kind.as_str())?;
            writeln!(out, r#"      <data key="docs">{}</data>"#, n.distribution.doc_count)?;
            writeln!(out, "    </node>")?;
        }
        for e in &self.edges {
            writeln!(
                out,
                r#"    <edge source="{}" target="{}">"#,
                xml_escape(self.nodes[e.u].id.as_str()),
                xml_escape(self.nodes[e.v].id.as_str())
            )?;
            writeln!(out, r#"      <data key="weight">{:?}</data>"#, e.weight)?;
            writeln!(out, r#"      <data key="jsd">{:?}</data>"#, self.divergence[e.u][e.v])?;
            writeln!(out, "    </edge>")?;
        }
        writeln!(out, "  </graph>")?;
        writeln!(out, "</graphml>")
    }
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(id: &str, mean: Vec<f64>, var: Vec<f64>) -> NodeDistribution {
        NodeDistribution {
            term_id: id.into(),
            mean,
            covariance: Covariance::Diagonal(var),
            doc_count: 10,
            diagonal_fallback: false,
        }
    }

    fn node(id: &str, kind: TermKind, mean: f64) -> GraphNode {
        GraphNode {
            id: id.into(),
            kind,
            distribution: diag(id, vec![mean], vec![1.0]),
        }
    }

    #[test]
    fn identical_rows_leave_only_the_floor() {
        let row = [0.2, 0.3, 0.5];
        let rows: Vec<&[f64]> = vec![&row; 6];
        let params = FitParams { shrinkage: 0.5, ..FitParams::default() };
        let d = fit_node_distribution(&"t".into(), &rows, &params).unwrap();
        assert!(d.mean.iter().zip(&row).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(d.covariance, Covariance::Diagonal(vec![params.variance_floor; 3]));
    }

    #[test]
    fn square_corners_full_covariance() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        let rows: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let params = FitParams {
            mode: CovarianceMode::Full,
            shrinkage: 0.0,
            variance_floor: 1e-9,
        };
        let d = fit_node_distribution(&"t".into(), &rows, &params).unwrap();
        assert_eq!(d.mean, vec![1.0, 1.0]);
        let Covariance::Full(c) = d.covariance else { panic!("expected full") };
        assert!((c[0][0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((c[1][1] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(c[0][1], 0.0);
        assert_eq!(c[1][0], 0.0);
    }

    #[test]
    fn full_mode_falls_back_when_docs_do_not_exceed_topics() {
        let rows_owned: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..473).map(|j| ((i * 7 + j) % 11) as f64 / 11.0).collect())
            .collect();
        let rows: Vec<&[f64]> = rows_owned.iter().map(Vec::as_slice).collect();
        let params = FitParams { mode: CovarianceMode::Full, ..FitParams::default() };
        let d = fit_node_distribution(&"t".into(), &rows, &params).unwrap();
        assert!(d.diagonal_fallback);
        assert!(matches!(d.covariance, Covariance::Diagonal(_)));
    }

    #[test]
    fn single_document_is_fatal() {
        let row = [1.0];
        assert!(matches!(
            fit_node_distribution(&"t".into(), &[&row], &FitParams::default()),
            Err(GraphError::TooFewDocuments { n: 1, .. })
        ));
    }

    #[test]
    fn identical_distributions_have_zero_divergence() {
        let p = diag("p", vec![0.3, -1.0], vec![0.5, 2.0]);
        let d = js_divergence(&p, &p.clone(), 8192, 1).unwrap();
        assert!(d <= 0.01, "{d}");
    }

    #[test]
    fn disjoint_gaussians_saturate() {
        let p = diag("p", vec![0.0], vec![1.0]);
        let q = diag("q", vec![1000.0], vec![1.0]);
        let d = js_divergence(&p, &q, 4096, 3).unwrap();
        assert!((d - 1.0).abs() <= 0.01, "{d}");
    }

    #[test]
    fn too_few_samples_rejected() {
        let p = diag("p", vec![0.0], vec![1.0]);
        assert!(matches!(js_divergence(&p, &p, 999, 0), Err(GraphError::TooFewSamples(999))));
    }

    #[test]
    fn weights_follow_formula() {
        assert_eq!(edge_weight(0.0, 1e-3), 1000.0);
        assert!((edge_weight(1.0, 1e-3) - 0.999000999000999).abs() < 1e-12);
    }

    #[test]
    fn four_node_weight_matrix() {
        let nodes = vec![
            node("a", TermKind::Task, 0.0),
            node("b", TermKind::Task, 0.5),
            node("c", TermKind::Construct, 1.5),
            node("d", TermKind::Construct, 4.0),
        ];
        let g = build_graph(nodes, &GraphParams { n_samples: 2048, ..GraphParams::default() }).unwrap();
        assert_eq!(g.edges.len(), 6);
        for e in &g.edges {
            let expect = 1.0 / (g.epsilon + g.divergence[e.u][e.v]);
            assert_eq!(e.weight, expect);
            assert_ne!(e.u, e.v);
        }
        for i in 0..4 {
            assert_eq!(g.divergence[i][i], 0.0);
            for j in 0..4 {
                assert_eq!(g.divergence[i][j], g.divergence[j][i]);
            }
        }
        // Weights strictly decrease as divergence increases.
        let mut by_div: Vec<&Edge> = g.edges.iter().collect();
        by_div.sort_by(|a, b| g.divergence[a.u][a.v].total_cmp(&g.divergence[b.u][b.v]));
        for w in by_div.windows(2) {
            if g.divergence[w[0].u][w[0].v] < g.divergence[w[1].u][w[1].v] {
                assert!(w[0].weight > w[1].weight);
            }
        }
    }

    #[test]
    fn graph_needs_both_kinds() {
        let nodes = vec![node("a", TermKind::Task, 0.0), node("b", TermKind::Task, 1.0)];
        assert!(matches!(build_graph(nodes, &GraphParams::default()), Err(GraphError::Precondition(_))));
    }

    #[test]
    fn graphml_and_csv_exports() {
        let nodes = vec![node("a&b", TermKind::Task, 0.0), node("c", TermKind::Construct, 1.0)];
        let g = build_graph(nodes, &GraphParams { n_samples: 1000, ..GraphParams::default() }).unwrap();
        let mut buf = Vec::new();
        g.write_graphml(&mut buf).unwrap();
        let xml = String::from_utf8(buf).unwrap();
        assert!(xml.contains(r#"<node id="a&amp;b">"#));
        assert!(roxmltree::Document::parse(&xml).is_ok());
        let mut csv_buf = Vec::new();
        g.write_divergence_csv(&mut csv_buf).unwrap();
        assert!(String::from_utf8(csv_buf).unwrap().starts_with("term_id,a&b,c\n"));
    }

    fn arb_distribution(id: &'static str) -> impl Strategy<Value = NodeDistribution> {
        (
            proptest::collection::vec(-3.0f64..3.0, 2),
            proptest::collection::vec(0.05f64..4.0, 2),
        )
            .prop_map(move |(m, v)| diag(id, m, v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn divergence_symmetric_and_bounded(
            p in arb_distribution("p"),
            q in arb_distribution("q"),
            seed in 0u64..1000,
        ) {
            let a = js_divergence(&p, &q, 1000, seed).unwrap();
            let b = js_divergence(&q, &p, 1000, seed).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn shrinkage_keeps_covariance_positive_definite(
            rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 5..12),
            shrink in 0.0f64..5.0,
            full in proptest::bool::ANY,
        ) {
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let mode = if full { CovarianceMode::Full } else { CovarianceMode::Diagonal };
            let params = FitParams { mode, shrinkage: shrink, variance_floor: 1e-9 };
            let d = fit_node_distribution(&"t".into(), &refs, &params).unwrap();
            prop_assert!(d.min_eigenvalue() > 0.0);
        }
    }
}
