//! Kind-alternating random walks and skip-gram node embeddings.
//!
//! Walks move task → construct → task → ... with each step drawn in
//! proportion to edge weight. The walk corpus is then embedded with
//! skip-gram and negative sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

use crate::corpus::{TermId, TermKind};
use crate::graph::TermGraph;
use crate::hash::derive_seed;

#[derive(Debug, Error)]
pub enum MetapathError {
    #[error("graph has no {0} nodes")]
    MissingKind(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("walk corpus is empty")]
    EmptyVocabulary,
    #[error("non-finite loss {loss} in epoch {epoch} (center {center}, context {context}); lower the learning rate")]
    NonFiniteLoss {
        epoch: usize,
        center: String,
        context: String,
        loss: f64,
    },
    #[error("{origin}:{line}: {message}")]
    Format {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    /// Walks started from every node.
    pub walks_per_node: usize,
    /// Nodes per walk, including the start.
    pub walk_length: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 1000,
            walk_length: 100,
            seed: 0,
        }
    }
}

impl WalkConfig {
    fn validate(&self) -> Result<(), MetapathError> {
        if self.walk_length < 2 {
            return Err(MetapathError::InvalidConfig("walk_length must be at least 2".into()));
        }
        if self.walks_per_node < 1 {
            return Err(MetapathError::InvalidConfig("walks_per_node must be at least 1".into()));
        }
        Ok(())
    }
}

/// Weighted graph with typed nodes, as seen by the walker.
#[derive(Clone, Debug)]
pub struct WalkGraph {
    pub ids: Vec<TermId>,
    pub kinds: Vec<TermKind>,
    /// Opposite-kind neighbours of each node, with cumulative weights.
    neighbours: Vec<Vec<usize>>,
    cumulative: Vec<Vec<f64>>,
}

impl WalkGraph {
    /// Builds the walker's view from undirected weighted edges. Same-kind
    /// edges and non-positive weights are ignored.
    pub fn new(ids: Vec<TermId>, kinds: Vec<TermKind>, edges: &[(usize, usize, f64)]) -> Self {
        let n = ids.len();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(u, v, w) in edges {
            if kinds[u] != kinds[v] && w > 0.0 {
                adj[u].push((v, w));
                adj[v].push((u, w));
            }
        }
        let mut neighbours = Vec::with_capacity(n);
        let mut cumulative = Vec::with_capacity(n);
        for mut a in adj {
            a.sort_by_key(|(j, _)| *j);
            let mut acc = 0.0;
            cumulative.push(
                a.iter()
                    .map(|(_, w)| {
                        acc += w;
                        acc
                    })
                    .collect(),
            );
            neighbours.push(a.into_iter().map(|(j, _)| j).collect());
        }
        WalkGraph {
            ids,
            kinds,
            neighbours,
            cumulative,
        }
    }

    pub fn from_term_graph(g: &TermGraph) -> Self {
        let edges: Vec<(usize, usize, f64)> = g.edges.iter().map(|e| (e.u, e.v, e.weight)).collect();
        WalkGraph::new(
            g.nodes.iter().map(|n| n.id.clone()).collect(),
            g.nodes.iter().map(|n| n.kind).collect(),
            &edges,
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Opposite-kind neighbours of `i` in index order.
    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    /// Transition probabilities from `i`, aligned with [`Self::neighbours`].
    pub fn transition_probabilities(&self, i: usize) -> Vec<f64> {
        let c = &self.cumulative[i];
        let total = c.last().copied().unwrap_or(0.0);
        let mut prev = 0.0;
        c.iter()
            .map(|&x| {
                let p = (x - prev) / total;
                prev = x;
                p
            })
            .collect()
    }

    fn step(&self, i: usize, rng: &mut impl Rng) -> Option<usize> {
        let c = &self.cumulative[i];
        let total = *c.last()?;
        let r = rng.gen::<f64>() * total;
        let k = c.partition_point(|&x| x <= r).min(c.len() - 1);
        Some(self.neighbours[i][k])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkReport {
    pub walks: usize,
    pub steps: usize,
    /// Walks that stopped early because a node had no opposite-kind
    /// neighbour.
    pub truncated: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkCorpus {
    pub ids: Vec<TermId>,
    pub kinds: Vec<TermKind>,
    /// Node indices into `ids`.
    pub walks: Vec<Vec<u32>>,
    pub report: WalkReport,
}

impl WalkCorpus {
    /// One walk per line, space-separated term ids.
    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for walk in &self.walks {
            let mut first = true;
            for &i in walk {
                if !first {
                    out.write_all(b" ")?;
                }
                first = false;
                out.write_all(self.ids[i as usize].as_str().as_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.walks.iter().map(Vec::len).sum()
    }
}

/// Generates `walks_per_node` walks from every node.
///
/// Each walk has its own generator seeded from the global seed, the start
/// node's id and the walk index, so walks are reproducible regardless of
/// thread scheduling.
pub fn generate_walks(graph: &WalkGraph, cfg: &WalkConfig) -> Result<WalkCorpus, MetapathError> {
    cfg.validate()?;
    for kind in [TermKind::Task, TermKind::Construct] {
        if !graph.kinds.contains(&kind) {
            return Err(MetapathError::MissingKind(kind.as_str()));
        }
    }
    let per_node: Vec<Vec<Vec<u32>>> = (0..graph.len())
        .into_par_iter()
        .map(|start| {
            let id = graph.ids[start].as_str().as_bytes();
            (0..cfg.walks_per_node)
                .map(|w| {
                    let seed = derive_seed(cfg.seed, &[b"walk", id, &(w as u64).to_le_bytes()]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut walk = Vec::with_capacity(cfg.walk_length);
                    let mut cur = start;
                    walk.push(cur as u32);
                    while walk.len() < cfg.walk_length {
                        match graph.step(cur, &mut rng) {
                            Some(next) => {
                                cur = next;
                                walk.push(cur as u32);
                            }
                            None => break,
                        }
                    }
                    walk
                })
                .collect()
        })
        .collect();
    let walks: Vec<Vec<u32>> = per_node.into_iter().flatten().collect();
    let truncated = walks.iter().filter(|w| w.len() < cfg.walk_length).count();
    let steps = walks.iter().map(|w| w.len() - 1).sum();
    if truncated > 0 {
        log::warn!("walks: {truncated} of {} walks truncated", walks.len());
    }
    Ok(WalkCorpus {
        ids: graph.ids.clone(),
        kinds: graph.kinds.clone(),
        report: WalkReport {
            walks: walks.len(),
            steps,
            truncated,
        },
        walks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgnsConfig {
    pub dim: usize,
    /// Maximum context distance; each centre uses a uniform draw in
    /// `1..=window`.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_rate: f64,
    pub final_rate: f64,
    pub seed: u64,
    /// 1 gives bit-reproducible training. More workers update shared
    /// parameters without locking and results vary between runs.
    pub workers: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 128,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_rate: 0.025,
            final_rate: 1e-4,
            seed: 0,
            workers: 1,
        }
    }
}

impl SgnsConfig {
    fn validate(&self) -> Result<(), MetapathError> {
        let bad = |m: &str| Err(MetapathError::InvalidConfig(m.into()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if self.negatives < 1 {
            return bad("negatives must be at least 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.workers < 1 {
            return bad("workers must be at least 1");
        }
        if !(self.initial_rate > 0.0) || !(self.final_rate >= 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

/// Numerically stable `ln σ(x)`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Loss `−ln σ(u·v) − Σ_k ln σ(−u·n_k)` of one skip-gram pair and its
/// gradient with respect to every argument.
pub fn pair_loss_and_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradient {
    let s = dot(center, context);
    let mut loss = -log_sigmoid(s);
    let g_pos = sigmoid(s) - 1.0;
    let mut grad_center: Vec<f64> = context.iter().map(|v| g_pos * v).collect();
    let grad_context: Vec<f64> = center.iter().map(|u| g_pos * u).collect();
    let mut grad_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let sn = dot(center, n);
        loss -= log_sigmoid(-sn);
        let g = sigmoid(sn);
        grad_center.iter_mut().zip(*n).for_each(|(gc, x)| *gc += g * x);
        grad_negs.push(center.iter().map(|u| g * u).collect());
    }
    PairGradient {
        loss,
        center: grad_center,
        context: grad_context,
        negatives: grad_negs,
    }
}

/// Input and output vectors for every term seen in the walks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddingStore {
    pub dim: usize,
    /// Sorted term ids.
    pub ids: Vec<TermId>,
    pub input: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
}

impl NodeEmbeddingStore {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &TermId) -> Option<usize> {
        self.ids.binary_search(id).ok()
    }

    pub fn input_vector(&self, id: &TermId) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.input[i].as_slice())
    }

    pub fn output_vector(&self, id: &TermId) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.output[i].as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.output).flatten().all(|x| x.is_finite())
    }

    /// word2vec text format: `N dim`, then `term_id v1 ... vdim` per line.
    pub fn write_word2vec(table: &[Vec<f64>], ids: &[TermId], mut out: impl Write) -> std::io::Result<()> {
        let dim = table.first().map_or(0, Vec::len);
        writeln!(out, "{} {}", ids.len(), dim)?;
        for (id, v) in ids.iter().zip(table) {
            out.write_all(id.as_str().as_bytes())?;
            for x in v {
                write!(out, " {x:?}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_input(&self, out: impl Write) -> std::io::Result<()> {
        Self::write_word2vec(&self.input, &self.ids, out)
    }

    pub fn write_output(&self, out: impl Write) -> std::io::Result<()> {
        Self::write_word2vec(&self.output, &self.ids, out)
    }

    /// Reads a word2vec text table into `(ids, vectors)`, sorted by id.
    pub fn read_word2vec(
        reader: impl BufRead,
        origin: &str,
    ) -> Result<(Vec<TermId>, Vec<Vec<f64>>), MetapathError> {
        let err = |line: usize, message: String| MetapathError::Format {
            origin: origin.to_string(),
            line,
            message,
        };
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file".into()))??;
        let mut parts = header.split_whitespace();
        let mut num = |what: &str| -> Result<usize, MetapathError> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(1, format!("header lacks {what}")))
        };
        let n = num("count")?;
        let dim = num("dimension")?;
        let mut rows: Vec<(TermId, Vec<f64>)> = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            let mut fields = line.split_whitespace();
            let id = fields.next().expect("non-blank line has a field");
            let v: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| err(lineno, format!("{f:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if v.len() != dim {
                return Err(err(lineno, format!("expected {dim} values, found {}", v.len())));
            }
            rows.push((TermId::new(id), v));
        }
        if rows.len() != n {
            return Err(err(1, format!("header says {n} rows, found {}", rows.len())));
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(rows.into_iter().unzip())
    }

    /// Rebuilds a store from the two tables written by
    /// [`Self::write_input`] and [`Self::write_output`].
    pub fn from_tables(
        input: (Vec<TermId>, Vec<Vec<f64>>),
        output: (Vec<TermId>, Vec<Vec<f64>>),
    ) -> Result<Self, MetapathError> {
        if input.0 != output.0 {
            return Err(MetapathError::Format {
                origin: "embeddings".into(),
                line: 1,
                message: "input and output tables have different ids".into(),
            });
        }
        Ok(NodeEmbeddingStore {
            dim: input.1.first().map_or(0, Vec::len),
            ids: input.0,
            input: input.1,
            output: output.1,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean pair loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub pairs: u64,
}

struct SharedTable {
    dim: usize,
    data: Vec<AtomicU64>,
}

impl SharedTable {
    fn new(rows: usize, dim: usize, init: impl FnMut() -> f64) -> Self {
        let mut init = init;
        SharedTable {
            dim,
            data: (0..rows * dim).map(|_| AtomicU64::new(init().to_bits())).collect(),
        }
    }

    fn load(&self, row: usize, buf: &mut [f64]) {
        let base = row * self.dim;
        for (k, b) in buf.iter_mut().enumerate() {
            *b = f64::from_bits(self.data[base + k].load(Ordering::Relaxed));
        }
    }

    fn add(&self, row: usize, delta: &[f64], scale: f64) {
        let base = row * self.dim;
        for (k, d) in delta.iter().enumerate() {
            let cell = &self.data[base + k];
            let v = f64::from_bits(cell.load(Ordering::Relaxed)) + scale * d;
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_rows(self) -> Vec<Vec<f64>> {
        let dim = self.dim;
        let flat: Vec<f64> = self.data.into_iter().map(|a| f64::from_bits(a.into_inner())).collect();
        flat.chunks(dim).map(<[f64]>::to_vec).collect()
    }
}

/// Cumulative unigram^0.75 table over the vocabulary.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        NoiseTable {
            cumulative: counts
                .iter()
                .map(|&c| {
                    acc += (c as f64).powf(0.75);
                    acc
                })
                .collect(),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let r = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&x| x <= r)
            .min(self.cumulative.len() - 1)
    }
}

/// Trains skip-gram with negative sampling on the walk corpus.
///
/// The learning rate decays linearly from `initial_rate` to `final_rate`
/// over all epochs. Input vectors start uniform in ±0.5/dim and output
/// vectors start at zero. Returns vectors for every node that occurs in at
/// least one walk.
pub fn train_sgns(
    corpus: &WalkCorpus,
    cfg: &SgnsConfig,
) -> Result<(NodeEmbeddingStore, TrainReport), MetapathError> {
    cfg.validate()?;
    let n_nodes = corpus.ids.len();
    let mut counts = vec![0u64; n_nodes];
    for w in &corpus.walks {
        for &i in w {
            counts[i as usize] += 1;
        }
    }
    // Vocabulary in id order; `slot[node]` maps graph index to row.
    let mut vocab: Vec<usize> = (0..n_nodes).filter(|&i| counts[i] > 0).collect();
    if vocab.is_empty() {
        return Err(MetapathError::EmptyVocabulary);
    }
    vocab.sort_by(|&a, &b| corpus.ids[a].cmp(&corpus.ids[b]));
    let mut slot = vec![usize::MAX; n_nodes];
    for (row, &node) in vocab.iter().enumerate() {
        slot[node] = row;
    }
    let vocab_counts: Vec<u64> = vocab.iter().map(|&i| counts[i]).collect();
    let noise = NoiseTable::new(&vocab_counts);
    let walks: Vec<Vec<usize>> = corpus
        .walks
        .iter()
        .map(|w| w.iter().map(|&i| slot[i as usize]).collect())
        .collect();

    let dim = cfg.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[b"sgns-init"]));
    let half = 0.5 / dim as f64;
    let input = SharedTable::new(vocab.len(), dim, || init_rng.gen_range(-half..half));
    let output = SharedTable::new(vocab.len(), dim, || 0.0);

    let workers = cfg.workers.min(walks.len().max(1));
    let chunk = walks.len().div_ceil(workers);
    let shards: Vec<&[Vec<usize>]> = walks.chunks(chunk.max(1)).collect();
    let mut report = TrainReport::default();

    let name = |row: usize| corpus.ids[vocab[row]].to_string();
    for epoch in 0..cfg.epochs {
        let results: Vec<Result<(f64, u64), MetapathError>> = if shards.len() == 1 {
            vec![train_shard(shards[0], 0, epoch, cfg, &input, &output, &noise, &name)]
        } else {
            shards
                .par_iter()
                .enumerate()
                .map(|(w, s)| train_shard(s, w, epoch, cfg, &input, &output, &noise, &name))
                .collect()
        };
        let mut loss = 0.0;
        let mut pairs = 0;
        for r in results {
            let (l, p) = r?;
            loss += l;
            pairs += p;
        }
        report.pairs += pairs;
        report.epoch_loss.push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
        log::info!("sgns: epoch {epoch} mean loss {:.5}", report.epoch_loss[epoch]);
    }

    let store = NodeEmbeddingStore {
        dim,
        ids: vocab.iter().map(|&i| corpus.ids[i].clone()).collect(),
        input: input.into_rows(),
        output: output.into_rows(),
    };
    Ok((store, report))
}

#[allow(clippy::too_many_arguments)]
fn train_shard(
    walks: &[Vec<usize>],
    worker: usize,
    epoch: usize,
    cfg: &SgnsConfig,
    input: &SharedTable,
    output: &SharedTable,
    noise: &NoiseTable,
    name: &(dyn Fn(usize) -> String + Sync),
) -> Result<(f64, u64), MetapathError> {
    let seed = derive_seed(
        cfg.seed,
        &[b"sgns", &(worker as u64).to_le_bytes(), &(epoch as u64).to_le_bytes()],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..walks.len()).collect();
    order.shuffle(&mut rng);

    let shard_tokens: usize = walks.iter().map(Vec::len).sum();
    let total = (shard_tokens * cfg.epochs).max(1) as f64;
    let mut done = shard_tokens * epoch;

    let dim = cfg.dim;
    let mut u = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut grad_u = vec![0.0; dim];
    let mut loss_sum = 0.0;
    let mut pairs = 0u64;
    for &w in &order {
        let walk = &walks[w];
        for (i, &center) in walk.iter().enumerate() {
            let progress = done as f64 / total;
            let lr = cfg.initial_rate - (cfg.initial_rate - cfg.final_rate) * progress;
            done += 1;
            let reach = rng.gen_range(1..=cfg.window);
            let lo = i.saturating_sub(reach);
            let hi = (i + reach).min(walk.len() - 1);
            for (j, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                if j == i {
                    continue;
                }
                input.load(center, &mut u);
                grad_u.iter_mut().for_each(|g| *g = 0.0);
                let mut loss = 0.0;
                for k in 0..=cfg.negatives {
                    let (target, label) = if k == 0 {
                        (context, 1.0)
                    } else {
                        let t = noise.sample(&mut rng);
                        if t == context {
                            continue;
                        }
                        (t, 0.0)
                    };
                    output.load(target, &mut v);
                    let s = dot(&u, &v);
                    loss -= if label == 1.0 { log_sigmoid(s) } else { log_sigmoid(-s) };
                    // Descent direction scaled by the learning rate.
                    let g = (label - sigmoid(s)) * lr;
                    grad_u.iter_mut().zip(&v).for_each(|(a, x)| *a += g * x);
                    output.add(target, &u, g);
                }
                if !loss.is_finite() {
                    return Err(MetapathError::NonFiniteLoss {
                        epoch,
                        center: name(center),
                        context: name(context),
                        loss,
                    });
                }
                input.add(center, &grad_u, 1.0);
                loss_sum += loss;
                pairs += 1;
            }
        }
    }
    Ok((loss_sum, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cosine;
    use proptest::prelude::*;

    fn ids(names: &[&str]) -> Vec<TermId> {
        names.iter().map(|s| TermId::new(*s)).collect()
    }

    fn star() -> WalkGraph {
        WalkGraph::new(
            ids(&["c", "t1", "t2", "t3"]),
            vec![TermKind::Construct, TermKind::Task, TermKind::Task, TermKind::Task],
            &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)],
        )
    }

    fn next_frequencies(corpus: &WalkCorpus, from: u32, n: usize) -> Vec<f64> {
        let mut counts = vec![0usize; n];
        let mut total = 0;
        for w in &corpus.walks {
            for pair in w.windows(2) {
                if pair[0] == from {
                    counts[pair[1] as usize] += 1;
                    total += 1;
                }
            }
        }
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    #[test]
    fn star_transitions_are_uniform() {
        let cfg = WalkConfig { walks_per_node: 1500, walk_length: 11, seed: 4 };
        let corpus = generate_walks(&star(), &cfg).unwrap();
        let f = next_frequencies(&corpus, 0, 4);
        for &p in &f[1..] {
            assert!((p - 1.0 / 3.0).abs() <= 0.02, "{f:?}");
        }
    }

    #[test]
    fn weighted_transitions_follow_weights() {
        let g = WalkGraph::new(
            ids(&["c", "a", "b"]),
            vec![TermKind::Construct, TermKind::Task, TermKind::Task],
            &[(0, 1, 1.0), (0, 2, 3.0)],
        );
        let cfg = WalkConfig { walks_per_node: 2000, walk_length: 11, seed: 9 };
        let corpus = generate_walks(&g, &cfg).unwrap();
        let f = next_frequencies(&corpus, 0, 3);
        assert!((f[1] - 0.25).abs() <= 0.02, "{f:?}");
        assert!((f[2] - 0.75).abs() <= 0.02, "{f:?}");
    }

    #[test]
    fn same_kind_only_neighbours_truncate_immediately() {
        let g = WalkGraph::new(
            ids(&["a", "b", "c", "x"]),
            vec![TermKind::Task, TermKind::Task, TermKind::Construct, TermKind::Construct],
            &[(0, 1, 1.0), (2, 3, 1.0)],
        );
        let corpus = generate_walks(&g, &WalkConfig { walks_per_node: 3, walk_length: 5, seed: 0 }).unwrap();
        assert!(corpus.walks.iter().all(|w| w.len() == 1));
        assert_eq!(corpus.report.truncated, 12);
    }

    #[test]
    fn walks_need_both_kinds() {
        let g = WalkGraph::new(ids(&["a"]), vec![TermKind::Task], &[]);
        assert!(matches!(
            generate_walks(&g, &WalkConfig::default()),
            Err(MetapathError::MissingKind("construct"))
        ));
    }

    #[test]
    fn walk_export_lines() {
        let corpus = generate_walks(&star(), &WalkConfig { walks_per_node: 1, walk_length: 3, seed: 1 }).unwrap();
        let mut buf = Vec::new();
        corpus.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.split(' ').count() == 3));
    }

    #[test]
    fn zero_outputs_give_ln2_per_term() {
        let u = [0.3, -0.2, 0.9];
        let zero = [0.0; 3];
        let g = pair_loss_and_grad(&u, &zero, &[&zero[..]; 5]);
        assert!((g.loss - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dim = 6;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rand::Rng::gen_range(rng, -1.0..1.0)).collect() };
        let u = draw(&mut rng);
        let v = draw(&mut rng);
        let n: Vec<Vec<f64>> = (0..3).map(|_| draw(&mut rng)).collect();
        let nref: Vec<&[f64]> = n.iter().map(Vec::as_slice).collect();
        let g = pair_loss_and_grad(&u, &v, &nref);
        let h = 1e-5;
        for k in 0..dim {
            let mut up = u.clone();
            up[k] += h;
            let mut dn = u.clone();
            dn[k] -= h;
            let num = (pair_loss_and_grad(&up, &v, &nref).loss - pair_loss_and_grad(&dn, &v, &nref).loss) / (2.0 * h);
            assert!((num - g.center[k]).abs() < 1e-8);
        }
    }

    fn two_communities() -> WalkGraph {
        // c0 with t0..t3, c1 with t4..t7.
        let mut names = vec!["c0".to_string(), "c1".to_string()];
        names.extend((0..8).map(|i| format!("t{i}")));
        let mut kinds = vec![TermKind::Construct; 2];
        kinds.extend(vec![TermKind::Task; 8]);
        let mut edges = Vec::new();
        for t in 0..8 {
            let own = t / 4;
            edges.push((own, 2 + t, 50.0));
            edges.push((1 - own, 2 + t, 1.0));
        }
        WalkGraph::new(names.iter().map(|s| TermId::new(s.as_str())).collect(), kinds, &edges)
    }

    #[test]
    fn communities_separate_in_embedding() {
        let g = two_communities();
        let walks = generate_walks(&g, &WalkConfig { walks_per_node: 60, walk_length: 20, seed: 2 }).unwrap();
        let cfg = SgnsConfig { dim: 16, seed: 3, ..SgnsConfig::default() };
        let (store, report) = train_sgns(&walks, &cfg).unwrap();
        assert!(store.is_finite());
        let vec_of = |i: usize| store.input_vector(&g.ids[i]).unwrap().to_vec();
        let (mut intra, mut inter, mut ni, mut ne) = (0.0, 0.0, 0, 0);
        for a in 0..10 {
            for b in a + 1..10 {
                let ca = if a < 2 { a } else { (a - 2) / 4 };
                let cb = if b < 2 { b } else { (b - 2) / 4 };
                let c = cosine(&vec_of(a), &vec_of(b));
                if ca == cb {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    ne += 1;
                }
            }
        }
        let (intra, inter) = (intra / ni as f64, inter / ne as f64);
        assert!(intra - inter >= 0.2, "intra {intra} inter {inter}");
        // Loss over the first three epochs: at most one increase of ≤ 1%.
        let l = &report.epoch_loss;
        let rises: Vec<f64> = l[..3].windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] / w[0] - 1.0).collect();
        assert!(rises.len() <= 1 && rises.iter().all(|r| *r <= 0.01), "{l:?}");
    }

    #[test]
    fn single_worker_is_bit_reproducible() {
        let g = two_communities();
        let walks = generate_walks(&g, &WalkConfig { walks_per_node: 10, walk_length: 10, seed: 5 }).unwrap();
        let cfg = SgnsConfig { dim: 8, epochs: 2, seed: 1, ..SgnsConfig::default() };
        let (a, _) = train_sgns(&walks, &cfg).unwrap();
        let (b, _) = train_sgns(&walks, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_mode_trains_finite_vectors() {
        let g = two_communities();
        let walks = generate_walks(&g, &WalkConfig { walks_per_node: 20, walk_length: 10, seed: 5 }).unwrap();
        let cfg = SgnsConfig { dim: 8, epochs: 2, workers: 4, ..SgnsConfig::default() };
        let (store, report) = train_sgns(&walks, &cfg).unwrap();
        assert!(store.is_finite());
        assert_eq!(report.epoch_loss.len(), 2);
    }

    #[test]
    fn word2vec_round_trip() {
        let g = two_communities();
        let walks = generate_walks(&g, &WalkConfig { walks_per_node: 5, walk_length: 6, seed: 5 }).unwrap();
        let (store, _) = train_sgns(&walks, &SgnsConfig { dim: 4, epochs: 1, ..SgnsConfig::default() }).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        store.write_input(&mut a).unwrap();
        store.write_output(&mut b).unwrap();
        assert!(String::from_utf8(a.clone()).unwrap().starts_with("10 4\n"));
        let back = NodeEmbeddingStore::from_tables(
            NodeEmbeddingStore::read_word2vec(&a[..], "in").unwrap(),
            NodeEmbeddingStore::read_word2vec(&b[..], "out").unwrap(),
        )
        .unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn config_invariants_enforced() {
        let walks = generate_walks(&star(), &WalkConfig { walks_per_node: 1, walk_length: 2, seed: 0 }).unwrap();
        for cfg in [
            SgnsConfig { dim: 1, ..SgnsConfig::default() },
            SgnsConfig { window: 0, ..SgnsConfig::default() },
            SgnsConfig { negatives: 0, ..SgnsConfig::default() },
        ] {
            assert!(matches!(train_sgns(&walks, &cfg), Err(MetapathError::InvalidConfig(_))));
        }
        assert!(matches!(
            generate_walks(&star(), &WalkConfig { walk_length: 1, ..WalkConfig::default() }),
            Err(MetapathError::InvalidConfig(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn walks_alternate_kinds(
            weights in proptest::collection::vec(0.1f64..10.0, 12),
            seed in 0u64..500,
        ) {
            // Three constructs, four tasks, complete bipartite plus same-kind noise edges.
            let mut edges = Vec::new();
            for c in 0..3 {
                for t in 0..4 {
                    edges.push((c, 3 + t, weights[c * 4 + t]));
                }
            }
            edges.push((0, 1, 100.0));
            edges.push((3, 4, 100.0));
            let mut kinds = vec![TermKind::Construct; 3];
            kinds.extend(vec![TermKind::Task; 4]);
            let g = WalkGraph::new(ids(&["c0", "c1", "c2", "t0", "t1", "t2", "t3"]), kinds, &edges);
            let corpus = generate_walks(&g, &WalkConfig { walks_per_node: 5, walk_length: 15, seed }).unwrap();
            for w in &corpus.walks {
                prop_assert_eq!(w.len(), 15);
                for pair in w.windows(2) {
                    prop_assert_ne!(g.kinds[pair[0] as usize], g.kinds[pair[1] as usize]);
                }
            }
        }
    }
}
