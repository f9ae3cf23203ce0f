//! Hierarchical density clustering (HDBSCAN) with soft membership.
//!
//! The pipeline is the usual one: core distances, mutual-reachability
//! distances, a minimum spanning tree over them, the single-linkage
//! dendrogram read off the sorted tree edges, condensation at
//! `min_cluster_size`, and excess-of-mass cluster selection. Soft membership
//! is the normalized inverse distance from a point to each cluster's
//! exemplars.
//!
//! Everything here is deterministic: ties are broken by the lowest point
//! index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::metrics::{cosine, euclidean};

/// Distances at or below this are treated as zero when inverting.
pub const DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least min_samples = {min_samples} points, got {n}")]
    TooFewPoints { n: usize, min_samples: usize },
    #[error("point has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("points have inconsistent dimensions")]
    RaggedInput,
    #[error("distance matrix contains a non-finite value")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("model has no clusters")]
    NoClusters,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    /// `1 − cos(a, b)`, clamped at 0.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => euclidean(a, b),
            Metric::Cosine => (1.0 - cosine(a, b)).max(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub min_samples: usize,
    pub min_cluster_size: usize,
    pub metric: Metric,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            min_samples: 5,
            min_cluster_size: 15,
            metric: Metric::Cosine,
        }
    }
}

/// Dense symmetric matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        SquareMatrix {
            n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

fn check_rows(points: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(ClusterError::RaggedInput);
    }
    Ok(dim)
}

/// Pairwise distances, computed in parallel over rows.
pub fn distance_matrix(points: &[Vec<f64>], metric: Metric) -> SquareMatrix {
    let n = points.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { metric.distance(&points[i], &points[j]) })
                .collect()
        })
        .collect();
    // Mirror the lower triangle so the matrix is exactly symmetric even if
    // the metric is not bitwise symmetric.
    let mut m = SquareMatrix::from_rows(rows);
    for i in 0..n {
        for j in 0..i {
            let v = m.get(i, j);
            m.set(j, i, v);
        }
    }
    m
}

/// Distance from each point to its `min_samples`-th nearest neighbour,
/// counting the point itself as the first.
pub fn core_distances(dist: &SquareMatrix, min_samples: usize) -> Vec<f64> {
    (0..dist.n())
        .map(|i| {
            let mut row = dist.row(i).to_vec();
            row.sort_by(f64::total_cmp);
            row[min_samples - 1]
        })
        .collect()
}

/// `mr(a, b) = max(core(a), core(b), d(a, b))`, zero on the diagonal.
pub fn mutual_reachability(
    points: &[Vec<f64>],
    min_samples: usize,
    metric: Metric,
) -> Result<SquareMatrix, ClusterError> {
    check_rows(points)?;
    if min_samples == 0 {
        return Err(ClusterError::InvalidParams("min_samples must be >= 1".into()));
    }
    if points.len() < min_samples {
        return Err(ClusterError::TooFewPoints {
            n: points.len(),
            min_samples,
        });
    }
    let dist = distance_matrix(points, metric);
    Ok(mutual_reachability_from_distances(&dist, min_samples))
}

pub fn mutual_reachability_from_distances(dist: &SquareMatrix, min_samples: usize) -> SquareMatrix {
    let core = core_distances(dist, min_samples);
    let n = dist.n();
    let mut mr = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                mr.set(i, j, dist.get(i, j).max(core[i]).max(core[j]));
            }
        }
    }
    mr
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Prim's algorithm over a dense matrix. Ties go to the lowest index.
pub fn minimum_spanning_tree(m: &SquareMatrix) -> Vec<MstEdge> {
    let n = m.n();
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let row = m.row(current);
        for j in 0..n {
            if !in_tree[j] && row[j] < best[j] {
                best[j] = row[j];
                parent[j] = current;
            }
        }
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < next_w) {
                next = j;
                next_w = best[j];
            }
        }
        in_tree[next] = true;
        edges.push(MstEdge {
            a: parent[next].min(next),
            b: parent[next].max(next),
            weight: next_w,
        });
        current = next;
    }
    edges
}

/// Sum of edge weights taken in ascending order, so that any two spanning
/// trees with the same weight multiset give bitwise-equal totals.
pub fn total_weight(edges: &[MstEdge]) -> f64 {
    let mut w: Vec<f64> = edges.iter().map(|e| e.weight).collect();
    w.sort_by(f64::total_cmp);
    w.iter().sum::<f64>() + 0.0
}

/// One row of the condensed tree. Children below `n_points` are points,
/// the rest are clusters; the root cluster is `n_points`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondensedEdge {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub n_points: usize,
    pub mst: Vec<MstEdge>,
    pub condensed: Vec<CondensedEdge>,
}

impl Hierarchy {
    pub fn root(&self) -> usize {
        self.n_points
    }

    /// Number of cluster ids (root included).
    pub fn n_clusters(&self) -> usize {
        self.condensed
            .iter()
            .filter(|e| e.child >= self.n_points)
            .map(|e| e.child + 1 - self.n_points)
            .max()
            .unwrap_or(1)
    }

    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parent", "child", "lambda", "size"])?;
        for e in &self.condensed {
            w.write_record([
                e.parent.to_string(),
                e.child.to_string(),
                format!("{:?}", e.lambda),
                e.size.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn weight_to_lambda(w: f64) -> f64 {
    1.0 / w.max(DISTANCE_FLOOR)
}

struct Dendrogram {
    // Internal node k (id n + k) has children (left, right), merge weight, size.
    left: Vec<usize>,
    right: Vec<usize>,
    weight: Vec<f64>,
    size: Vec<usize>,
    n: usize,
}

impl Dendrogram {
    fn from_mst(n: usize, mst: &[MstEdge]) -> Self {
        let mut order: Vec<usize> = (0..mst.len()).collect();
        order.sort_by(|&x, &y| {
            mst[x]
                .weight
                .total_cmp(&mst[y].weight)
                .then((mst[x].a, mst[x].b).cmp(&(mst[y].a, mst[y].b)))
        });
        let mut uf_parent: Vec<usize> = (0..2 * n).collect();
        let mut d = Dendrogram {
            left: Vec::new(),
            right: Vec::new(),
            weight: Vec::new(),
            size: Vec::new(),
            n,
        };
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for idx in order {
            let e = mst[idx];
            let ra = find(&mut uf_parent, e.a);
            let rb = find(&mut uf_parent, e.b);
            let node = n + d.left.len();
            let sa = if ra < n { 1 } else { d.size[ra - n] };
            let sb = if rb < n { 1 } else { d.size[rb - n] };
            d.left.push(ra);
            d.right.push(rb);
            d.weight.push(e.weight);
            d.size.push(sa + sb);
            uf_parent[ra] = node;
            uf_parent[rb] = node;
        }
        d
    }

    fn size_of(&self, node: usize) -> usize {
        if node < self.n {
            1
        } else {
            self.size[node - self.n]
        }
    }

    fn leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n {
                out.push(x);
            } else {
                stack.push(self.right[x - self.n]);
                stack.push(self.left[x - self.n]);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Builds the MST over `mr` and condenses its single-linkage hierarchy.
///
/// With `n ≤ min_cluster_size` (or no split ever producing two large
/// children) the result is a single root cluster.
pub fn build_condensed_tree(
    mr: &SquareMatrix,
    min_cluster_size: usize,
) -> Result<Hierarchy, ClusterError> {
    if min_cluster_size < 2 {
        return Err(ClusterError::InvalidParams(
            "min_cluster_size must be >= 2".into(),
        ));
    }
    if mr.data.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let n = mr.n();
    let mst = minimum_spanning_tree(mr);
    let mut condensed = Vec::new();
    if n <= 1 {
        return Ok(Hierarchy {
            n_points: n,
            mst,
            condensed,
        });
    }
    let dendro = Dendrogram::from_mst(n, &mst);
    let top = 2 * n - 2;
    let mut next_cluster = n + 1;
    // (dendrogram node, cluster label it belongs to)
    let mut stack = vec![(top, n)];
    while let Some((node, label)) = stack.pop() {
        if node < n {
            // Only reachable when the whole input is one point.
            continue;
        }
        let k = node - n;
        let (l, r) = (dendro.left[k], dendro.right[k]);
        let lambda = weight_to_lambda(dendro.weight[k]);
        let (ls, rs) = (dendro.size_of(l), dendro.size_of(r));
        let big_l = ls >= min_cluster_size;
        let big_r = rs >= min_cluster_size;
        match (big_l, big_r) {
            (true, true) => {
                let cl = next_cluster;
                let cr = next_cluster + 1;
                next_cluster += 2;
                condensed.push(CondensedEdge { parent: label, child: cl, lambda, size: ls });
                condensed.push(CondensedEdge { parent: label, child: cr, lambda, size: rs });
                stack.push((r, cr));
                stack.push((l, cl));
            }
            (true, false) | (false, true) => {
                let (big, small) = if big_l { (l, r) } else { (r, l) };
                for p in dendro.leaves(small) {
                    condensed.push(CondensedEdge { parent: label, child: p, lambda, size: 1 });
                }
                stack.push((big, label));
            }
            (false, false) => {
                for side in [l, r] {
                    for p in dendro.leaves(side) {
                        condensed.push(CondensedEdge { parent: label, child: p, lambda, size: 1 });
                    }
                }
            }
        }
    }
    Ok(Hierarchy {
        n_points: n,
        mst,
        condensed,
    })
}

/// Hard cluster selection.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    /// Per point: dense cluster id or `None` for noise.
    pub labels: Vec<Option<usize>>,
    /// Condensed-tree cluster id for each dense cluster id.
    pub selected: Vec<usize>,
    /// Stability of each selected cluster.
    pub stabilities: Vec<f64>,
}

/// Excess-of-mass selection over the condensed tree.
///
/// The root is selected only when it never splits, so a structureless input
/// yields one cluster with no noise rather than all noise.
pub fn extract_clusters(h: &Hierarchy) -> Extraction {
    let n = h.n_points;
    if n == 0 {
        return Extraction {
            labels: Vec::new(),
            selected: Vec::new(),
            stabilities: Vec::new(),
        };
    }
    let n_clusters = h.n_clusters();
    let mut birth = vec![0.0f64; n_clusters];
    let mut parent_of = vec![usize::MAX; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for e in &h.condensed {
        if e.child >= n {
            let c = e.child - n;
            birth[c] = e.lambda;
            parent_of[c] = e.parent - n;
            children[e.parent - n].push(c);
        }
    }
    let mut stability = vec![0.0f64; n_clusters];
    for e in &h.condensed {
        let p = e.parent - n;
        stability[p] += (e.lambda - birth[p]) * e.size as f64;
    }

    let mut is_selected = vec![false; n_clusters];
    if children[0].is_empty() {
        is_selected[0] = true;
    } else {
        let mut subtree = stability.clone();
        // Children always carry larger ids than their parent.
        for c in (1..n_clusters).rev() {
            if children[c].is_empty() {
                is_selected[c] = true;
                continue;
            }
            let child_sum: f64 = children[c].iter().map(|&k| subtree[k]).sum();
            if child_sum > stability[c] {
                subtree[c] = child_sum;
            } else {
                is_selected[c] = true;
                let mut stack = children[c].clone();
                while let Some(k) = stack.pop() {
                    is_selected[k] = false;
                    stack.extend(children[k].iter().copied());
                }
            }
        }
    }

    // Each point belongs to the cluster it fell out of.
    let mut point_cluster = vec![0usize; n];
    for e in &h.condensed {
        if e.child < n {
            point_cluster[e.child] = e.parent - n;
        }
    }
    let selected_ancestor = |mut c: usize| -> Option<usize> {
        loop {
            if is_selected[c] {
                return Some(c);
            }
            if parent_of[c] == usize::MAX {
                return None;
            }
            c = parent_of[c];
        }
    };
    let raw: Vec<Option<usize>> = if n == 1 {
        vec![Some(0)]
    } else {
        point_cluster.iter().map(|&c| selected_ancestor(c)).collect()
    };

    // Dense ids ordered by each cluster's smallest member index.
    let mut order: Vec<usize> = Vec::new();
    for c in raw.iter().flatten() {
        if !order.contains(c) {
            order.push(*c);
        }
    }
    let labels = raw
        .iter()
        .map(|c| c.map(|c| order.iter().position(|&x| x == c).unwrap()))
        .collect();
    Extraction {
        labels,
        stabilities: order.iter().map(|&c| stability[c].max(0.0)).collect(),
        selected: order.iter().map(|&c| c + n).collect(),
    }
}

/// A fitted clustering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub metric: Metric,
    pub dim: usize,
    pub labels: Vec<Option<usize>>,
    /// Exemplar point indices per cluster.
    pub exemplar_indices: Vec<Vec<usize>>,
    /// Exemplar coordinates per cluster.
    pub exemplars: Vec<Vec<Vec<f64>>>,
    pub stabilities: Vec<f64>,
    pub hierarchy: Hierarchy,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.exemplars.len()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Normalized inverse distance to each cluster's nearest exemplar.
    pub fn soft_membership(&self, point: &[f64]) -> Result<Vec<f64>, ClusterError> {
        if point.len() != self.dim {
            return Err(ClusterError::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        if self.exemplars.is_empty() {
            return Err(ClusterError::NoClusters);
        }
        let inv: Vec<f64> = self
            .exemplars
            .iter()
            .map(|ex| {
                let d = ex
                    .iter()
                    .map(|e| self.metric.distance(point, e))
                    .fold(f64::INFINITY, f64::min);
                1.0 / d.max(DISTANCE_FLOOR)
            })
            .collect();
        let total: f64 = inv.iter().sum();
        Ok(inv.iter().map(|v| v / total).collect())
    }
}

/// Runs the whole clustering on `points`.
pub fn fit(points: &[Vec<f64>], params: &ClusterParams) -> Result<ClusterModel, ClusterError> {
    let dim = check_rows(points)?;
    let mr = mutual_reachability(points, params.min_samples, params.metric)?;
    let hierarchy = build_condensed_tree(&mr, params.min_cluster_size)?;
    let extraction = extract_clusters(&hierarchy);
    let exemplar_indices = exemplars(&hierarchy, &extraction);
    let exemplars = exemplar_indices
        .iter()
        .map(|idx| idx.iter().map(|&i| points[i].clone()).collect())
        .collect();
    Ok(ClusterModel {
        metric: params.metric,
        dim,
        labels: extraction.labels,
        exemplar_indices,
        exemplars,
        stabilities: extraction.stabilities,
        hierarchy,
    })
}

/// Points that persist longest in each leaf under a selected cluster.
fn exemplars(h: &Hierarchy, ex: &Extraction) -> Vec<Vec<usize>> {
    let n = h.n_points;
    let n_clusters = h.n_clusters();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut points: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_clusters];
    for e in &h.condensed {
        if e.child >= n {
            children[e.parent - n].push(e.child - n);
        } else {
            points[e.parent - n].push((e.child, e.lambda));
        }
    }
    if n == 1 {
        return vec![vec![0]];
    }
    ex.selected
        .iter()
        .map(|&sel| {
            let mut out = Vec::new();
            let mut stack = vec![sel - n];
            while let Some(c) = stack.pop() {
                if children[c].is_empty() {
                    let max = points[c]
                        .iter()
                        .map(|(_, l)| *l)
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.extend(points[c].iter().filter(|(_, l)| *l == max).map(|(p, _)| *p));
                } else {
                    stack.extend(children[c].iter().copied());
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::adjusted_rand_index;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|r| r.to_vec()).collect()
    }

    /// Kruskal over every pair, sorted, with union-find.
    fn brute_force_mst_weight(m: &SquareMatrix) -> f64 {
        let n = m.n();
        let mut all: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                all.push((m.get(i, j), i, j));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut uf: Vec<usize> = (0..n).collect();
        fn root(uf: &mut Vec<usize>, mut x: usize) -> usize {
            while uf[x] != x {
                x = uf[x];
            }
            x
        }
        let mut used = Vec::new();
        for (w, i, j) in all {
            let (a, b) = (root(&mut uf, i), root(&mut uf, j));
            if a != b {
                uf[a] = b;
                used.push(w);
            }
        }
        used.sort_by(f64::total_cmp);
        used.iter().sum()
    }

    fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::new();
        let mut y = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..per {
                p.push(vec![
                    c[0] + rng.gen_range(-spread..spread),
                    c[1] + rng.gen_range(-spread..spread),
                ]);
                y.push(k);
            }
        }
        (p, y)
    }

    #[test]
    fn collinear_mutual_reachability() {
        let p = pts(&[&[0.0], &[1.0], &[10.0]]);
        let mr = mutual_reachability(&p, 2, Metric::Euclidean).unwrap();
        assert_eq!(mr.get(0, 1), 1.0);
        assert_eq!(mr.get(1, 2), 9.0);
        assert_eq!(mr.get(0, 2), 10.0);
        assert!(mr.is_symmetric());
        assert_eq!(mr.get(2, 2), 0.0);
    }

    #[test]
    fn min_samples_one_is_raw_distance() {
        let p = pts(&[&[0.0, 0.0], &[3.0, 4.0], &[1.0, 1.0]]);
        let mr = mutual_reachability(&p, 1, Metric::Euclidean).unwrap();
        assert_eq!(mr, distance_matrix(&p, Metric::Euclidean));
    }

    #[test]
    fn duplicate_points_take_core_distance() {
        // Core distance with min_samples = 3 for the duplicates is 3.
        let p = pts(&[&[0.0], &[0.0], &[3.0], &[7.0]]);
        let mr = mutual_reachability(&p, 3, Metric::Euclidean).unwrap();
        assert_eq!(mr.get(0, 1), 3.0);
        let mr2 = mutual_reachability(&p, 2, Metric::Euclidean).unwrap();
        assert_eq!(mr2.get(0, 1), 0.0);
    }

    #[test]
    fn too_few_points() {
        let p = pts(&[&[0.0], &[1.0]]);
        assert_eq!(
            mutual_reachability(&p, 3, Metric::Euclidean),
            Err(ClusterError::TooFewPoints { n: 2, min_samples: 3 })
        );
    }

    #[test]
    fn two_blobs_give_two_clusters() {
        let (p, _) = blobs(1, &[[0.0, 0.0], [20.0, 20.0]], 5, 0.5);
        let mr = mutual_reachability(&p, 2, Metric::Euclidean).unwrap();
        let h = build_condensed_tree(&mr, 3).unwrap();
        assert_eq!(total_weight(&h.mst), brute_force_mst_weight(&mr));
        let ex = extract_clusters(&h);
        assert_eq!(ex.selected.len(), 2);
        assert_eq!(ex.labels[..5].iter().collect::<std::collections::BTreeSet<_>>().len(), 1);
        assert_ne!(ex.labels[0], ex.labels[5]);
        assert!(ex.stabilities.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn identical_points_one_cluster() {
        let p = vec![vec![1.0, 2.0]; 8];
        let model = fit(
            &p,
            &ClusterParams { min_samples: 2, min_cluster_size: 3, metric: Metric::Euclidean },
        )
        .unwrap();
        assert_eq!(model.n_clusters(), 1);
        assert_eq!(model.noise_count(), 0);
    }

    #[test]
    fn small_input_is_single_root() {
        let p = pts(&[&[0.0], &[1.0], &[5.0]]);
        let model = fit(
            &p,
            &ClusterParams { min_samples: 1, min_cluster_size: 5, metric: Metric::Euclidean },
        )
        .unwrap();
        assert_eq!(model.labels, vec![Some(0); 3]);
    }

    #[test]
    fn three_blobs_recovered() {
        let (p, y) = blobs(7, &[[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]], 15, 1.0);
        let model = fit(
            &p,
            &ClusterParams { min_samples: 3, min_cluster_size: 5, metric: Metric::Euclidean },
        )
        .unwrap();
        let got: Vec<i64> = model.labels.iter().map(|l| l.map_or(-1, |x| x as i64)).collect();
        assert_eq!(adjusted_rand_index(&got, &y), 1.0);
    }

    #[test]
    fn soft_membership_rules() {
        let (p, _) = blobs(3, &[[0.0, 0.0], [10.0, 0.0]], 8, 0.5);
        let model = fit(
            &p,
            &ClusterParams { min_samples: 2, min_cluster_size: 4, metric: Metric::Euclidean },
        )
        .unwrap();
        assert_eq!(model.n_clusters(), 2);
        let c1 = model.exemplars[1][0].clone();
        let m = model.soft_membership(&c1).unwrap();
        assert!(m[1] > 0.99);

        // Two single-exemplar clusters placed by hand.
        let mut sym = model.clone();
        sym.exemplars = vec![vec![vec![-1.0, 0.0]], vec![vec![1.0, 0.0]]];
        let half = sym.soft_membership(&[0.0, 3.0]).unwrap();
        assert!((half[0] - 0.5).abs() < 1e-9 && (half[1] - 0.5).abs() < 1e-9);

        assert_eq!(
            model.soft_membership(&[1.0]),
            Err(ClusterError::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn condensed_tree_csv() {
        let (p, _) = blobs(1, &[[0.0, 0.0], [20.0, 20.0]], 5, 0.5);
        let model = fit(
            &p,
            &ClusterParams { min_samples: 2, min_cluster_size: 3, metric: Metric::Euclidean },
        )
        .unwrap();
        let mut buf = Vec::new();
        model.hierarchy.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("parent,child,lambda,size\n"));
        assert_eq!(text.lines().count(), model.hierarchy.condensed.len() + 1);
    }

    proptest! {
        #[test]
        fn mst_matches_brute_force(
            raw in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 2..50),
            k in 1usize..4,
        ) {
            let k = k.min(raw.len());
            let mr = mutual_reachability(&raw, k, Metric::Euclidean).unwrap();
            prop_assert!(mr.is_symmetric());
            let d = distance_matrix(&raw, Metric::Euclidean);
            for i in 0..raw.len() {
                for j in 0..raw.len() {
                    prop_assert!(mr.get(i, j) >= d.get(i, j));
                }
            }
            let h = build_condensed_tree(&mr, 2).unwrap();
            prop_assert_eq!(total_weight(&h.mst), brute_force_mst_weight(&mr));
        }

        #[test]
        fn soft_membership_is_a_distribution(
            q in proptest::collection::vec(-20.0f64..30.0, 2)
        ) {
            let (p, _) = blobs(5, &[[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]], 10, 1.0);
            let model = fit(&p, &ClusterParams { min_samples: 3, min_cluster_size: 5, metric: Metric::Euclidean }).unwrap();
            let m = model.soft_membership(&q).unwrap();
            prop_assert!(m.iter().all(|x| *x >= 0.0));
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn clustering_is_deterministic(seed in 0u64..50) {
            let (p, _) = blobs(seed, &[[0.0, 0.0], [6.0, 0.0]], 12, 2.0);
            let params = ClusterParams { min_samples: 3, min_cluster_size: 4, metric: Metric::Euclidean };
            prop_assert_eq!(fit(&p, &params).unwrap(), fit(&p, &params).unwrap());
        }
    }
}
