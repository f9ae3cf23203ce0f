//! Queries over the trained artifacts: embedding-arithmetic task
//! recommendation, construct-covering task batteries and task distances.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::cluster::{minimum_spanning_tree, SquareMatrix};
use crate::corpus::{Lexicon, TermId, TermKind};
use crate::graph::TermGraph;
use crate::hypergraph::Hypergraph;
use crate::metapath::NodeEmbeddingStore;
use crate::metrics::{cosine, norm};

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("empty query")]
    Empty,
    #[error("syntax error at character {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown term {term:?}; closest matches: {}", suggestions.join(", "))]
    UnknownTerm { term: String, suggestions: Vec<String> },
    #[error("query has no positive terms")]
    EmptyPositives,
    #[error("term {0} appears more than once")]
    Duplicate(TermId),
    #[error("term {0} has no embedding")]
    NotEmbedded(TermId),
    #[error("query vector is numerically zero")]
    Degenerate,
    #[error("constructs with empty hyperedges: {}", join_ids(.0))]
    EmptyHyperedges(Vec<TermId>),
    #[error("unknown id {0}")]
    UnknownId(TermId),
    #[error("{id} is a {actual}, expected a {expected}")]
    WrongKind {
        id: TermId,
        expected: &'static str,
        actual: &'static str,
    },
    #[error("top_k must be at least 1")]
    BadTopK,
}

fn join_ids(ids: &[TermId]) -> String {
    ids.iter().map(TermId::as_str).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub positives: Vec<TermId>,
    pub negatives: Vec<TermId>,
    pub top_k: usize,
}

pub const DEFAULT_TOP_K: usize = 10;
const MAX_SUGGESTIONS: usize = 3;

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Resolves a free-text term against lexicon ids and names, ignoring case
/// and whitespace.
pub fn resolve_term(text: &str, lexicon: &Lexicon) -> Result<TermId, QueryError> {
    let key = squash(text);
    if let Some(t) = lexicon
        .terms()
        .find(|t| squash(t.id.as_str()) == key || squash(&t.name) == key)
    {
        return Ok(t.id.clone());
    }
    let mut scored: Vec<(usize, &str)> = lexicon
        .terms()
        .map(|t| (strsim::levenshtein(&key, &squash(&t.name)), t.name.as_str()))
        .collect();
    scored.sort();
    Err(QueryError::UnknownTerm {
        term: text.trim().to_string(),
        suggestions: scored
            .into_iter()
            .take(MAX_SUGGESTIONS)
            .map(|(_, n)| n.to_string())
            .collect(),
    })
}

/// Parses `term (('+'|'-') term)*`, optionally wrapped in parentheses.
///
/// A `-` is an operator only at the start of the expression or when it
/// touches whitespace, so hyphenated names such as `n-back` stay whole.
pub fn parse_query(text: &str, lexicon: &Lexicon) -> Result<Query, QueryError> {
    let mut body = text.trim();
    if body.is_empty() {
        return Err(QueryError::Empty);
    }
    let mut offset = text.len() - text.trim_start().len();
    if body.starts_with('(') {
        if !body.ends_with(')') {
            return Err(QueryError::Syntax {
                position: offset + body.len(),
                message: "missing closing parenthesis".into(),
            });
        }
        body = &body[1..body.len() - 1];
        offset += 1;
    } else if body.ends_with(')') {
        return Err(QueryError::Syntax {
            position: offset + body.len() - 1,
            message: "unmatched closing parenthesis".into(),
        });
    }

    // (sign, text, start position)
    let mut parts: Vec<(char, String, usize)> = Vec::new();
    let mut sign = '+';
    let mut current = String::new();
    let mut start = offset;
    let chars: Vec<(usize, char)> = body.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        let is_op = match c {
            '+' => true,
            '-' => {
                let before = k == 0 || chars[k - 1].1.is_whitespace() || current.trim().is_empty();
                let after = chars.get(k + 1).is_none_or(|(_, n)| n.is_whitespace());
                before || after
            }
            '(' | ')' => {
                return Err(QueryError::Syntax {
                    position: offset + i,
                    message: "nested parentheses are not supported".into(),
                })
            }
            _ => false,
        };
        if is_op {
            if current.trim().is_empty() {
                if !parts.is_empty() || k != 0 || c == '+' {
                    return Err(QueryError::Syntax {
                        position: offset + i,
                        message: format!("expected a term before {c:?}"),
                    });
                }
            } else {
                parts.push((sign, std::mem::take(&mut current), start));
            }
            sign = c;
            start = offset + i + 1;
        } else {
            current.push(c);
        }
    }
    if current.trim().is_empty() {
        return Err(QueryError::Syntax {
            position: offset + body.len(),
            message: "expected a term at end of query".into(),
        });
    }
    parts.push((sign, current, start));

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut seen = BTreeSet::new();
    for (sign, term, _) in parts {
        let id = resolve_term(&term, lexicon)?;
        if !seen.insert(id.clone()) {
            return Err(QueryError::Duplicate(id));
        }
        if sign == '+' {
            positives.push(id);
        } else {
            negatives.push(id);
        }
    }
    if positives.is_empty() {
        return Err(QueryError::EmptyPositives);
    }
    Ok(Query {
        positives,
        negatives,
        top_k: DEFAULT_TOP_K,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub term: TermId,
    pub score: f64,
}

fn mean_vector(ids: &[TermId], store: &NodeEmbeddingStore) -> Result<Vec<f64>, QueryError> {
    let mut acc = vec![0.0; store.dim];
    for id in ids {
        let v = store
            .input_vector(id)
            .ok_or_else(|| QueryError::NotEmbedded(id.clone()))?;
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    if !ids.is_empty() {
        acc.iter_mut().for_each(|a| *a /= ids.len() as f64);
    }
    Ok(acc)
}

/// Ranks tasks by cosine to `mean(positives) − mean(negatives)`.
///
/// Query terms are excluded; ties are broken by term id.
pub fn recommend_tasks(
    q: &Query,
    store: &NodeEmbeddingStore,
    lexicon: &Lexicon,
) -> Result<Vec<Scored>, QueryError> {
    if q.top_k == 0 {
        return Err(QueryError::BadTopK);
    }
    if q.positives.is_empty() {
        return Err(QueryError::EmptyPositives);
    }
    let pos = mean_vector(&q.positives, store)?;
    let neg = mean_vector(&q.negatives, store)?;
    let query: Vec<f64> = pos.iter().zip(&neg).map(|(p, n)| p - n).collect();
    if norm(&query) < 1e-12 {
        return Err(QueryError::Degenerate);
    }
    let used: BTreeSet<&TermId> = q.positives.iter().chain(&q.negatives).collect();
    let mut ranked: Vec<Scored> = store
        .ids
        .iter()
        .zip(&store.input)
        .filter(|(id, _)| lexicon.kind_of(id) == Some(TermKind::Task) && !used.contains(id))
        .map(|(id, v)| Scored {
            term: id.clone(),
            score: cosine(&query, v),
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.term.cmp(&b.term)));
    ranked.truncate(q.top_k);
    Ok(ranked)
}

/// `{query, results: [{term, score}]}`
pub fn results_json(query: &str, results: &[Scored]) -> serde_json::Value {
    serde_json::json!({ "query": query, "results": results })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryTask {
    pub task: TermId,
    /// Membership summed over the queried constructs.
    pub membership: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub a: TermId,
    pub b: TermId,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub constructs: Vec<TermId>,
    pub tasks: Vec<BatteryTask>,
    pub edges: Vec<TreeEdge>,
    pub total_distance: f64,
}

fn graph_index(graph: &TermGraph, id: &TermId) -> Result<usize, QueryError> {
    graph.index_of(id).ok_or_else(|| QueryError::UnknownId(id.clone()))
}

/// Finds a small set of tasks covering every queried construct.
///
/// The tasks of all queried hyperedges are joined by a minimum spanning
/// tree under task-task divergence. Leaves are then removed one at a time,
/// farthest first, as long as each queried hyperedge keeps at least one
/// task. Among equally distant leaves the one with the lowest membership
/// goes first.
pub fn build_battery(
    constructs: &[TermId],
    h: &Hypergraph,
    graph: &TermGraph,
) -> Result<Battery, QueryError> {
    let mut queried: Vec<TermId> = constructs.to_vec();
    queried.sort();
    queried.dedup();
    if queried.is_empty() {
        return Err(QueryError::Empty);
    }
    let mut edges_of = Vec::new();
    let mut empty = Vec::new();
    for c in &queried {
        let e = h
            .hyperedges
            .get(c)
            .ok_or_else(|| QueryError::UnknownId(c.clone()))?;
        if e.is_empty() {
            empty.push(c.clone());
        }
        edges_of.push(e);
    }
    if !empty.is_empty() {
        return Err(QueryError::EmptyHyperedges(empty));
    }
    let candidates: Vec<TermId> = edges_of
        .iter()
        .flat_map(|e| e.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let idx: Vec<usize> = candidates
        .iter()
        .map(|t| graph_index(graph, t))
        .collect::<Result<_, _>>()?;
    let n = candidates.len();
    let dist = SquareMatrix::from_rows(
        (0..n)
            .map(|i| (0..n).map(|j| graph.divergence[idx[i]][idx[j]]).collect())
            .collect(),
    );
    let membership: Vec<f64> = candidates
        .iter()
        .map(|t| queried.iter().map(|c| h.membership(c, t)).sum())
        .collect();
    // covers[i][k]: candidate i lies in queried hyperedge k.
    let covers: Vec<Vec<bool>> = candidates
        .iter()
        .map(|t| edges_of.iter().map(|e| e.contains(t)).collect())
        .collect();
    let mut cover_count = vec![0usize; queried.len()];
    for row in &covers {
        for (k, &c) in row.iter().enumerate() {
            cover_count[k] += c as usize;
        }
    }

    let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for e in minimum_spanning_tree(&dist) {
        adj[e.a].insert(e.b, e.weight);
        adj[e.b].insert(e.a, e.weight);
    }
    let mut alive = vec![true; n];
    loop {
        let removable = (0..n).filter(|&i| {
            alive[i]
                && adj[i].len() <= 1
                && covers[i]
                    .iter()
                    .zip(&cover_count)
                    .all(|(&c, &count)| !c || count > 1)
        });
        let pick = removable.max_by(|&a, &b| {
            let da = adj[a].values().next().copied().unwrap_or(0.0);
            let db = adj[b].values().next().copied().unwrap_or(0.0);
            da.total_cmp(&db)
                .then(membership[b].total_cmp(&membership[a]))
                .then(b.cmp(&a))
        });
        let Some(leaf) = pick else { break };
        alive[leaf] = false;
        for (k, &c) in covers[leaf].iter().enumerate() {
            cover_count[k] -= c as usize;
        }
        let neighbours: Vec<usize> = adj[leaf].keys().copied().collect();
        for j in neighbours {
            adj[j].remove(&leaf);
        }
        adj[leaf].clear();
    }

    let mut tasks: Vec<BatteryTask> = (0..n)
        .filter(|&i| alive[i])
        .map(|i| BatteryTask {
            task: candidates[i].clone(),
            membership: membership[i],
        })
        .collect();
    tasks.sort_by(|a, b| b.membership.total_cmp(&a.membership).then_with(|| a.task.cmp(&b.task)));
    let mut edges = Vec::new();
    for (i, nbrs) in adj.iter().enumerate() {
        for (&j, &w) in nbrs {
            if i < j {
                edges.push(TreeEdge {
                    a: candidates[i].clone(),
                    b: candidates[j].clone(),
                    distance: w,
                });
            }
        }
    }
    let mut weights: Vec<f64> = edges.iter().map(|e| e.distance).collect();
    weights.sort_by(f64::total_cmp);
    Ok(Battery {
        constructs: queried,
        tasks,
        edges,
        // Adding 0.0 turns the -0.0 of an empty sum into 0.0.
        total_distance: weights.iter().sum::<f64>() + 0.0,
    })
}

fn require_task(graph: &TermGraph, id: &TermId) -> Result<usize, QueryError> {
    let i = graph_index(graph, id)?;
    match graph.kind(i) {
        TermKind::Task => Ok(i),
        k => Err(QueryError::WrongKind {
            id: id.clone(),
            expected: "task",
            actual: k.as_str(),
        }),
    }
}

/// Stored divergence between two tasks.
pub fn task_distance(t1: &TermId, t2: &TermId, graph: &TermGraph) -> Result<f64, QueryError> {
    let i = require_task(graph, t1)?;
    let j = require_task(graph, t2)?;
    Ok(graph.divergence[i][j])
}

/// The `k` tasks closest to `t`, nearest first, ties by id.
pub fn nearest_tasks(t: &TermId, k: usize, graph: &TermGraph) -> Result<Vec<Scored>, QueryError> {
    let i = require_task(graph, t)?;
    let mut out: Vec<Scored> = (0..graph.len())
        .filter(|&j| j != i && graph.kind(j) == TermKind::Task)
        .map(|j| Scored {
            term: graph.nodes[j].id.clone(),
            score: graph.divergence[i][j],
        })
        .collect();
    out.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.term.cmp(&b.term)));
    out.truncate(k);
    Ok(out)
}
