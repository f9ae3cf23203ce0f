//! Descriptive statistics over the labelled corpus: term timelines,
//! innovation curves, operationalization lag, tasks per paper and
//! per-discipline construct-task association profiles.
//!
//! An occurrence is a document carrying the term's label.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use crate::corpus::{Corpus, Discipline, TermId, TermKind};
use crate::graph::{build_graph, fit_term_nodes, GraphParams};
use crate::metrics::cosine;
use crate::topics::TopicModel;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermTimeline {
    pub term_id: TermId,
    pub kind: TermKind,
    pub counts_by_year: BTreeMap<i32, usize>,
    pub first_year: i32,
    /// First year the term shares a document with an opposite-kind term.
    pub first_cooccurrence_year: Option<i32>,
}

/// Timelines of every term with at least one dated occurrence. Undated
/// documents are ignored.
pub fn term_frequencies(corpus: &Corpus) -> BTreeMap<TermId, TermTimeline> {
    let mut out: BTreeMap<TermId, TermTimeline> = BTreeMap::new();
    for doc in corpus.documents.values() {
        let Some(year) = doc.year else { continue };
        let kinds: Vec<Option<TermKind>> = doc.labels.iter().map(|l| corpus.lexicon.kind_of(l)).collect();
        for (label, kind) in doc.labels.iter().zip(&kinds) {
            let Some(kind) = *kind else { continue };
            let co = kinds.iter().any(|k| *k == Some(kind.opposite()));
            let t = out.entry(label.clone()).or_insert_with(|| TermTimeline {
                term_id: label.clone(),
                kind,
                counts_by_year: BTreeMap::new(),
                first_year: year,
                first_cooccurrence_year: None,
            });
            *t.counts_by_year.entry(year).or_default() += 1;
            t.first_year = t.first_year.min(year);
            if co {
                t.first_cooccurrence_year = Some(t.first_cooccurrence_year.map_or(year, |y| y.min(year)));
            }
        }
    }
    out
}

/// Number of terms of `kind` first appearing in each year.
pub fn innovation_curve(timelines: &BTreeMap<TermId, TermTimeline>, kind: TermKind) -> BTreeMap<i32, usize> {
    let mut curve = BTreeMap::new();
    for t in timelines.values().filter(|t| t.kind == kind) {
        *curve.entry(t.first_year).or_default() += 1;
    }
    curve
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LagReport {
    /// Years from first appearance to first co-label with a task.
    pub lags: BTreeMap<TermId, i32>,
    /// Mean over `lags`; `None` when no construct ever co-occurs.
    pub mean: Option<f64>,
    pub never_cooccurring: Vec<TermId>,
}

pub fn operationalization_lag(timelines: &BTreeMap<TermId, TermTimeline>) -> LagReport {
    let mut report = LagReport::default();
    for t in timelines.values().filter(|t| t.kind == TermKind::Construct) {
        match t.first_cooccurrence_year {
            Some(y) => {
                report.lags.insert(t.term_id.clone(), y - t.first_year);
            }
            None => report.never_cooccurring.push(t.term_id.clone()),
        }
    }
    if !report.lags.is_empty() {
        let total: i64 = report.lags.values().map(|&l| l as i64).sum();
        report.mean = Some(total as f64 / report.lags.len() as f64);
    }
    report
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TasksPerPaper {
    /// Task-label count → number of documents.
    pub histogram: BTreeMap<usize, usize>,
    /// Fraction of documents with two or more task labels.
    pub multi_task_share: f64,
}

pub fn tasks_per_paper(corpus: &Corpus) -> TasksPerPaper {
    let mut histogram = BTreeMap::new();
    for doc in corpus.documents.values() {
        let n = doc
            .labels
            .iter()
            .filter(|l| corpus.lexicon.kind_of(l) == Some(TermKind::Task))
            .count();
        *histogram.entry(n).or_default() += 1;
    }
    let multi: usize = histogram.range(2..).map(|(_, c)| c).sum();
    let multi_task_share = if corpus.is_empty() {
        0.0
    } else {
        multi as f64 / corpus.len() as f64
    };
    TasksPerPaper {
        histogram,
        multi_task_share,
    }
}

/// Tasks-per-paper histogram for each publication year.
pub fn tasks_per_paper_by_year(corpus: &Corpus) -> BTreeMap<i32, TasksPerPaper> {
    let mut by_year: BTreeMap<i32, Corpus> = BTreeMap::new();
    for doc in corpus.documents.values() {
        if let Some(y) = doc.year {
            by_year
                .entry(y)
                .or_insert_with(|| Corpus {
                    documents: BTreeMap::new(),
                    lexicon: corpus.lexicon.clone(),
                })
                .documents
                .insert(doc.doc_id.clone(), doc.clone());
        }
    }
    by_year.into_iter().map(|(y, c)| (y, tasks_per_paper(&c))).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DisciplineProfile {
    /// `weights[construct][task]` = edge weight in the discipline's graph.
    pub weights: BTreeMap<TermId, BTreeMap<TermId, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileOverlap {
    pub construct: TermId,
    pub a: Discipline,
    pub b: Discipline,
    /// Cosine of the construct's association rows over all lexicon tasks.
    pub overlap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DisciplineProfiles {
    pub profiles: BTreeMap<Discipline, DisciplineProfile>,
    /// Disciplines skipped with the reason.
    pub skipped: BTreeMap<Discipline, String>,
    pub overlaps: Vec<ProfileOverlap>,
}

/// Builds one term graph per discipline sub-corpus, reusing the global
/// topic rows, and compares each construct's task associations across
/// disciplines.
pub fn discipline_profiles(corpus: &Corpus, topics: &TopicModel, params: &GraphParams) -> DisciplineProfiles {
    let mut out = DisciplineProfiles::default();
    for d in Discipline::ALL {
        let sub = corpus.discipline_subcorpus(d);
        let result = fit_term_nodes(&sub, topics, params).and_then(|(nodes, _)| build_graph(nodes, params));
        let graph = match result {
            Ok(g) => g,
            Err(e) => {
                log::warn!("discipline {}: skipped ({e})", d.as_str());
                out.skipped.insert(d, e.to_string());
                continue;
            }
        };
        let mut profile = DisciplineProfile::default();
        for e in &graph.edges {
            let (a, b) = (&graph.nodes[e.u], &graph.nodes[e.v]);
            let (c, t) = match (a.kind, b.kind) {
                (TermKind::Construct, TermKind::Task) => (a, b),
                (TermKind::Task, TermKind::Construct) => (b, a),
                _ => continue,
            };
            profile
                .weights
                .entry(c.id.clone())
                .or_default()
                .insert(t.id.clone(), e.weight);
        }
        out.profiles.insert(d, profile);
    }

    let tasks: Vec<&TermId> = corpus.lexicon.ids_of_kind(TermKind::Task).collect();
    let row = |p: &BTreeMap<TermId, f64>| -> Vec<f64> {
        tasks.iter().map(|t| p.get(*t).copied().unwrap_or(0.0)).collect()
    };
    let found: Vec<&Discipline> = out.profiles.keys().collect();
    for (i, a) in found.iter().enumerate() {
        for b in &found[i + 1..] {
            let pa = &out.profiles[*a].weights;
            let pb = &out.profiles[*b].weights;
            let shared: BTreeSet<&TermId> = pa.keys().filter(|c| pb.contains_key(*c)).collect();
            for c in shared {
                out.overlaps.push(ProfileOverlap {
                    construct: c.clone(),
                    a: **a,
                    b: **b,
                    overlap: cosine(&row(&pa[c]), &row(&pb[c])),
                });
            }
        }
    }
    out
}

pub fn write_timelines_csv(timelines: &BTreeMap<TermId, TermTimeline>, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term_id", "kind", "year", "count"])?;
    for t in timelines.values() {
        for (year, count) in &t.counts_by_year {
            w.write_record([t.term_id.as_str(), t.kind.as_str(), &year.to_string(), &count.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_innovation_csv(
    curves: &[(TermKind, &BTreeMap<i32, usize>)],
    out: impl Write,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "year", "new_terms"])?;
    for (kind, curve) in curves {
        for (year, n) in *curve {
            w.write_record([kind.as_str(), &year.to_string(), &n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_lags_csv(
    timelines: &BTreeMap<TermId, TermTimeline>,
    report: &LagReport,
    out: impl Write,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["construct", "first_year", "first_cooccurrence_year", "lag"])?;
    for t in timelines.values().filter(|t| t.kind == TermKind::Construct) {
        let co = t.first_cooccurrence_year.map(|y| y.to_string()).unwrap_or_default();
        let lag = report.lags.get(&t.term_id).map(|l| l.to_string()).unwrap_or_default();
        w.write_record([t.term_id.as_str(), &t.first_year.to_string(), &co, &lag])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(tpp: &TasksPerPaper, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tasks", "papers"])?;
    for (k, v) in &tpp.histogram {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tasks_by_year_csv(by_year: &BTreeMap<i32, TasksPerPaper>, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "tasks", "papers"])?;
    for (year, tpp) in by_year {
        for (k, v) in &tpp.histogram {
            w.write_record([year.to_string(), k.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows `discipline,construct,task,weight`.
pub fn write_discipline_csv(p: &DisciplineProfiles, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["discipline", "construct", "task", "weight"])?;
    for (d, profile) in &p.profiles {
        for (c, row) in &profile.weights {
            for (t, weight) in row {
                w.write_record([d.as_str(), c.as_str(), t.as_str(), &format!("{weight:?}")])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_overlap_csv(p: &DisciplineProfiles, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["construct", "discipline_a", "discipline_b", "overlap"])?;
    for o in &p.overlaps {
        w.write_record([o.construct.as_str(), o.a.as_str(), o.b.as_str(), &format!("{:?}", o.overlap)])?;
    }
    w.flush()?;
    Ok(())
}
