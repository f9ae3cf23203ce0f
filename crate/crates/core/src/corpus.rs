//! Lexicon loading, corpus ingestion, rare-term pruning and discipline tags.
//!
//! The lexicon is a JSON array of terms, each either a task or a construct.
//! Documents arrive as JSONL records labelled by the lexicon terms whose
//! search queries retrieved them. The same paper is usually retrieved by
//! several queries, so records are merged on `doc_id` with their label sets
//! unioned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// Lexicon term identifier.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermId(pub String);

impl TermId {
    pub fn new(id: impl Into<String>) -> Self {
        TermId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TermId {
    fn from(s: &str) -> Self {
        TermId(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Task,
    Construct,
}

impl TermKind {
    pub fn opposite(self) -> TermKind {
        match self {
            TermKind::Task => TermKind::Construct,
            TermKind::Construct => TermKind::Task,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TermKind::Task => "task",
            TermKind::Construct => "construct",
        }
    }
}

impl std::str::FromStr for TermKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task" => Ok(TermKind::Task),
            "construct" => Ok(TermKind::Construct),
            other => Err(CorpusError::UnknownKind {
                id: String::new(),
                kind: other.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconTerm {
    pub id: TermId,
    pub name: String,
    pub kind: TermKind,
    pub queries: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("lexicon parse error at line {line}, column {column}: {message}{context}")]
    LexiconParse {
        line: usize,
        column: usize,
        message: String,
        context: String,
    },
    #[error("duplicate lexicon id {0:?}")]
    DuplicateId(String),
    #[error("lexicon term {id:?} has unknown kind {kind:?} (expected \"task\" or \"construct\")")]
    UnknownKind { id: String, kind: String },
    #[error("lexicon term {0:?} has no search queries")]
    NoQueries(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The term universe: task and construct labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    terms: BTreeMap<TermId, LexiconTerm>,
}

#[derive(Deserialize)]
struct RawTerm {
    id: String,
    name: String,
    kind: String,
    #[serde(default)]
    queries: Vec<String>,
}

impl Lexicon {
    /// Builds a lexicon, rejecting duplicate ids and terms without queries.
    pub fn from_terms(terms: impl IntoIterator<Item = LexiconTerm>) -> Result<Self, CorpusError> {
        let mut map = BTreeMap::new();
        for term in terms {
            if term.queries.iter().all(|q| q.trim().is_empty()) {
                return Err(CorpusError::NoQueries(term.id.0));
            }
            if map.contains_key(&term.id) {
                return Err(CorpusError::DuplicateId(term.id.0));
            }
            map.insert(term.id.clone(), term);
        }
        Ok(Lexicon { terms: map })
    }

    pub fn from_json_str(text: &str) -> Result<Self, CorpusError> {
        let raw: Vec<RawTerm> = serde_json::from_str(text).map_err(|e| {
            let line = e.line();
            let context = text
                .lines()
                .nth(line.saturating_sub(1))
                .map(|l| format!(" (near `{}`)", l.trim()))
                .unwrap_or_default();
            CorpusError::LexiconParse {
                line,
                column: e.column(),
                message: e.to_string(),
                context,
            }
        })?;
        let mut terms = Vec::with_capacity(raw.len());
        for r in raw {
            let kind = match r.kind.as_str() {
                "task" => TermKind::Task,
                "construct" => TermKind::Construct,
                other => {
                    return Err(CorpusError::UnknownKind {
                        id: r.id,
                        kind: other.to_string(),
                    })
                }
            };
            terms.push(LexiconTerm {
                id: TermId(r.id),
                name: r.name,
                kind,
                queries: r.queries,
            });
        }
        Lexicon::from_terms(terms)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Lexicon::from_json_str(&text)
    }

    /// Serializes to the lexicon file schema.
    pub fn to_json(&self) -> String {
        let items: Vec<serde_json::Value> = self
            .terms
            .values()
            .map(|t| {
                serde_json::json!({
                    "id": t.id.0,
                    "name": t.name,
                    "kind": t.kind.as_str(),
                    "queries": t.queries,
                })
            })
            .collect();
        serde_json::to_string_pretty(&items).expect("lexicon serializes")
    }

    pub fn get(&self, id: &TermId) -> Option<&LexiconTerm> {
        self.terms.get(id)
    }

    pub fn contains(&self, id: &TermId) -> bool {
        self.terms.contains_key(id)
    }

    pub fn kind_of(&self, id: &TermId) -> Option<TermKind> {
        self.terms.get(id).map(|t| t.kind)
    }

    pub fn terms(&self) -> impl Iterator<Item = &LexiconTerm> {
        self.terms.values()
    }

    pub fn ids_of_kind(&self, kind: TermKind) -> impl Iterator<Item = &TermId> {
        self.terms.values().filter(move |t| t.kind == kind).map(|t| &t.id)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// (tasks, constructs)
    pub fn counts(&self) -> (usize, usize) {
        let tasks = self.terms.values().filter(|t| t.kind == TermKind::Task).count();
        (tasks, self.terms.len() - tasks)
    }

    fn remove(&mut self, id: &TermId) {
        self.terms.remove(id);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    /// Absent years exclude the document from time-based statistics only.
    pub year: Option<i32>,
    pub journal: String,
    pub labels: BTreeSet<TermId>,
}

impl Document {
    /// Text handed to embedding providers, unmodified apart from joining
    /// title and abstract.
    pub fn text(&self) -> String {
        if self.abstract_text.is_empty() {
            self.title.clone()
        } else {
            format!("{}\n{}", self.title, self.abstract_text)
        }
    }
}

/// Counters returned by [`ingest_jsonl`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Non-blank lines read.
    pub read: usize,
    /// Records merged into an earlier record with the same `doc_id`.
    pub deduped: usize,
    /// Well-formed records dropped (unknown label, no labels, bad year).
    pub rejected: usize,
    /// Lines that did not parse as a document record.
    pub malformed: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: BTreeMap<String, Document>,
    pub lexicon: Lexicon,
}

#[derive(Deserialize)]
struct RawDocument {
    doc_id: serde_json::Value,
    #[serde(default)]
    title: String,
    #[serde(default, rename = "abstract")]
    abstract_text: String,
    #[serde(default)]
    year: Option<i64>,
    #[serde(default)]
    journal: String,
    #[serde(default)]
    labels: Vec<String>,
}

enum LineOutcome {
    Blank,
    Malformed,
    Rejected,
    Doc(Document),
}

pub const MIN_YEAR: i32 = 1800;

/// Current calendar year from the system clock (UTC).
pub fn current_year() -> i32 {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    // Mean Gregorian year length in seconds.
    1970 + (secs / 31_556_952) as i32
}

fn parse_line(line: &str, lexicon: &Lexicon, max_year: i32) -> LineOutcome {
    if line.trim().is_empty() {
        return LineOutcome::Blank;
    }
    let raw: RawDocument = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(_) => return LineOutcome::Malformed,
    };
    let doc_id = match raw.doc_id {
        serde_json::Value::String(s) if !s.is_empty() => s,
        serde_json::Value::Number(n) => n.to_string(),
        _ => return LineOutcome::Malformed,
    };
    let year = match raw.year {
        None => None,
        Some(y) if (MIN_YEAR as i64..=max_year as i64).contains(&y) => Some(y as i32),
        Some(_) => return LineOutcome::Rejected,
    };
    let labels: BTreeSet<TermId> = raw.labels.into_iter().map(TermId).collect();
    if labels.is_empty() || labels.iter().any(|l| !lexicon.contains(l)) {
        return LineOutcome::Rejected;
    }
    LineOutcome::Doc(Document {
        doc_id,
        title: raw.title,
        abstract_text: raw.abstract_text,
        year,
        journal: raw.journal,
        labels,
    })
}

/// Ingests a JSONL corpus against `lexicon`.
///
/// Lines are parsed in parallel; merging happens in file order so the result
/// does not depend on scheduling. The first record seen for a `doc_id` keeps
/// its metadata and later ones only contribute labels.
pub fn ingest_jsonl(path: &Path, lexicon: &Lexicon) -> Result<(Corpus, IngestReport), CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(path, e))?;
    Ok(ingest_lines(&lines, lexicon))
}

pub fn ingest_lines(lines: &[String], lexicon: &Lexicon) -> (Corpus, IngestReport) {
    let max_year = current_year();
    let outcomes: Vec<LineOutcome> = lines
        .par_iter()
        .map(|l| parse_line(l, lexicon, max_year))
        .collect();

    let mut report = IngestReport::default();
    let mut documents: BTreeMap<String, Document> = BTreeMap::new();
    for outcome in outcomes {
        match outcome {
            LineOutcome::Blank => continue,
            LineOutcome::Malformed => report.malformed += 1,
            LineOutcome::Rejected => report.rejected += 1,
            LineOutcome::Doc(doc) => match documents.get_mut(&doc.doc_id) {
                Some(existing) => {
                    existing.labels.extend(doc.labels);
                    report.deduped += 1;
                }
                None => {
                    documents.insert(doc.doc_id.clone(), doc);
                }
            },
        }
        report.read += 1;
    }
    if report.malformed + report.rejected > 0 {
        log::warn!(
            "ingest: {} malformed and {} rejected lines",
            report.malformed,
            report.rejected
        );
    }
    (
        Corpus {
            documents,
            lexicon: lexicon.clone(),
        },
        report,
    )
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Number of documents carrying each lexicon term (zero for unused terms).
    pub fn term_support(&self) -> BTreeMap<TermId, usize> {
        let mut support: BTreeMap<TermId, usize> =
            self.lexicon.terms().map(|t| (t.id.clone(), 0)).collect();
        for doc in self.documents.values() {
            for label in &doc.labels {
                *support.entry(label.clone()).or_default() += 1;
            }
        }
        support
    }

    /// Writes the corpus in the JSONL corpus schema, ordered by `doc_id`.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for doc in self.documents.values() {
            let line = serde_json::to_string(doc).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Documents whose journal title matches `discipline`.
    pub fn discipline_subcorpus(&self, discipline: Discipline) -> Corpus {
        let documents = self
            .documents
            .iter()
            .filter(|(_, d)| tag_discipline(d).contains(&discipline))
            .map(|(k, d)| (k.clone(), d.clone()))
            .collect();
        Corpus {
            documents,
            lexicon: self.lexicon.clone(),
        }
    }
}

/// Removes terms supported by fewer than `min_docs` documents.
///
/// Pruned terms leave the lexicon and every label set; documents left
/// without labels are dropped. Returns the removed ids in id order.
pub fn prune_rare_terms(corpus: &Corpus, min_docs: usize) -> (Corpus, Vec<TermId>) {
    let min_docs = min_docs.max(1);
    let removed: Vec<TermId> = corpus
        .term_support()
        .into_iter()
        .filter(|(_, n)| *n < min_docs)
        .map(|(id, _)| id)
        .collect();
    if removed.is_empty() {
        return (corpus.clone(), removed);
    }
    let removed_set: BTreeSet<&TermId> = removed.iter().collect();
    let mut lexicon = corpus.lexicon.clone();
    for id in &removed {
        lexicon.remove(id);
    }
    let documents = corpus
        .documents
        .iter()
        .filter_map(|(k, d)| {
            let labels: BTreeSet<TermId> = d
                .labels
                .iter()
                .filter(|l| !removed_set.contains(l))
                .cloned()
                .collect();
            if labels.is_empty() {
                None
            } else {
                Some((k.clone(), Document { labels, ..d.clone() }))
            }
        })
        .collect();
    (Corpus { documents, lexicon }, removed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Discipline {
    Social,
    Psychology,
    Neuroscience,
    CognitiveScience,
}

impl Discipline {
    pub const ALL: [Discipline; 4] = [
        Discipline::Social,
        Discipline::Psychology,
        Discipline::Neuroscience,
        Discipline::CognitiveScience,
    ];

    /// Lowercase journal-title substring that marks the discipline.
    pub fn marker(self) -> &'static str {
        match self {
            Discipline::Social => "social",
            Discipline::Psychology => "psycho",
            Discipline::Neuroscience => "neur",
            Discipline::CognitiveScience => "cognit",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Discipline::Social => "social",
            Discipline::Psychology => "psychology",
            Discipline::Neuroscience => "neuroscience",
            Discipline::CognitiveScience => "cognitive_science",
        }
    }
}

/// Disciplines whose marker occurs in the journal title (case-insensitive).
/// A journal may match several.
pub fn tag_discipline(doc: &Document) -> BTreeSet<Discipline> {
    let journal = doc.journal.to_lowercase();
    Discipline::ALL
        .into_iter()
        .filter(|d| journal.contains(d.marker()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn term(id: &str, kind: TermKind) -> LexiconTerm {
        LexiconTerm {
            id: id.into(),
            name: id.to_uppercase(),
            kind,
            queries: vec![format!("{id}[tiab]")],
        }
    }

    fn lexicon(ids: &[(&str, TermKind)]) -> Lexicon {
        Lexicon::from_terms(ids.iter().map(|(i, k)| term(i, *k))).unwrap()
    }

    fn doc_line(id: &str, labels: &[&str], year: i32) -> String {
        serde_json::json!({
            "doc_id": id, "title": format!("t{id}"), "abstract": "a",
            "year": year, "journal": "J", "labels": labels,
        })
        .to_string()
    }

    #[test]
    fn three_term_fixture_counts() {
        let text = r#"[
            {"id": "stroop", "name": "Stroop Task", "kind": "task", "queries": ["stroop[tiab]"]},
            {"id": "nback", "name": "N-Back", "kind": "task", "queries": ["n-back[tiab]"]},
            {"id": "wm", "name": "Working Memory", "kind": "construct", "queries": ["working memory[tiab]"]}
        ]"#;
        let lex = Lexicon::from_json_str(text).unwrap();
        assert_eq!(lex.counts(), (2, 1));
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = r#"[
            {"id": "stroop", "name": "A", "kind": "task", "queries": ["a"]},
            {"id": "stroop", "name": "B", "kind": "task", "queries": ["b"]}
        ]"#;
        assert!(matches!(
            Lexicon::from_json_str(text),
            Err(CorpusError::DuplicateId(id)) if id == "stroop"
        ));
    }

    #[test]
    fn unknown_kind_and_parse_errors() {
        let text = r#"[{"id": "x", "name": "X", "kind": "paradigm", "queries": ["x"]}]"#;
        assert!(matches!(
            Lexicon::from_json_str(text),
            Err(CorpusError::UnknownKind { kind, .. }) if kind == "paradigm"
        ));
        let broken = "[\n  {\"id\": \"x\",\n  \"name\": }\n]";
        match Lexicon::from_json_str(broken) {
            Err(CorpusError::LexiconParse { line, context, .. }) => {
                assert_eq!(line, 3);
                assert!(context.contains("\"name\""));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let no_queries = r#"[{"id": "x", "name": "X", "kind": "task", "queries": []}]"#;
        assert!(matches!(
            Lexicon::from_json_str(no_queries),
            Err(CorpusError::NoQueries(_))
        ));
    }

    #[test]
    fn dedup_merges_labels() {
        let lex = lexicon(&[("A", TermKind::Task), ("B", TermKind::Construct)]);
        let lines = vec![
            doc_line("1", &["A"], 2001),
            doc_line("2", &["A"], 2002),
            doc_line("3", &["B"], 2003),
            doc_line("1", &["B"], 2001),
            doc_line("4", &["A"], 2004),
        ];
        let (corpus, report) = ingest_lines(&lines, &lex);
        assert_eq!(corpus.len(), 4);
        let labels: Vec<_> = corpus.documents["1"].labels.iter().map(|l| l.as_str()).collect();
        assert_eq!(labels, ["A", "B"]);
        assert_eq!(report.read, 5);
        assert_eq!(report.deduped, 1);
        assert_eq!(report.rejected, 0);
    }

    #[test]
    fn unknown_label_and_malformed_lines_counted() {
        let lex = lexicon(&[("A", TermKind::Task)]);
        let lines = vec![
            doc_line("1", &["A"], 2001),
            doc_line("2", &["Z"], 2001),
            "{not json".to_string(),
            String::new(),
            r#"{"doc_id": "3", "labels": ["A"], "year": null}"#.to_string(),
        ];
        let (corpus, report) = ingest_lines(&lines, &lex);
        assert_eq!(report.rejected, 1);
        assert_eq!(report.malformed, 1);
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.documents["3"].year, None);
    }

    #[test]
    fn out_of_range_year_rejected() {
        let lex = lexicon(&[("A", TermKind::Task)]);
        let (corpus, report) = ingest_lines(&[doc_line("1", &["A"], 1700)], &lex);
        assert!(corpus.is_empty());
        assert_eq!(report.rejected, 1);
    }

    #[test]
    fn prune_drops_rare_terms_and_orphaned_docs() {
        let lex = lexicon(&[("A", TermKind::Task), ("B", TermKind::Construct), ("C", TermKind::Task)]);
        // A has 5 docs, B has 4, C has 5; doc "b4" is labelled by B only.
        let mut lines = Vec::new();
        for i in 0..3 {
            lines.push(doc_line(&format!("ab{i}"), &["A", "B"], 2000));
        }
        lines.push(doc_line("a3", &["A"], 2000));
        lines.push(doc_line("a4", &["A", "C"], 2000));
        lines.push(doc_line("b4", &["B"], 2000));
        for i in 0..4 {
            lines.push(doc_line(&format!("c{i}"), &["C"], 2000));
        }
        let (corpus, _) = ingest_lines(&lines, &lex);
        let (pruned, removed) = prune_rare_terms(&corpus, 5);
        assert_eq!(removed, vec![TermId::from("B")]);
        assert!(!pruned.lexicon.contains(&"B".into()));
        assert!(!pruned.documents.contains_key("b4"));
        assert_eq!(pruned.len(), corpus.len() - 1);
        assert!(pruned.documents.values().all(|d| !d.labels.contains(&"B".into())));

        let (same, none) = prune_rare_terms(&pruned, 5);
        assert!(none.is_empty());
        assert_eq!(same, pruned);
    }

    #[test]
    fn three_doc_hand_trace() {
        let lex = lexicon(&[("A", TermKind::Task), ("B", TermKind::Construct)]);
        let lines = vec![
            doc_line("1", &["A"], 2000),
            doc_line("2", &["A", "B"], 2000),
            doc_line("3", &["B"], 2000),
        ];
        let (corpus, _) = ingest_lines(&lines, &lex);
        // A: 2 docs, B: 2 docs; min 2 keeps both, min 3 drops everything.
        assert_eq!(prune_rare_terms(&corpus, 2).0.len(), 3);
        let (empty, removed) = prune_rare_terms(&corpus, 3);
        assert_eq!(removed.len(), 2);
        assert!(empty.is_empty());
    }

    #[test]
    fn discipline_tags() {
        let mk = |j: &str| Document {
            doc_id: "1".into(),
            title: String::new(),
            abstract_text: String::new(),
            year: None,
            journal: j.into(),
            labels: BTreeSet::new(),
        };
        assert_eq!(
            tag_discipline(&mk("Journal of Cognitive Neuroscience")),
            [Discipline::Neuroscience, Discipline::CognitiveScience].into_iter().collect()
        );
        assert_eq!(
            tag_discipline(&mk("Psychological Review")),
            [Discipline::Psychology].into_iter().collect()
        );
        assert!(tag_discipline(&mk("Nature")).is_empty());
        assert!(tag_discipline(&mk("")).is_empty());
        assert_eq!(
            tag_discipline(&mk("SOCIAL NEUROSCIENCE")),
            [Discipline::Social, Discipline::Neuroscience].into_iter().collect()
        );
    }

    proptest! {
        #[test]
        fn ingestion_idempotent_and_support_bounds(
            recs in proptest::collection::vec((0u8..12, proptest::collection::btree_set(0u8..4, 1..4)), 1..40)
        ) {
            let lex = lexicon(&[("t0", TermKind::Task), ("t1", TermKind::Task),
                                ("c0", TermKind::Construct), ("c1", TermKind::Construct)]);
            let names = ["t0", "t1", "c0", "c1"];
            let lines: Vec<String> = recs.iter().map(|(id, labels)| {
                let l: Vec<&str> = labels.iter().map(|i| names[*i as usize]).collect();
                doc_line(&id.to_string(), &l, 2000)
            }).collect();
            let (a, ra) = ingest_lines(&lines, &lex);
            let (b, rb) = ingest_lines(&lines, &lex);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(ra, rb);

            let total: usize = a.term_support().values().sum();
            prop_assert!(total >= a.len());
            let all_single = a.documents.values().all(|d| d.labels.len() == 1);
            prop_assert_eq!(total == a.len(), all_single);

            for min_docs in 1..6 {
                let (pruned, _) = prune_rare_terms(&a, min_docs);
                prop_assert!(pruned.term_support().values().all(|n| *n >= min_docs));
            }
        }
    }
}
