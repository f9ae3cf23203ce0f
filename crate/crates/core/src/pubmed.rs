//! Corpus acquisition from the NCBI E-utilities (esearch + efetch).
//!
//! Requests go through a shared rate limiter and an on-disk response cache,
//! so a harvested corpus can be rebuilt offline. The transport and clock
//! are traits; tests substitute in-memory versions.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

use crate::corpus::{Document, Lexicon, TermId};
use crate::hash::sha256_hex;

pub const DEFAULT_BASE_URL: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils";
/// Environment variable overriding the E-utilities base URL.
pub const BASE_URL_ENV: &str = "COGMAP_EUTILS_BASE";
pub const MAX_SEARCH_LIMIT: usize = 10_000;
pub const MAX_FETCH_BATCH: usize = 200;

#[derive(Debug, Error)]
pub enum PubmedError {
    #[error("request to {url} failed after {attempts} attempts: {message}")]
    Transport {
        url: String,
        attempts: usize,
        message: String,
    },
    #[error("{url} returned HTTP {status}")]
    HttpStatus { url: String, status: u16 },
    #[error("malformed response from {url}: {message}")]
    Malformed { url: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache i/o error on {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport: Send + Sync {
    /// Performs a GET. `Err` means no HTTP response was obtained.
    fn get(&self, url: &str) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        UreqTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        UreqTransport::new(Duration::from_secs(60))
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, String> {
        match self.agent.get(url).call() {
            Ok(resp) => {
                let status = resp.status();
                let body = resp.into_string().map_err(|e| e.to_string())?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => Ok(HttpResponse {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(e) => Err(e.to_string()),
        }
    }
}

pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Spaces request starts at least `1 / rate` seconds apart.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Duration>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(per_second: f64, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            // Rounded up so that `rate` intervals never fit inside a second.
            interval: Duration::from_nanos((1e9 / per_second).ceil() as u64),
            next: Mutex::new(Duration::ZERO),
            clock,
        }
    }

    pub fn acquire(&self) {
        // Holding the lock while sleeping keeps waiters in order.
        let mut next = self.next.lock().expect("rate limiter lock");
        let now = self.clock.now();
        if now < *next {
            self.clock.sleep(*next - now);
        }
        *next = self.clock.now().max(*next) + self.interval;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub base_url: Option<String>,
    pub requests_per_second: f64,
    pub max_retries: usize,
    /// First backoff delay; doubles on each retry.
    pub backoff_ms: u64,
    pub page_size: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    /// Never written back out, so it stays out of manifests.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            base_url: None,
            requests_per_second: 3.0,
            max_retries: 5,
            backoff_ms: 500,
            page_size: 200,
            batch_size: MAX_FETCH_BATCH,
            max_in_flight: 2,
            cache_dir: None,
            api_key: None,
        }
    }
}

pub struct PubmedClient {
    transport: Box<dyn Transport>,
    clock: Arc<dyn Clock>,
    limiter: RateLimiter,
    base_url: String,
    config: ClientConfig,
    cache_lock: Mutex<()>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub term_id: TermId,
    pub query: String,
    pub date_range: Option<(i32, i32)>,
    pub offset: usize,
    pub limit: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchedDocument {
    pub document: Document,
    pub missing_abstract: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchReport {
    pub documents: Vec<FetchedDocument>,
    /// Articles that could not be turned into a document.
    pub skipped: usize,
}

fn encode(s: &str) -> String {
    url::form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

impl PubmedClient {
    pub fn new(transport: Box<dyn Transport>, clock: Arc<dyn Clock>, config: ClientConfig) -> Self {
        let base_url = config
            .base_url
            .clone()
            .or_else(|| std::env::var(BASE_URL_ENV).ok())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string())
            .trim_end_matches('/')
            .to_string();
        PubmedClient {
            transport,
            limiter: RateLimiter::new(config.requests_per_second, clock.clone()),
            clock,
            base_url,
            config,
            cache_lock: Mutex::new(()),
        }
    }

    pub fn with_defaults(config: ClientConfig) -> Self {
        PubmedClient::new(
            Box::new(UreqTransport::default()),
            Arc::new(SystemClock::default()),
            config,
        )
    }

    fn cache_path(&self, url: &str) -> Option<PathBuf> {
        self.config
            .cache_dir
            .as_ref()
            .map(|d| d.join(sha256_hex(url.as_bytes())))
    }

    fn store_cache(&self, path: &Path, body: &str) -> Result<(), PubmedError> {
        let _guard = self.cache_lock.lock().expect("cache lock");
        let err = |source| PubmedError::Cache {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(err)?;
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, body).map_err(err)?;
        std::fs::rename(&tmp, path).map_err(err)
    }

    /// GET with cache, rate limiting and exponential backoff on transport
    /// errors, HTTP 429 and 5xx. The API key is appended only on the wire,
    /// so it never reaches cache names, logs or errors.
    pub fn get(&self, url: &str) -> Result<String, PubmedError> {
        let cached = self.cache_path(url);
        if let Some(p) = &cached {
            if let Ok(body) = std::fs::read_to_string(p) {
                return Ok(body);
            }
        }
        let attempts = self.config.max_retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                self.clock.sleep(Duration::from_millis(delay));
            }
            self.limiter.acquire();
            match self.transport.get(&format!("{url}{}", self.key_param())) {
                Ok(resp) if resp.status == 200 => {
                    if let Some(p) = &cached {
                        self.store_cache(p, &resp.body)?;
                    }
                    return Ok(resp.body);
                }
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last = format!("HTTP {}", resp.status);
                }
                Ok(resp) => {
                    return Err(PubmedError::HttpStatus {
                        url: url.to_string(),
                        status: resp.status,
                    })
                }
                Err(e) => last = e,
            }
            log::warn!("pubmed: attempt {} for {url} failed: {last}", attempt + 1);
        }
        Err(PubmedError::Transport {
            url: url.to_string(),
            attempts,
            message: last,
        })
    }

    fn key_param(&self) -> String {
        self.config
            .api_key
            .as_ref()
            .map(|k| format!("&api_key={}", encode(k)))
            .unwrap_or_default()
    }

    fn esearch_url(&self, req: &SearchRequest, start: usize, max: usize) -> String {
        let mut url = format!(
            "{}/esearch.fcgi?db=pubmed&term={}&retstart={start}&retmax={max}&retmode=xml",
            self.base_url,
            encode(&req.query)
        );
        if let Some((from, to)) = req.date_range {
            url.push_str(&format!("&datetype=pdat&mindate={from}&maxdate={to}"));
        }
        url
    }

    /// Ids matching `req`, in server order, paging transparently.
    pub fn search_ids(&self, req: &SearchRequest) -> Result<Vec<String>, PubmedError> {
        if req.query.trim().is_empty() {
            return Err(PubmedError::InvalidRequest(format!("{}: empty query", req.term_id)));
        }
        if req.limit > MAX_SEARCH_LIMIT {
            return Err(PubmedError::InvalidRequest(format!(
                "limit {} exceeds {MAX_SEARCH_LIMIT}",
                req.limit
            )));
        }
        let mut ids = Vec::new();
        let mut seen = BTreeSet::new();
        let mut start = req.offset;
        let end = req.offset + req.limit;
        while start < end {
            let max = self.config.page_size.min(end - start);
            let url = self.esearch_url(req, start, max);
            let body = self.get(&url)?;
            let (count, page) = parse_esearch(&body).map_err(|message| PubmedError::Malformed {
                url: url.clone(),
                message,
            })?;
            for id in &page {
                if seen.insert(id.clone()) {
                    ids.push(id.clone());
                }
            }
            start += page.len();
            if page.is_empty() || start >= count {
                break;
            }
        }
        Ok(ids)
    }

    /// Fetches article records in batches of at most `batch_size` ids,
    /// with up to `max_in_flight` batches outstanding.
    pub fn fetch_abstracts(&self, ids: &[String]) -> Result<FetchReport, PubmedError> {
        if ids.is_empty() {
            return Err(PubmedError::InvalidRequest("no ids to fetch".into()));
        }
        let batch = self.config.batch_size.clamp(1, MAX_FETCH_BATCH);
        let batches: Vec<&[String]> = ids.chunks(batch).collect();
        let results: Vec<Mutex<Option<Result<FetchReport, PubmedError>>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.max_in_flight.clamp(1, batches.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= batches.len() {
                        break;
                    }
                    let url = format!(
                        "{}/efetch.fcgi?db=pubmed&id={}&retmode=xml",
                        self.base_url,
                        batches[i].join(","),
                    );
                    let r = self.get(&url).and_then(|body| {
                        parse_efetch(&body).map_err(|message| PubmedError::Malformed { url, message })
                    });
                    *results[i].lock().expect("result slot") = Some(r);
                });
            }
        });
        let mut report = FetchReport::default();
        for slot in results {
            let r = slot.into_inner().expect("result slot").expect("every batch ran")?;
            report.documents.extend(r.documents);
            report.skipped += r.skipped;
        }
        Ok(report)
    }
}

/// `(total count, ids on this page)`.
pub fn parse_esearch(xml: &str) -> Result<(usize, Vec<String>), String> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| e.to_string())?;
    let root = doc.root_element();
    if let Some(err) = root.children().find(|n| n.has_tag_name("ERROR")) {
        return Err(err.text().unwrap_or("server error").to_string());
    }
    let count = root
        .children()
        .find(|n| n.has_tag_name("Count"))
        .and_then(|n| n.text())
        .and_then(|t| t.trim().parse().ok())
        .ok_or("missing Count")?;
    let ids = root
        .children()
        .find(|n| n.has_tag_name("IdList"))
        .map(|list| {
            list.children()
                .filter(|n| n.has_tag_name("Id"))
                .filter_map(|n| n.text().map(|t| t.trim().to_string()))
                .collect()
        })
        .unwrap_or_default();
    Ok((count, ids))
}

fn all_text(node: roxmltree::Node) -> String {
    node.descendants()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, path: &[&str]) -> Option<roxmltree::Node<'a, 'i>> {
    let mut cur = node;
    for name in path {
        cur = cur.children().find(|n| n.has_tag_name(*name))?;
    }
    Some(cur)
}

/// Publication year: `PubDate/Year`, else the first four-digit token of
/// `PubDate/MedlineDate`.
fn publication_year(article: roxmltree::Node) -> Option<i32> {
    let pub_date = child(article, &["Journal", "JournalIssue", "PubDate"])?;
    if let Some(y) = child(pub_date, &["Year"]).and_then(|n| n.text()) {
        return y.trim().parse().ok();
    }
    let medline = child(pub_date, &["MedlineDate"])?.text()?;
    medline
        .split(|c: char| !c.is_ascii_digit())
        .find(|t| t.len() == 4)
        .and_then(|t| t.parse().ok())
}

/// Parses an efetch `PubmedArticleSet`. Articles without a PMID or title are
/// skipped and counted; missing abstracts are kept and flagged.
pub fn parse_efetch(xml: &str) -> Result<FetchReport, String> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| e.to_string())?;
    let mut report = FetchReport::default();
    for art in doc.root_element().children().filter(|n| n.has_tag_name("PubmedArticle")) {
        let Some(citation) = child(art, &["MedlineCitation"]) else {
            report.skipped += 1;
            continue;
        };
        let pmid = child(citation, &["PMID"]).and_then(|n| n.text()).map(str::trim);
        let article = child(citation, &["Article"]);
        let (Some(pmid), Some(article)) = (pmid, article) else {
            report.skipped += 1;
            continue;
        };
        let title = child(article, &["ArticleTitle"]).map(all_text).unwrap_or_default();
        if pmid.is_empty() || title.is_empty() {
            report.skipped += 1;
            continue;
        }
        let abstract_text = child(article, &["Abstract"])
            .map(|a| {
                a.children()
                    .filter(|n| n.has_tag_name("AbstractText"))
                    .map(all_text)
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .unwrap_or_default();
        let journal = child(article, &["Journal", "Title"]).map(all_text).unwrap_or_default();
        report.documents.push(FetchedDocument {
            missing_abstract: abstract_text.is_empty(),
            document: Document {
                doc_id: pmid.to_string(),
                title,
                abstract_text,
                year: publication_year(article),
                journal,
                labels: BTreeSet::new(),
            },
        });
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub hits_per_term: BTreeMap<TermId, usize>,
    pub missing_abstracts: usize,
    pub skipped: usize,
}

/// Runs every lexicon query, fetches the union of hits and labels each
/// document with the terms whose queries found it.
pub fn harvest(
    client: &PubmedClient,
    lexicon: &Lexicon,
    date_range: Option<(i32, i32)>,
    limit_per_query: usize,
) -> Result<(Vec<Document>, HarvestReport), PubmedError> {
    let mut labels: BTreeMap<String, BTreeSet<TermId>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut report = HarvestReport::default();
    for term in lexicon.terms() {
        let mut hits = BTreeSet::new();
        for q in &term.queries {
            let req = SearchRequest {
                term_id: term.id.clone(),
                query: q.clone(),
                date_range,
                offset: 0,
                limit: limit_per_query,
            };
            for id in client.search_ids(&req)? {
                if !labels.contains_key(&id) {
                    order.push(id.clone());
                }
                labels.entry(id.clone()).or_default().insert(term.id.clone());
                hits.insert(id);
            }
        }
        report.hits_per_term.insert(term.id.clone(), hits.len());
    }
    if order.is_empty() {
        return Ok((Vec::new(), report));
    }
    let fetched = client.fetch_abstracts(&order)?;
    report.skipped = fetched.skipped;
    let mut docs = Vec::with_capacity(fetched.documents.len());
    for f in fetched.documents {
        report.missing_abstracts += f.missing_abstract as usize;
        let mut d = f.document;
        if let Some(l) = labels.get(&d.doc_id) {
            d.labels = l.clone();
            docs.push(d);
        }
    }
    Ok((docs, report))
}
