//! The tool abstraction and the concrete evidence tools: PubMed, OncoKB, web
//! search, and the slide-feature histology classifier.
//!
//! Networked tools go through [`ToolHttp`], so each one works live, replays
//! recorded fixtures, or records new ones. Tool failures are reported as
//! `status = error` results rather than as Rust errors, so the agent can carry
//! on with the remaining evidence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::info;

use crate::classifier::{predict_label, predict_proba, Checkpoint, MlpModel};
use crate::cohort::{GeneAnnotation, Idh1Status, Oncogenicity, CASE_FIELDS};
use crate::embedding::{load_embeddings, NormalizationStats};
use crate::http::{
    FixtureMode, FixtureStore, HttpRequest, OfflineTransport, RateLimiter, RetryPolicy,
    SendFailure, Service, ToolHttp, Transport, UreqTransport,
};
use crate::{Error, Result};

pub const PUBMED: &str = "pubmed";
pub const ONCOKB: &str = "oncokb";
pub const WEB_SEARCH: &str = "web_search";
pub const HISTOLOGY: &str = "histology";

pub const ALL_TOOLS: [&str; 4] = [PUBMED, ONCOKB, WEB_SEARCH, HISTOLOGY];

pub const SLIDE_FEATURE_DIM: usize = 768;
pub const FEATURE_EXTRACTION_UNAVAILABLE: &str = "feature extraction not available";

/// Whole-slide image extensions. These need upstream feature extraction.
const WSI_EXTENSIONS: [&str; 9] = ["svs", "tif", "tiff", "ndpi", "mrxs", "scn", "vms", "vmu", "bif"];

pub const ONCOKB_TOKEN_ENV: &str = "MOA_ONCOKB_TOKEN";
pub const SEARCH_KEY_ENV: &str = "MOA_SEARCH_KEY";
pub const SEARCH_CX_ENV: &str = "MOA_SEARCH_CX";

const SNIPPET_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    /// JSON schema of the call arguments.
    pub input_schema: Value,
    /// Patient-case fields that must be present for the tool to be offered.
    pub requires: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolStatus {
    Ok,
    Error,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool_name: String,
    pub status: ToolStatus,
    pub payload: String,
    pub citations: Vec<String>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub retries: u32,
    /// Structured form of the payload, tool specific.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub data: Value,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl ToolResult {
    pub fn ok(tool: &str, payload: impl Into<String>, citations: Vec<String>, data: Value) -> Self {
        let payload = payload.into();
        debug_assert!(!payload.is_empty());
        ToolResult {
            tool_name: tool.to_string(),
            status: ToolStatus::Ok,
            payload,
            citations,
            latency_ms: 0,
            reason: None,
            retries: 0,
            data,
        }
    }

    pub fn error(tool: &str, reason: impl Into<String>, retries: u32) -> Self {
        let reason = reason.into();
        ToolResult {
            tool_name: tool.to_string(),
            status: ToolStatus::Error,
            payload: String::new(),
            citations: Vec::new(),
            latency_ms: 0,
            reason: Some(reason),
            retries,
            data: Value::Null,
        }
    }

    pub fn skipped(tool: &str, reason: impl Into<String>) -> Self {
        ToolResult {
            status: ToolStatus::Skipped,
            ..ToolResult::error(tool, reason, 0)
        }
    }

    fn from_send_failure(tool: &str, f: SendFailure) -> Self {
        ToolResult::error(tool, f.error.to_string(), f.retries)
    }

    /// Checks the status-dependent invariants.
    pub fn is_well_formed(&self) -> bool {
        match self.status {
            ToolStatus::Ok => !self.payload.is_empty(),
            ToolStatus::Error | ToolStatus::Skipped => self.reason.is_some(),
        }
    }
}

pub trait Tool: Send + Sync {
    fn descriptor(&self) -> &ToolDescriptor;

    /// Runs the tool. Precondition violations come back as `Err`; failures
    /// of the underlying service come back as `status = error` results.
    fn call(&self, args: &Value) -> Result<ToolResult>;
}

fn str_arg<'a>(args: &'a Value, key: &str) -> Result<&'a str> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::InvalidArgument(format!("missing string argument {key:?}")))
}

fn usize_arg(args: &Value, key: &str, default: usize) -> Result<usize> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("argument {key:?} must be a non-negative integer"))),
    }
}

fn snippet(text: &str) -> String {
    let t: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if t.chars().count() <= SNIPPET_CHARS {
        t
    } else {
        let cut: String = t.chars().take(SNIPPET_CHARS).collect();
        format!("{}...", cut.trim_end())
    }
}

fn json_body(tool: &str, body: &str) -> std::result::Result<Value, ToolResult> {
    serde_json::from_str(body).map_err(|e| ToolResult::error(tool, format!("malformed response: {e}"), 0))
}

// ---------------------------------------------------------------- PubMed

pub const PUBMED_BASE: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub pmid: String,
    pub title: String,
    pub snippet: String,
}

pub struct PubMedTool {
    descriptor: ToolDescriptor,
    http: ToolHttp,
    base_url: String,
    default_max: usize,
}

impl PubMedTool {
    pub fn new(http: ToolHttp, default_max: usize) -> Self {
        PubMedTool {
            descriptor: ToolDescriptor {
                name: PUBMED.into(),
                description: "Search PubMed and return article ids, titles and abstract snippets.".into(),
                input_schema: json!({
                    "type": "object",
                    "properties": {
                        "term": {"type": "string"},
                        "max_results": {"type": "integer", "minimum": 0}
                    },
                    "required": ["term"]
                }),
                requires: Vec::new(),
            },
            http,
            base_url: PUBMED_BASE.into(),
            default_max,
        }
    }

    pub fn with_base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into();
        self
    }

    pub fn search(&self, term: &str, max_results: usize) -> Result<ToolResult> {
        let term = term.trim();
        if term.is_empty() {
            return Err(Error::InvalidArgument("pubmed term must be non-empty".into()));
        }
        if max_results == 0 {
            return Ok(ToolResult::ok(
                PUBMED,
                "No articles requested.",
                Vec::new(),
                json!({"articles": []}),
            ));
        }
        let input = json!({"term": term, "max_results": max_results});
        let mut session = match self.http.session(PUBMED, &input) {
            Ok(s) => s,
            Err(e) => return Ok(ToolResult::error(PUBMED, e.to_string(), 0)),
        };
        let search = HttpRequest::get(format!("{}/esearch.fcgi", self.base_url))
            .query("db", "pubmed")
            .query("term", term)
            .query("retmax", max_results.to_string())
            .query("retmode", "json");
        let resp = match session.send(&search) {
            Ok(r) => r,
            Err(f) => return Ok(ToolResult::from_send_failure(PUBMED, f)),
        };
        if !resp.is_success() {
            return Ok(ToolResult::error(PUBMED, format!("esearch HTTP {}", resp.status), 0));
        }
        let body = match json_body(PUBMED, &resp.body) {
            Ok(v) => v,
            Err(r) => return Ok(r),
        };
        let ids: Vec<String> = body["esearchresult"]["idlist"]
            .as_array()
            .map(|a| {
                a.iter()
                    .filter_map(Value::as_str)
                    .map(str::to_string)
                    .take(max_results)
                    .collect()
            })
            .unwrap_or_default();
        if ids.is_empty() {
            session.finish()?;
            return Ok(ToolResult::ok(
                PUBMED,
                format!("No PubMed articles found for \"{term}\"."),
                Vec::new(),
                json!({"articles": []}),
            ));
        }
        let fetch = HttpRequest::get(format!("{}/efetch.fcgi", self.base_url))
            .query("db", "pubmed")
            .query("id", ids.join(","))
            .query("retmode", "xml");
        let resp = match session.send(&fetch) {
            Ok(r) => r,
            Err(f) => return Ok(ToolResult::from_send_failure(PUBMED, f)),
        };
        if !resp.is_success() {
            return Ok(ToolResult::error(PUBMED, format!("efetch HTTP {}", resp.status), 0));
        }
        session.finish()?;
        let mut articles = match parse_pubmed_xml(&resp.body) {
            Ok(a) => a,
            Err(e) => return Ok(ToolResult::error(PUBMED, e.to_string(), 0)),
        };
        // Keep esearch ranking order.
        articles.sort_by_key(|a| ids.iter().position(|id| *id == a.pmid).unwrap_or(usize::MAX));
        articles.truncate(max_results);
        let payload = articles
            .iter()
            .map(|a| format!("PMID {}: {} {}", a.pmid, a.title, a.snippet))
            .collect::<Vec<_>>()
            .join("\n");
        let citations = articles.iter().map(|a| format!("PMID:{}", a.pmid)).collect();
        Ok(ToolResult::ok(PUBMED, payload, citations, json!({"articles": articles})))
    }
}

fn node_text(n: roxmltree::Node<'_, '_>) -> String {
    n.descendants().filter(|d| d.is_text()).filter_map(|d| d.text()).collect()
}

/// Extracts id, title and abstract from an efetch `PubmedArticleSet`.
pub fn parse_pubmed_xml(xml: &str) -> Result<Vec<Article>> {
    let doc = roxmltree::Document::parse(xml)
        .map_err(|e| Error::Backend(format!("efetch XML: {e}")))?;
    let mut out = Vec::new();
    for art in doc.descendants().filter(|n| n.has_tag_name("PubmedArticle")) {
        let text_of = |tag: &str| {
            art.descendants()
                .find(|n| n.has_tag_name(tag))
                .map(node_text)
        };
        let Some(pmid) = text_of("PMID") else { continue };
        let title = text_of("ArticleTitle").unwrap_or_default();
        let abstract_text = art
            .descendants()
            .filter(|n| n.has_tag_name("AbstractText"))
            .map(node_text)
            .collect::<Vec<_>>()
            .join(" ");
        out.push(Article {
            pmid: pmid.trim().to_string(),
            title: title.trim().to_string(),
            snippet: snippet(&abstract_text),
        });
    }
    Ok(out)
}

impl Tool for PubMedTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &Value) -> Result<ToolResult> {
        let term = str_arg(args, "term")?;
        let max = usize_arg(args, "max_results", self.default_max)?;
        self.search(term, max)
    }
}

// ---------------------------------------------------------------- OncoKB

pub const ONCOKB_BASE: &str = "https://www.oncokb.org/api/v1";

pub struct OncoKbTool {
    descriptor: ToolDescriptor,
    http: ToolHttp,
    base_url: String,
    token: Option<String>,
}

impl OncoKbTool {
    pub fn new(http: ToolHttp, token: Option<String>) -> Self {
        OncoKbTool {
            descriptor: ToolDescriptor {
                name: ONCOKB.into(),
                description: "Annotate a gene alteration with its OncoKB oncogenicity and summary.".into(),
                input_schema: json!({
                    "type": "object",
                    "properties": {
                        "gene": {"type": "string"},
                        "alteration": {"type": "string"}
                    },
                    "required": ["gene", "alteration"]
                }),
                requires: vec!["molecular_summary".into()],
            },
            http,
            base_url: ONCOKB_BASE.into(),
            token,
        }
    }

    pub fn with_base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into();
        self
    }

    pub fn annotate(&self, gene: &str, alteration: &str) -> Result<ToolResult> {
        let gene = gene.trim();
        if gene.is_empty() {
            return Err(Error::InvalidArgument("oncokb gene must be non-empty".into()));
        }
        let alteration = alteration.trim();
        let replaying = self.http.mode() == FixtureMode::Replay;
        if !replaying && self.token.is_none() {
            return Ok(ToolResult::error(
                ONCOKB,
                format!("auth failure: {ONCOKB_TOKEN_ENV} not set"),
                0,
            ));
        }
        let input = json!({"gene": gene, "alteration": alteration});
        let mut session = match self.http.session(ONCOKB, &input) {
            Ok(s) => s,
            Err(e) => return Ok(ToolResult::error(ONCOKB, e.to_string(), 0)),
        };
        let mut req = HttpRequest::get(format!("{}/annotate/mutations/byProteinChange", self.base_url))
            .query("hugoSymbol", gene)
            .query("alteration", alteration);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let resp = match session.send(&req) {
            Ok(r) => r,
            Err(f) => return Ok(ToolResult::from_send_failure(ONCOKB, f)),
        };
        if resp.status == 401 || resp.status == 403 {
            return Ok(ToolResult::error(ONCOKB, format!("auth failure: HTTP {}", resp.status), 0));
        }
        if !resp.is_success() {
            return Ok(ToolResult::error(ONCOKB, format!("HTTP {}", resp.status), 0));
        }
        session.finish()?;
        let body = match json_body(ONCOKB, &resp.body) {
            Ok(v) => v,
            Err(r) => return Ok(r),
        };
        let gene_exists = body["geneExist"].as_bool().unwrap_or(false);
        let oncogenicity = if gene_exists {
            Oncogenicity::from_oncokb(body["oncogenic"].as_str().unwrap_or(""))
        } else {
            Oncogenicity::Unknown
        };
        let summary = [body["variantSummary"].as_str(), body["geneSummary"].as_str()]
            .into_iter()
            .flatten()
            .filter(|s| !s.trim().is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        let annotation = GeneAnnotation {
            gene_symbol: gene.to_string(),
            alteration: alteration.to_string(),
            oncogenicity,
            source: "OncoKB".into(),
        };
        let mut payload = format!("{gene} {alteration}: {}.", oncogenicity.as_str());
        if !summary.is_empty() {
            payload.push(' ');
            payload.push_str(&summary);
        }
        let mut citations = vec![format!("OncoKB:{gene} {alteration}")];
        if let Some(pmids) = body["mutationEffect"]["citations"]["pmids"].as_array() {
            citations.extend(pmids.iter().filter_map(Value::as_str).map(|p| format!("PMID:{p}")));
        }
        Ok(ToolResult::ok(
            ONCOKB,
            payload,
            citations,
            json!({"annotation": annotation, "gene_exists": gene_exists}),
        ))
    }
}

impl Tool for OncoKbTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &Value) -> Result<ToolResult> {
        self.annotate(str_arg(args, "gene")?, args["alteration"].as_str().unwrap_or(""))
    }
}

// ---------------------------------------------------------------- web search

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

pub trait SearchProvider: Send + Sync {
    fn name(&self) -> &str;
    fn search(&self, query: &str, max_results: usize) -> std::result::Result<Vec<SearchHit>, ToolResult>;
}

/// Returns no hits and performs no I/O.
pub struct StubSearchProvider;

impl SearchProvider for StubSearchProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn search(&self, _query: &str, _max: usize) -> std::result::Result<Vec<SearchHit>, ToolResult> {
        Ok(Vec::new())
    }
}

pub const CUSTOM_SEARCH_URL: &str = "https://www.googleapis.com/customsearch/v1";

/// Custom-search JSON API. The key travels in a header so it never lands in
/// recorded fixtures.
pub struct CustomSearchProvider {
    http: ToolHttp,
    url: String,
    key: Option<String>,
    engine_id: String,
}

impl CustomSearchProvider {
    pub fn new(http: ToolHttp, key: Option<String>, engine_id: impl Into<String>) -> Self {
        CustomSearchProvider {
            http,
            url: CUSTOM_SEARCH_URL.into(),
            key,
            engine_id: engine_id.into(),
        }
    }
}

impl SearchProvider for CustomSearchProvider {
    fn name(&self) -> &str {
        "custom_search"
    }

    fn search(&self, query: &str, max_results: usize) -> std::result::Result<Vec<SearchHit>, ToolResult> {
        if self.http.mode() != FixtureMode::Replay && self.key.is_none() {
            return Err(ToolResult::error(WEB_SEARCH, format!("auth failure: {SEARCH_KEY_ENV} not set"), 0));
        }
        let input = json!({"query": query, "max_results": max_results});
        let mut session = self
            .http
            .session(WEB_SEARCH, &input)
            .map_err(|e| ToolResult::error(WEB_SEARCH, e.to_string(), 0))?;
        let mut req = HttpRequest::get(self.url.clone())
            .query("cx", self.engine_id.clone())
            .query("q", query)
            .query("num", max_results.min(10).to_string());
        if let Some(key) = &self.key {
            req = req.header("X-Goog-Api-Key", key.clone());
        }
        let resp = session
            .send(&req)
            .map_err(|f| ToolResult::from_send_failure(WEB_SEARCH, f))?;
        if !resp.is_success() {
            return Err(ToolResult::error(WEB_SEARCH, format!("HTTP {}", resp.status), 0));
        }
        session
            .finish()
            .map_err(|e| ToolResult::error(WEB_SEARCH, e.to_string(), 0))?;
        let body = json_body(WEB_SEARCH, &resp.body)?;
        Ok(body["items"]
            .as_array()
            .map(|items| {
                items
                    .iter()
                    .map(|i| SearchHit {
                        title: i["title"].as_str().unwrap_or_default().to_string(),
                        url: i["link"].as_str().unwrap_or_default().to_string(),
                        snippet: snippet(i["snippet"].as_str().unwrap_or_default()),
                    })
                    .collect()
            })
            .unwrap_or_default())
    }
}

pub struct WebSearchTool {
    descriptor: ToolDescriptor,
    provider: Box<dyn SearchProvider>,
    default_max: usize,
}

impl WebSearchTool {
    pub fn new(provider: Box<dyn SearchProvider>, default_max: usize) -> Self {
        WebSearchTool {
            descriptor: ToolDescriptor {
                name: WEB_SEARCH.into(),
                description: "Search the web and return titles, snippets and URLs.".into(),
                input_schema: json!({
                    "type": "object",
                    "properties": {
                        "query": {"type": "string"},
                        "max_results": {"type": "integer", "minimum": 0}
                    },
                    "required": ["query"]
                }),
                requires: Vec::new(),
            },
            provider,
            default_max,
        }
    }

    pub fn search(&self, query: &str, max_results: usize) -> Result<ToolResult> {
        let query = query.trim();
        if query.is_empty() {
            return Err(Error::InvalidArgument("web search query must be non-empty".into()));
        }
        if max_results == 0 {
            return Ok(ToolResult::ok(WEB_SEARCH, "No results requested.", Vec::new(), json!({"hits": []})));
        }
        let mut hits = match self.provider.search(query, max_results) {
            Ok(h) => h,
            Err(r) => return Ok(r),
        };
        hits.truncate(max_results);
        if hits.is_empty() {
            return Ok(ToolResult::ok(
                WEB_SEARCH,
                format!("No web results for \"{query}\" ({} provider).", self.provider.name()),
                Vec::new(),
                json!({"hits": []}),
            ));
        }
        let payload = hits
            .iter()
            .map(|h| format!("{} ({}): {}", h.title, h.url, h.snippet))
            .collect::<Vec<_>>()
            .join("\n");
        let citations = hits.iter().map(|h| h.url.clone()).collect();
        Ok(ToolResult::ok(WEB_SEARCH, payload, citations, json!({"hits": hits})))
    }
}

impl Tool for WebSearchTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &Value) -> Result<ToolResult> {
        let query = str_arg(args, "query")?;
        let max = usize_arg(args, "max_results", self.default_max)?;
        self.search(query, max)
    }
}

// ---------------------------------------------------------------- histology

pub struct HistologyTool {
    descriptor: ToolDescriptor,
    model: MlpModel,
    normalization: Option<NormalizationStats>,
    base_dir: Option<PathBuf>,
}

impl HistologyTool {
    pub fn new(model: MlpModel, normalization: Option<NormalizationStats>) -> Result<Self> {
        if model.input_dim() != SLIDE_FEATURE_DIM {
            return Err(Error::Dimension {
                expected: SLIDE_FEATURE_DIM,
                got: model.input_dim(),
            });
        }
        if let Some(stats) = &normalization {
            if stats.dim() != SLIDE_FEATURE_DIM {
                return Err(Error::Dimension {
                    expected: SLIDE_FEATURE_DIM,
                    got: stats.dim(),
                });
            }
        }
        Ok(HistologyTool {
            descriptor: ToolDescriptor {
                name: HISTOLOGY.into(),
                description: "Predict IDH1 mutation probability from precomputed slide features.".into(),
                input_schema: json!({
                    "type": "object",
                    "properties": {"feature_path": {"type": "string"}},
                    "required": ["feature_path"]
                }),
                requires: vec!["slide_feature_path".into()],
            },
            model,
            normalization,
            base_dir: None,
        })
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        HistologyTool::new(ckpt.to_model()?, ckpt.normalization)
    }

    /// Relative feature paths resolve against this directory.
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn predict(&self, feature_path: &Path) -> Result<ToolResult> {
        let path = match &self.base_dir {
            Some(base) if feature_path.is_relative() => base.join(feature_path),
            _ => feature_path.to_path_buf(),
        };
        if is_wsi_path(&path) {
            return Ok(ToolResult::skipped(HISTOLOGY, FEATURE_EXTRACTION_UNAVAILABLE));
        }
        let mut vector = read_slide_features(&path)?;
        if let Some(stats) = &self.normalization {
            stats.apply_in_place(&mut vector)?;
        }
        let p = predict_proba(&self.model, &vector)?;
        let label = Idh1Status::from_index(predict_label(p)).expect("binary label");
        Ok(ToolResult::ok(
            HISTOLOGY,
            format!("Histology classifier IDH1 mutation probability {p:.4}; prediction {label}."),
            vec![format!("slide:{}", path.display())],
            json!({"p_mutant": p, "prediction": label}),
        ))
    }
}

pub fn is_wsi_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| WSI_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Reads a slide feature file: one embedding record of exactly 768 values.
pub fn read_slide_features(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "slide feature file not found"),
        ));
    }
    let mut records = load_embeddings(path)?;
    if records.len() != 1 {
        return Err(Error::Validation(format!(
            "{} holds {} records, expected one",
            path.display(),
            records.len()
        )));
    }
    let vector = records.pop().expect("one record").vector;
    if vector.len() != SLIDE_FEATURE_DIM {
        return Err(Error::Dimension {
            expected: SLIDE_FEATURE_DIM,
            got: vector.len(),
        });
    }
    Ok(vector)
}

impl Tool for HistologyTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &Value) -> Result<ToolResult> {
        let path = str_arg(args, "feature_path")?;
        match self.predict(Path::new(path)) {
            Ok(r) => Ok(r),
            Err(e @ Error::InvalidArgument(_)) => Err(e),
            Err(e) => Ok(ToolResult::error(HISTOLOGY, e.to_string(), 0)),
        }
    }
}

// ---------------------------------------------------------------- registry

pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn Tool>>,
    /// Off makes latency_ms zero so that transcripts are reproducible.
    record_latency: bool,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        ToolRegistry::new(true)
    }
}

impl ToolRegistry {
    pub fn new(record_latency: bool) -> Self {
        ToolRegistry {
            tools: BTreeMap::new(),
            record_latency,
        }
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<()> {
        let d = tool.descriptor();
        if let Some(bad) = d.requires.iter().find(|f| !CASE_FIELDS.contains(&f.as_str())) {
            return Err(Error::Validation(format!(
                "tool {} requires unknown case field {bad}",
                d.name
            )));
        }
        if self.tools.contains_key(&d.name) {
            return Err(Error::Validation(format!("duplicate tool name {}", d.name)));
        }
        self.tools.insert(d.name.clone(), tool);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    /// Invokes a tool, converting precondition errors into error results and
    /// stamping the latency.
    pub fn invoke(&self, name: &str, args: &Value) -> ToolResult {
        let Some(tool) = self.tools.get(name) else {
            return ToolResult::error(name, format!("unknown tool {name}"), 0);
        };
        let start = Instant::now();
        let mut result = tool
            .call(args)
            .unwrap_or_else(|e| ToolResult::error(name, e.to_string(), 0));
        let elapsed = start.elapsed().as_millis() as u64;
        info!(tool = name, status = ?result.status, latency_ms = elapsed, "tool call");
        result.latency_ms = if self.record_latency { elapsed } else { 0 };
        result
    }
}

/// Settings for building the standard registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolSettings {
    /// Fixture directory for networked tools.
    pub fixtures_dir: Option<PathBuf>,
    /// Fixture handling when online; offline always replays.
    pub fixture_mode: FixtureMode,
    pub pubmed_max_results: usize,
    pub web_max_results: usize,
    /// "stub" or "custom_search".
    pub search_provider: String,
    pub search_engine_id: String,
    /// Histology classifier checkpoint (768-d input).
    pub histology_model: Option<PathBuf>,
    /// Directory that relative slide feature paths resolve against.
    pub feature_base_dir: Option<PathBuf>,
    pub requests_per_second: f64,
    pub timeout_secs: u64,
}

impl Default for ToolSettings {
    fn default() -> Self {
        ToolSettings {
            fixtures_dir: None,
            fixture_mode: FixtureMode::Replay,
            pubmed_max_results: 3,
            web_max_results: 3,
            search_provider: "stub".into(),
            search_engine_id: String::new(),
            histology_model: None,
            feature_base_dir: None,
            requests_per_second: 3.0,
            timeout_secs: 30,
        }
    }
}

impl ToolSettings {
    fn tool_http(&self, name: &str, transport: &Arc<dyn Transport>, offline: bool) -> ToolHttp {
        let service = Service::new(
            name,
            transport.clone(),
            Arc::new(RateLimiter::per_second(self.requests_per_second)),
            RetryPolicy::default(),
        );
        let mode = if offline { FixtureMode::Replay } else { self.fixture_mode };
        let store = match (&self.fixtures_dir, mode) {
            (Some(dir), m) if m != FixtureMode::Off => Some(FixtureStore::new(dir.clone(), m)),
            _ => None,
        };
        ToolHttp::new(service, store)
    }

    /// Builds the registry. Offline swaps in a transport that refuses every
    /// live call and forces fixture replay. The histology tool is registered
    /// only when a model is configured.
    pub fn build_registry(&self, offline: bool) -> Result<ToolRegistry> {
        let transport: Arc<dyn Transport> = if offline {
            Arc::new(OfflineTransport)
        } else {
            Arc::new(UreqTransport::new(Duration::from_secs(self.timeout_secs)))
        };
        let deterministic = offline || self.fixture_mode == FixtureMode::Replay;
        let mut reg = ToolRegistry::new(!deterministic);
        reg.register(Arc::new(PubMedTool::new(
            self.tool_http(PUBMED, &transport, offline),
            self.pubmed_max_results,
        )))?;
        reg.register(Arc::new(OncoKbTool::new(
            self.tool_http(ONCOKB, &transport, offline),
            std::env::var(ONCOKB_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        )))?;
        let provider: Box<dyn SearchProvider> = match self.search_provider.as_str() {
            "stub" => Box::new(StubSearchProvider),
            "custom_search" => Box::new(CustomSearchProvider::new(
                self.tool_http(WEB_SEARCH, &transport, offline),
                std::env::var(SEARCH_KEY_ENV).ok().filter(|k| !k.is_empty()),
                std::env::var(SEARCH_CX_ENV).unwrap_or_else(|_| self.search_engine_id.clone()),
            )),
            other => return Err(Error::Config(format!("unknown search provider {other:?}"))),
        };
        reg.register(Arc::new(WebSearchTool::new(provider, self.web_max_results)))?;
        if let Some(path) = &self.histology_model {
            let mut tool = HistologyTool::from_checkpoint(path)?;
            if let Some(base) = &self.feature_base_dir {
                tool = tool.with_base_dir(base.clone());
            }
            reg.register(Arc::new(tool))?;
        }
        Ok(reg)
    }
}
