//! The orchestration loop. A chat backend picks tools one round at a time,
//! the registry runs them, knowledge-base context is retrieved once per run,
//! and the backend writes the final report. Every run yields a transcript
//! that records everything needed to audit or re-synthesize the report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

use crate::cohort::{build_clinical_text, build_molecular_summary, default_gene_filter, PatientCase};
use crate::http::{FixtureMode, FixtureStore, HttpRequest, OfflineTransport, RateLimiter, RetryPolicy, Service, ToolHttp, Transport, UreqTransport};
use crate::knowledge::{KnowledgeIndex, RetrievedChunk, DEFAULT_TOP_K};
use crate::text_embed::TextEmbedder;
use crate::tools::{ToolDescriptor, ToolRegistry, ToolResult, ToolStatus, ALL_TOOLS, HISTOLOGY, ONCOKB, PUBMED, WEB_SEARCH};
use crate::{Error, Result};

pub const DEFAULT_QUERY: &str =
    "Predict the IDH1 mutation status of this low-grade glioma patient and justify using available evidence.";
pub const DEFAULT_MAX_TOOL_ROUNDS: usize = 8;

pub const SYSTEM_PROMPT: &str = "You are a multimodal oncology assistant. Use the offered tools to gather \
evidence about the patient, then write a concise report that integrates the tool results and the \
retrieved knowledge-base context. End the report with a line of the form \
'IDH1 status: mutant', 'IDH1 status: wildtype' or 'IDH1 status: undetermined'.";

pub const MOCK_BACKEND_ID: &str = "mock-v1";
pub const LLM_API_KEY_ENV: &str = "MOA_LLM_API_KEY";

pub const FLAG_ALL_TOOLS_FAILED: &str = "all_tools_failed";
pub const FLAG_ROUND_LIMIT: &str = "round_limit_reached";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    LiveLlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiveLlmSettings {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub requests_per_second: f64,
}

impl Default for LiveLlmSettings {
    fn default() -> Self {
        LiveLlmSettings {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            temperature: 0.0,
            timeout_secs: 120,
            requests_per_second: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub enabled_tools: BTreeSet<String>,
    pub histology_enabled: bool,
    pub fixed_query: String,
    pub max_tool_rounds: usize,
    pub backend: BackendKind,
    /// Knowledge-base chunks retrieved per run.
    pub rag_k: usize,
    /// Concurrent patients in cohort runs.
    pub workers: usize,
    pub live: LiveLlmSettings,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            enabled_tools: ALL_TOOLS.iter().map(|s| s.to_string()).collect(),
            histology_enabled: false,
            fixed_query: DEFAULT_QUERY.into(),
            max_tool_rounds: DEFAULT_MAX_TOOL_ROUNDS,
            backend: BackendKind::Mock,
            rag_k: DEFAULT_TOP_K,
            workers: 4,
            live: LiveLlmSettings::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_tool_rounds < 1 {
            return Err(Error::Config("max_tool_rounds must be >= 1".into()));
        }
        if self.rag_k < 1 {
            return Err(Error::Config("rag_k must be >= 1".into()));
        }
        if self.fixed_query.trim().is_empty() {
            return Err(Error::Config("fixed_query must be non-empty".into()));
        }
        if let Some(t) = self.enabled_tools.iter().find(|t| !ALL_TOOLS.contains(&t.as_str())) {
            return Err(Error::Config(format!("unknown tool {t:?}")));
        }
        Ok(())
    }

    /// Tools the backend may see at all. Histology is dropped when disabled.
    pub fn exposed_tools(&self) -> BTreeSet<String> {
        self.enabled_tools
            .iter()
            .filter(|t| self.histology_enabled || t.as_str() != HISTOLOGY)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub call: ToolCall,
    pub result: ToolResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub patient_id: String,
    pub backend_id: String,
    pub query: String,
    /// The case as given to the backend.
    pub case: PatientCase,
    pub offered_tools: Vec<String>,
    pub retrieved_chunks: Vec<RetrievedChunk>,
    pub rounds: Vec<Round>,
    pub report_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl AgentTranscript {
    pub fn invocations(&self, tool: &str) -> usize {
        self.rounds.iter().filter(|r| r.call.tool == tool).count()
    }

    pub fn tool_order(&self) -> Vec<&str> {
        self.rounds.iter().map(|r| r.call.tool.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}

pub enum Action {
    Call(ToolCall),
    Finish(String),
}

/// Everything the backend sees when choosing its next action.
pub struct AgentContext<'a> {
    pub case: &'a PatientCase,
    pub query: &'a str,
    pub offered: &'a [ToolDescriptor],
    pub rounds: &'a [Round],
    pub retrieved: &'a [RetrievedChunk],
    /// Chunk texts, parallel to `retrieved`. Not persisted.
    pub retrieved_text: &'a [String],
    /// Set once the round budget is spent; the backend must finish.
    pub must_finish: bool,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn next_action(&self, ctx: &AgentContext<'_>) -> Result<Action>;
}

// ---------------------------------------------------------------- mock backend

/// Deterministic stand-in for an LLM: pubmed, one oncokb call per
/// annotation, web search, histology, then a templated report.
pub struct MockBackend;

pub fn pubmed_term(case: &PatientCase) -> String {
    match &case.tumor_class {
        Some(c) if !c.trim().is_empty() => format!("IDH1 {c}"),
        _ => "IDH1 low-grade glioma".to_string(),
    }
}

pub fn web_query(case: &PatientCase) -> String {
    format!("{} IDH1 mutation prognosis", case.tumor_class.as_deref().unwrap_or("low-grade glioma"))
}

/// The ordered calls the mock backend makes for `case` given `offered`.
pub fn mock_plan(case: &PatientCase, offered: &[ToolDescriptor]) -> Vec<ToolCall> {
    let has = |name: &str| offered.iter().any(|d| d.name == name);
    let mut plan = Vec::new();
    if has(PUBMED) {
        plan.push(ToolCall {
            tool: PUBMED.into(),
            arguments: json!({"term": pubmed_term(case)}),
        });
    }
    if has(ONCOKB) {
        for a in case.molecular_summary.iter().flatten() {
            plan.push(ToolCall {
                tool: ONCOKB.into(),
                arguments: json!({"gene": a.gene_symbol, "alteration": a.alteration}),
            });
        }
    }
    if has(WEB_SEARCH) {
        plan.push(ToolCall {
            tool: WEB_SEARCH.into(),
            arguments: json!({"query": web_query(case)}),
        });
    }
    if has(HISTOLOGY) {
        if let Some(path) = &case.slide_feature_path {
            plan.push(ToolCall {
                tool: HISTOLOGY.into(),
                arguments: json!({"feature_path": path}),
            });
        }
    }
    plan
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

/// Status line derived from the evidence: the histology prediction when
/// available, otherwise mutant if any annotation came back oncogenic.
pub fn mock_status(rounds: &[Round]) -> &'static str {
    let ok = |tool: &'static str| {
        rounds
            .iter()
            .filter(move |r| r.call.tool == tool && r.result.status == ToolStatus::Ok)
    };
    if let Some(r) = ok(HISTOLOGY).next_back() {
        if let Some(p) = r.result.data["prediction"].as_str() {
            return if p == "mutant" { "mutant" } else { "wildtype" };
        }
    }
    let oncogenic = ok(ONCOKB).any(|r| {
        matches!(
            r.result.data["annotation"]["oncogenicity"].as_str(),
            Some("oncogenic" | "likely-oncogenic")
        )
    });
    if oncogenic {
        "mutant"
    } else {
        "undetermined"
    }
}

/// The mock report. A pure function of transcript content, which is what
/// makes stored transcripts replayable.
pub fn mock_report(
    case: &PatientCase,
    query: &str,
    rounds: &[Round],
    retrieved: &[RetrievedChunk],
) -> String {
    let mut out = Vec::new();
    out.push(format!("# MOA report for patient {}", case.patient_id));
    out.push(format!("Query: {query}"));
    out.push("## Patient case".into());
    let clinical = build_clinical_text(case);
    out.push(if clinical.is_empty() { "No clinical fields recorded.".into() } else { clinical });
    let molecular = build_molecular_summary(case, &default_gene_filter());
    out.push(format!(
        "Molecular summary: {}",
        molecular.as_deref().unwrap_or("not available.")
    ));
    out.push("## Evidence".into());
    if rounds.is_empty() {
        out.push("- No tools were run.".into());
    }
    for r in rounds {
        let line = match r.result.status {
            ToolStatus::Ok => match r.call.tool.as_str() {
                PUBMED => {
                    let titles: Vec<&str> = r.result.data["articles"]
                        .as_array()
                        .map(|a| a.iter().filter_map(|x| x["title"].as_str()).collect())
                        .unwrap_or_default();
                    if titles.is_empty() {
                        format!("- PubMed: {}", first_line(&r.result.payload))
                    } else {
                        format!("- PubMed ({} articles): {}", titles.len(), titles.join("; "))
                    }
                }
                ONCOKB => format!("- OncoKB: {}", first_line(&r.result.payload)),
                WEB_SEARCH => format!("- Web search: {}", first_line(&r.result.payload)),
                HISTOLOGY => format!("- Histology: {}", first_line(&r.result.payload)),
                other => format!("- {other}: {}", first_line(&r.result.payload)),
            },
            ToolStatus::Error | ToolStatus::Skipped => format!(
                "- {}: unavailable ({}).",
                r.call.tool,
                r.result.reason.as_deref().unwrap_or("no reason")
            ),
        };
        out.push(line);
    }
    out.push("## Knowledge base".into());
    if retrieved.is_empty() {
        out.push("- No knowledge-base context retrieved.".into());
    }
    for c in retrieved {
        out.push(format!("- {} ({:.3})", c.title, c.score));
    }
    out.push("## Assessment".into());
    let status = mock_status(rounds);
    out.push(match status {
        "mutant" => "The available evidence favors an IDH1-mutant tumor.".to_string(),
        "wildtype" => "The available evidence favors an IDH1-wildtype tumor.".to_string(),
        _ => "The available evidence does not determine IDH1 status.".to_string(),
    });
    out.push(format!("IDH1 status: {status}"));
    out.join("\n")
}

impl ChatBackend for MockBackend {
    fn id(&self) -> String {
        MOCK_BACKEND_ID.into()
    }

    fn next_action(&self, ctx: &AgentContext<'_>) -> Result<Action> {
        let plan = mock_plan(ctx.case, ctx.offered);
        match plan.into_iter().nth(ctx.rounds.len()) {
            Some(call) if !ctx.must_finish => Ok(Action::Call(call)),
            _ => Ok(Action::Finish(mock_report(ctx.case, ctx.query, ctx.rounds, ctx.retrieved))),
        }
    }
}

/// Rebuilds the report from a stored transcript. Only the mock backend is
/// replayable.
pub fn resynthesize(t: &AgentTranscript) -> Result<String> {
    if t.backend_id != MOCK_BACKEND_ID {
        return Err(Error::Backend(format!(
            "backend {} is not deterministic; cannot re-synthesize",
            t.backend_id
        )));
    }
    Ok(mock_report(&t.case, &t.query, &t.rounds, &t.retrieved_chunks))
}

// ---------------------------------------------------------------- live backend

/// Chat-completions backend with function tools.
pub struct LiveLlmBackend {
    http: ToolHttp,
    settings: LiveLlmSettings,
    api_key: Option<String>,
}

impl LiveLlmBackend {
    pub fn new(http: ToolHttp, settings: LiveLlmSettings, api_key: Option<String>) -> Self {
        LiveLlmBackend {
            http,
            settings,
            api_key,
        }
    }

    pub fn request_body(&self, ctx: &AgentContext<'_>) -> Value {
        let case_json = serde_json::to_string(ctx.case).expect("case serializes");
        let context: Vec<String> = ctx
            .retrieved
            .iter()
            .zip(ctx.retrieved_text)
            .map(|(c, text)| format!("[{}] {}\n{}", c.chunk_id, c.title, text))
            .collect();
        let mut messages = vec![
            json!({"role": "system", "content": SYSTEM_PROMPT}),
            json!({"role": "user", "content": format!(
                "{}\n\nPatient case:\n{}\n\nKnowledge-base context:\n{}",
                ctx.query,
                case_json,
                context.join("\n\n")
            )}),
        ];
        for (i, r) in ctx.rounds.iter().enumerate() {
            let id = format!("call_{i}");
            messages.push(json!({
                "role": "assistant",
                "content": null,
                "tool_calls": [{
                    "id": id,
                    "type": "function",
                    "function": {"name": r.call.tool, "arguments": r.call.arguments.to_string()}
                }]
            }));
            let content = match r.result.status {
                ToolStatus::Ok => r.result.payload.clone(),
                _ => format!("Tool failed: {}", r.result.reason.as_deref().unwrap_or("unknown")),
            };
            messages.push(json!({"role": "tool", "tool_call_id": id, "content": content}));
        }
        let mut body = json!({
            "model": self.settings.model,
            "temperature": self.settings.temperature,
            "messages": messages,
        });
        if !ctx.must_finish && !ctx.offered.is_empty() {
            body["tools"] = Value::Array(
                ctx.offered
                    .iter()
                    .map(|d| {
                        json!({"type": "function", "function": {
                            "name": d.name, "description": d.description, "parameters": d.input_schema
                        }})
                    })
                    .collect(),
            );
        }
        body
    }
}

/// Reads a chat-completions response into an action.
pub fn parse_chat_response(body: &str) -> Result<Action> {
    let v: Value = serde_json::from_str(body).map_err(|e| Error::Backend(format!("malformed response: {e}")))?;
    let msg = &v["choices"][0]["message"];
    if let Some(call) = msg["tool_calls"].as_array().and_then(|c| c.first()) {
        let name = call["function"]["name"]
            .as_str()
            .ok_or_else(|| Error::Backend("tool call without a name".into()))?;
        let args = match &call["function"]["arguments"] {
            Value::String(s) => serde_json::from_str(s)
                .map_err(|e| Error::Backend(format!("tool arguments are not JSON: {e}")))?,
            Value::Null => json!({}),
            other => other.clone(),
        };
        return Ok(Action::Call(ToolCall {
            tool: name.to_string(),
            arguments: args,
        }));
    }
    match msg["content"].as_str() {
        Some(text) if !text.trim().is_empty() => Ok(Action::Finish(text.to_string())),
        _ => Err(Error::Backend("response has neither tool call nor content".into())),
    }
}

impl ChatBackend for LiveLlmBackend {
    fn id(&self) -> String {
        format!("live:{}", self.settings.model)
    }

    fn next_action(&self, ctx: &AgentContext<'_>) -> Result<Action> {
        if self.http.mode() != FixtureMode::Replay && self.api_key.is_none() {
            return Err(Error::Backend(format!("{LLM_API_KEY_ENV} not set")));
        }
        let body = self.request_body(ctx);
        let mut session = self.http.session("llm", &body)?;
        let mut req = HttpRequest::post_json(
            format!("{}/chat/completions", self.settings.endpoint.trim_end_matches('/')),
            body,
        );
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = session.send(&req).map_err(|f| f.error)?;
        if !resp.is_success() {
            return Err(Error::Backend(format!("chat endpoint HTTP {}", resp.status)));
        }
        session.finish()?;
        parse_chat_response(&resp.body)
    }
}

/// Builds the configured backend. Offline forces fixture replay.
pub fn build_backend(
    config: &AgentConfig,
    fixtures_dir: Option<&Path>,
    fixture_mode: FixtureMode,
    offline: bool,
) -> Arc<dyn ChatBackend> {
    match config.backend {
        BackendKind::Mock => Arc::new(MockBackend),
        BackendKind::LiveLlm => {
            let s = &config.live;
            let transport: Arc<dyn Transport> = if offline {
                Arc::new(OfflineTransport)
            } else {
                Arc::new(UreqTransport::new(Duration::from_secs(s.timeout_secs)))
            };
            let service = Service::new(
                "llm",
                transport,
                Arc::new(RateLimiter::per_second(s.requests_per_second)),
                RetryPolicy::default(),
            );
            let mode = if offline { FixtureMode::Replay } else { fixture_mode };
            let store = fixtures_dir
                .filter(|_| mode != FixtureMode::Off)
                .map(|d| FixtureStore::new(d, mode));
            Arc::new(LiveLlmBackend::new(
                ToolHttp::new(service, store),
                s.clone(),
                std::env::var(LLM_API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            ))
        }
    }
}

// ---------------------------------------------------------------- loop

/// Descriptors the backend may use for this case: exposed by the config,
/// and with every `requires` field present in the case.
pub fn offered_tools(
    case: &PatientCase,
    config: &AgentConfig,
    registry: &ToolRegistry,
) -> Result<Vec<ToolDescriptor>> {
    let mut out = Vec::new();
    for name in config.exposed_tools() {
        let tool = registry
            .get(&name)
            .ok_or_else(|| Error::Config(format!("enabled tool {name} is not registered")))?;
        let d = tool.descriptor();
        if d.requires.iter().all(|f| case.has_field(f)) {
            out.push(d.clone());
        }
    }
    Ok(out)
}

/// The text used for the per-run knowledge-base lookup.
pub fn retrieval_query(case: &PatientCase, config: &AgentConfig) -> String {
    let clinical = build_clinical_text(case);
    if clinical.is_empty() {
        config.fixed_query.clone()
    } else {
        format!("{} {}", config.fixed_query, clinical)
    }
}

pub struct AgentEnv<'a> {
    pub registry: &'a ToolRegistry,
    pub index: &'a KnowledgeIndex,
    pub embedder: &'a dyn TextEmbedder,
    pub backend: &'a dyn ChatBackend,
}

pub fn run_agent(case: &PatientCase, config: &AgentConfig, env: &AgentEnv<'_>) -> Result<AgentTranscript> {
    config.validate()?;
    if env.index.embedder != env.embedder.descriptor() {
        return Err(Error::Config(format!(
            "index built with {} but agent embedder is {}",
            env.index.embedder,
            env.embedder.descriptor()
        )));
    }
    let offered = offered_tools(case, config, env.registry)?;
    let offered_names: Vec<String> = offered.iter().map(|d| d.name.clone()).collect();
    let retrieved = env
        .index
        .retrieve(env.embedder, &retrieval_query(case, config), config.rag_k)?;
    let texts: BTreeMap<&str, &str> = env
        .index
        .chunks
        .iter()
        .map(|c| (c.chunk_id.as_str(), c.text.as_str()))
        .collect();
    let retrieved_text: Vec<String> = retrieved
        .iter()
        .map(|c| texts.get(c.chunk_id.as_str()).copied().unwrap_or("").to_string())
        .collect();

    let budget = config.max_tool_rounds * offered.len();
    let mut rounds: Vec<Round> = Vec::new();
    let mut per_tool: BTreeMap<String, usize> = BTreeMap::new();
    let mut flags = Vec::new();
    let mut requests = 0usize;
    let report = loop {
        let must_finish = requests >= budget;
        let ctx = AgentContext {
            case,
            query: &config.fixed_query,
            offered: &offered,
            rounds: &rounds,
            retrieved: &retrieved,
            retrieved_text: &retrieved_text,
            must_finish,
        };
        match env.backend.next_action(&ctx)? {
            Action::Finish(text) => break text,
            Action::Call(_) if must_finish => {
                return Err(Error::Backend("backend kept calling tools after the round limit".into()))
            }
            Action::Call(call) => {
                requests += 1;
                if !offered_names.contains(&call.tool) {
                    warn!(patient = %case.patient_id, tool = %call.tool, "backend requested a tool that was not offered");
                    continue;
                }
                let count = per_tool.entry(call.tool.clone()).or_default();
                if *count >= config.max_tool_rounds {
                    warn!(patient = %case.patient_id, tool = %call.tool, "per-tool round limit reached");
                    if !flags.iter().any(|f| f == FLAG_ROUND_LIMIT) {
                        flags.push(FLAG_ROUND_LIMIT.to_string());
                    }
                    continue;
                }
                *count += 1;
                let result = env.registry.invoke(&call.tool, &call.arguments);
                rounds.push(Round { call, result });
            }
        }
    };
    if report.trim().is_empty() {
        return Err(Error::Backend("backend produced an empty report".into()));
    }
    if !rounds.is_empty() && rounds.iter().all(|r| r.result.status != ToolStatus::Ok) {
        flags.push(FLAG_ALL_TOOLS_FAILED.to_string());
    }
    info!(patient = %case.patient_id, rounds = rounds.len(), "agent run complete");
    Ok(AgentTranscript {
        patient_id: case.patient_id.clone(),
        backend_id: env.backend.id(),
        query: config.fixed_query.clone(),
        case: case.clone(),
        offered_tools: offered_names,
        retrieved_chunks: retrieved,
        rounds,
        report_text: report,
        flags,
    })
}

/// Runs every case on a bounded worker pool. Output order follows input.
pub fn run_cohort(
    cases: &[PatientCase],
    config: &AgentConfig,
    env: &AgentEnv<'_>,
) -> Result<Vec<Result<AgentTranscript>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| cases.par_iter().map(|c| run_agent(c, config, env)).collect()))
}

/// Writes `<id>.txt` (report) and `<id>.transcript.json` into `dir`.
pub fn write_transcript(dir: &Path, t: &AgentTranscript) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = dir.join(format!("{}.txt", t.patient_id));
    std::fs::write(&report, &t.report_text).map_err(|e| Error::io(&report, e))?;
    let tr = dir.join(format!("{}.transcript.json", t.patient_id));
    std::fs::write(&tr, t.to_json()).map_err(|e| Error::io(&tr, e))
}

pub fn load_transcript(path: &Path) -> Result<AgentTranscript> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------- cleaning

/// A leading word that only marks up the line: heading hashes, a bullet,
/// a blockquote marker, or a list number such as "3." or "3)".
fn is_line_marker(word: &str) -> bool {
    if word.chars().all(|c| c == '#') || matches!(word, "-" | "+" | ">") {
        return true;
    }
    let digits = word.bytes().take_while(u8::is_ascii_digit).count();
    digits > 0 && matches!(&word[digits..], "." | ")")
}

/// Strips heading markers, emphasis, and list bullets, collapses whitespace
/// to single spaces, and trims. Idempotent.
pub fn clean_report(text: &str) -> String {
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    let text = text.replace(['*', '`'], "").replace("__", "");
    let mut words: Vec<&str> = Vec::new();
    for line in text.lines() {
        words.extend(line.split_whitespace().skip_while(|w| is_line_marker(w)));
    }
    words.join(" ")
}
