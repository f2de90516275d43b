//! End-to-end orchestration used by the CLI: report generation, embedding,
//! training, and the full six-configuration experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{info, warn};

use crate::agent::{build_backend, clean_report, run_cohort, write_transcript, AgentConfig, AgentEnv};
use crate::classifier::{init_model, train, Checkpoint, TrainConfig};
use crate::cohort::{build_clinical_text, load_cohort, CohortManifest, Idh1Status, PatientCase};
use crate::config::RunConfig;
use crate::embedding::{apply_normalizer, fit_normalizer, load_embeddings, save_embeddings, Embedding, Modality};
use crate::evaluation::{
    format_table, run_experiment, stratified_folds, ExperimentResult, ExperimentSettings, FeatureSet,
    FoldAudit, SourceKind,
};
use crate::knowledge::{load_corpus, KnowledgeIndex};
use crate::text_embed::{embed_batch, TextEmbedder};
use crate::tools::{read_slide_features, HISTOLOGY};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Reproducibility record written next to every output. Contains no
/// timestamps so that identical runs write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub offline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, offline: bool) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            offline,
            config_sha256: None,
            config: Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_config(mut self, cfg: &RunConfig) -> Self {
        self.config_sha256 = Some(cfg.source_sha256.clone()).filter(|s| !s.is_empty());
        self.config = serde_json::to_value(cfg).expect("config serializes");
        self
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Where a file output's manifest goes: `<file>.manifest.json`.
pub fn manifest_path_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// Loads a cohort. With `strict`, any manifest warning is an error.
pub fn ingest(path: &Path, strict: bool) -> Result<CohortManifest> {
    let manifest = load_cohort(path)?;
    if strict && !manifest.warnings.is_empty() {
        return Err(Error::Validation(manifest.warnings.join("; ")));
    }
    Ok(manifest)
}

/// Builds the knowledge index from the configured corpus, or an empty index
/// when no corpus is configured.
pub fn knowledge_index(cfg: &RunConfig, embedder: &dyn TextEmbedder) -> Result<KnowledgeIndex> {
    match &cfg.paths.corpus {
        Some(dir) => {
            let docs = load_corpus(dir)?;
            KnowledgeIndex::from_corpus(&docs, &cfg.kb.keywords, cfg.kb.chunk_size, cfg.kb.overlap, embedder)
        }
        None => {
            warn!("no corpus configured; reports will carry no knowledge-base context");
            Ok(KnowledgeIndex {
                embedder: embedder.descriptor(),
                dimension: embedder.dimension(),
                chunks: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportSummary {
    pub written: Vec<String>,
    pub failed: BTreeMap<String, String>,
    pub histology_invocations: usize,
    pub flagged: BTreeMap<String, Vec<String>>,
}

/// Runs the agent for every case and writes one report and one transcript
/// per patient into `out_dir`.
pub fn generate_reports(
    cfg: &RunConfig,
    agent: &AgentConfig,
    cases: &[PatientCase],
    out_dir: &Path,
    offline: bool,
) -> Result<ReportSummary> {
    let embedder = cfg.embedder.build(offline)?;
    let index = knowledge_index(cfg, embedder.as_ref())?;
    let mut settings = cfg.tool_settings();
    if !agent.histology_enabled {
        // The classifier is never needed, so a missing checkpoint is fine.
        settings.histology_model = None;
    }
    let registry = settings.build_registry(offline)?;
    let backend = build_backend(agent, settings.fixtures_dir.as_deref(), settings.fixture_mode, offline);
    let mut agent = agent.clone();
    if !agent.histology_enabled || !registry.contains(HISTOLOGY) {
        if agent.histology_enabled {
            return Err(Error::Config("histology enabled but no histology model configured".into()));
        }
        agent.enabled_tools.remove(HISTOLOGY);
    }
    let env = AgentEnv {
        registry: &registry,
        index: &index,
        embedder: embedder.as_ref(),
        backend: backend.as_ref(),
    };
    let results = run_cohort(cases, &agent, &env)?;
    let mut summary = ReportSummary::default();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (case, r) in cases.iter().zip(results) {
        match r {
            Ok(t) => {
                write_transcript(out_dir, &t)?;
                summary.histology_invocations += t.invocations(HISTOLOGY);
                if !t.flags.is_empty() {
                    summary.flagged.insert(t.patient_id.clone(), t.flags.clone());
                }
                summary.written.push(t.patient_id);
            }
            Err(e) => {
                warn!(patient = %case.patient_id, error = %e, "report generation failed");
                summary.failed.insert(case.patient_id.clone(), e.to_string());
            }
        }
    }
    info!(written = summary.written.len(), failed = summary.failed.len(), "reports done");
    Ok(summary)
}

/// Reads every `<id>.txt` report in `dir` (sorted by id), cleans it and
/// embeds it.
pub fn embed_report_dir(dir: &Path, embedder: &dyn TextEmbedder, modality: Modality) -> Result<Vec<Embedding>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    let mut items = Vec::with_capacity(paths.len());
    for p in paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Validation(format!("bad report file name {}", p.display())))?
            .to_string();
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        items.push((id, clean_report(&text)));
    }
    embed_batch(embedder, &items, modality)
}

/// Slide features for the given cases. Looks in `slides_dir/<id>.jsonl`
/// when set, otherwise at the case's own path relative to `base_dir`.
pub fn load_slide_features<'a>(
    cases: impl IntoIterator<Item = &'a PatientCase>,
    slides_dir: Option<&Path>,
    base_dir: &Path,
) -> Result<Vec<Embedding>> {
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for case in cases {
        let path = match (slides_dir, &case.slide_feature_path) {
            (Some(dir), _) => dir.join(format!("{}.jsonl", case.patient_id)),
            (None, Some(p)) => base_dir.join(p),
            (None, None) => {
                missing.push(case.patient_id.clone());
                continue;
            }
        };
        if !path.exists() {
            missing.push(case.patient_id.clone());
            continue;
        }
        let v = read_slide_features(&path)?;
        out.push(Embedding::new(case.patient_id.clone(), v, Modality::Slide)?);
    }
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }
    Ok(out)
}

/// Loads embeddings from a JSONL file, or from every `*.jsonl` in a directory.
pub fn load_embedding_source(path: &Path) -> Result<Vec<Embedding>> {
    if !path.is_dir() {
        return load_embeddings(path);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(load_embeddings(&f)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelRecord {
    id: String,
    label: Idh1Status,
}

/// Reads `{"id": .., "label": "mutant"|"wildtype"}` lines.
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, Idh1Status>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: LabelRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert(r.id.clone(), r.label).is_some() {
            return Err(Error::DuplicateIds(vec![r.id]));
        }
    }
    Ok(out)
}

/// Fits a normalizer and trains one model on all given embeddings. The
/// normalizer is stored in the checkpoint.
pub fn train_checkpoint(
    embeddings: &[Embedding],
    labels: &BTreeMap<String, Idh1Status>,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<f64>)> {
    let missing: Vec<String> = embeddings
        .iter()
        .filter(|e| !labels.contains_key(&e.id))
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("no label for ids {missing:?}")));
    }
    let stats = fit_normalizer(embeddings)?;
    let normed: Vec<Embedding> = embeddings
        .iter()
        .map(|e| apply_normalizer(&stats, e))
        .collect::<Result<_>>()?;
    let dim = stats.dim();
    let x = ndarray::Array2::from_shape_fn((normed.len(), dim), |(i, j)| normed[i].vector[j]);
    let y: Vec<usize> = embeddings.iter().map(|e| labels[&e.id].index()).collect();
    let model = init_model(dim, &cfg.hidden_dims, cfg.seed)?;
    let outcome = train(model, x.view(), &y, cfg)?;
    Ok((Checkpoint::from_model(&outcome.model, Some(stats)), outcome.loss_curve))
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub results: Vec<ExperimentResult>,
    pub audits: BTreeMap<String, Vec<FoldAudit>>,
    pub table: String,
    pub reports: Option<ReportSummary>,
    pub results_path: PathBuf,
}

/// `--out` may name the results file or a directory to hold it.
pub fn experiment_paths(out: &Path) -> (PathBuf, PathBuf) {
    if out.extension().is_some_and(|e| e == "jsonl") {
        let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, out.to_path_buf())
    } else {
        (out.to_path_buf(), out.join("results.jsonl"))
    }
}

/// Runs every configured experiment end to end and writes results, the
/// formatted table, fold audits, the fold split and a run manifest.
pub fn run_experiments(cfg: &RunConfig, out: &Path, offline: bool) -> Result<ExperimentRun> {
    cfg.validate()?;
    let (out_dir, results_path) = experiment_paths(out);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let cases_path = cfg.require("cases", &cfg.paths.cases)?;
    let manifest = load_cohort(cases_path)?;
    manifest.validate_for_training()?;
    let eligible: Vec<PatientCase> = manifest.eligible().cloned().collect();

    let needed: BTreeSet<SourceKind> = cfg
        .experiment
        .configs
        .iter()
        .flat_map(|c| c.sources().iter().copied())
        .collect();
    let embedder: Arc<dyn TextEmbedder> = cfg.embedder.build(offline)?;
    let mut features = FeatureSet::default();
    let mut reports = None;

    if needed.contains(&SourceKind::ClinicalText) {
        let items: Vec<(String, String)> = eligible
            .iter()
            .map(|c| (c.patient_id.clone(), build_clinical_text(c)))
            .collect();
        features.insert(SourceKind::ClinicalText, embed_batch(embedder.as_ref(), &items, Modality::ClinicalText)?);
    }
    if needed.contains(&SourceKind::Report) {
        let embs = match &cfg.paths.report_embeddings {
            Some(p) => load_embeddings(p)?,
            None => {
                // Reports used as features never see the histology tool.
                let agent = AgentConfig {
                    histology_enabled: false,
                    ..cfg.agent.clone()
                };
                let dir = out_dir.join("reports");
                let summary = generate_reports(cfg, &agent, &eligible, &dir, offline)?;
                if !summary.failed.is_empty() {
                    return Err(Error::Backend(format!(
                        "report generation failed for {:?}",
                        summary.failed.keys().collect::<Vec<_>>()
                    )));
                }
                reports = Some(summary);
                let embs = embed_report_dir(&dir, embedder.as_ref(), Modality::Report)?;
                save_embeddings(&out_dir.join("report_embeddings.jsonl"), &embs)?;
                embs
            }
        };
        features.insert(SourceKind::Report, embs);
    }
    if needed.contains(&SourceKind::Slide) {
        let base = cases_path.parent().unwrap_or(Path::new("."));
        let slides = load_slide_features(&eligible, cfg.paths.slides.as_deref(), base)?;
        features.insert(SourceKind::Slide, slides);
    }

    let folds = stratified_folds(&manifest.labels(), cfg.experiment.n_folds, cfg.seed)?;
    let settings = ExperimentSettings {
        train: cfg.train.clone(),
        positive_class: cfg.experiment.positive_class,
        seed: cfg.seed,
    };
    let mut results = Vec::new();
    let mut audits = BTreeMap::new();
    for name in &cfg.experiment.configs {
        info!(config = %name, "running experiment");
        let outcome = run_experiment(*name, &features, &manifest, &folds, &settings)?;
        audits.insert(name.to_string(), outcome.audits);
        results.push(outcome.result);
    }

    let mut lines = String::new();
    for r in &results {
        lines.push_str(&r.to_json_line());
        lines.push('\n');
    }
    std::fs::write(&results_path, &lines).map_err(|e| Error::io(&results_path, e))?;
    let table = format_table(&results, &embedder.descriptor());
    let table_path = out_dir.join("results_table.md");
    std::fs::write(&table_path, format!("{table}\n")).map_err(|e| Error::io(&table_path, e))?;
    let audit_path = out_dir.join("fold_audits.json");
    std::fs::write(&audit_path, serde_json::to_string_pretty(&audits).expect("audits serialize"))
        .map_err(|e| Error::io(&audit_path, e))?;
    let folds_path = out_dir.join("folds.json");
    std::fs::write(&folds_path, serde_json::to_string_pretty(&folds).expect("folds serialize"))
        .map_err(|e| Error::io(&folds_path, e))?;

    let mut run_manifest = RunManifest::new("experiment run", cfg.seed, offline)
        .with_config(cfg)
        .input("cases", cases_path);
    run_manifest.inputs.insert("embedder".into(), embedder.descriptor());
    run_manifest.outputs = [&results_path, &table_path, &audit_path, &folds_path]
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    if reports.is_some() {
        run_manifest.outputs.push("reports/".into());
        run_manifest.outputs.push("report_embeddings.jsonl".into());
    }
    run_manifest.write(&out_dir.join(MANIFEST_FILE))?;

    Ok(ExperimentRun {
        results,
        audits,
        table,
        reports,
        results_path,
    })
}
