//! The TOML run configuration shared by every CLI subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::classifier::TrainConfig;
use crate::cohort::Idh1Status;
use crate::evaluation::{ConfigName, DEFAULT_FOLDS};
use crate::http::sha256_hex;
use crate::knowledge::{default_keywords, DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP};
use crate::text_embed::EmbedderConfig;
use crate::tools::ToolSettings;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub cases: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// HTTP fixture directory.
    pub fixtures: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Directory of per-patient slide feature files; defaults to the
    /// directory holding the cases file.
    pub slides: Option<PathBuf>,
    /// Precomputed report embeddings. When set, report generation is skipped.
    pub report_embeddings: Option<PathBuf>,
    /// Histology classifier checkpoint, needed only when the agent may call it.
    pub histology_model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_folds: usize,
    pub configs: Vec<ConfigName>,
    pub positive_class: Idh1Status,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_folds: DEFAULT_FOLDS,
            configs: ConfigName::ALL.to_vec(),
            positive_class: Idh1Status::Mutant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KbConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    pub keywords: Vec<String>,
}

impl Default for KbConfig {
    fn default() -> Self {
        KbConfig {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
            keywords: default_keywords(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub offline: bool,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub tools: ToolSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub kb: KbConfig,
    /// Hex SHA-256 of the config file bytes; filled in by `load`.
    #[serde(skip)]
    pub source_sha256: String,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            file: source.to_string(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        cfg.source_sha256 = sha256_hex(text.as_bytes());
        Ok(cfg)
    }

    /// Loads a config file. Relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::parse(&text, &path.display().to_string())?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.cases,
            &mut p.corpus,
            &mut p.fixtures,
            &mut p.output_dir,
            &mut p.slides,
            &mut p.report_embeddings,
            &mut p.histology_model,
        ] {
            resolve(base, slot);
        }
    }

    /// Checks field ranges and that every configured input path exists.
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.train.validate()?;
        self.embedder.validate()?;
        if self.experiment.n_folds < 2 {
            return Err(Error::Config("experiment.n_folds must be >= 2".into()));
        }
        if self.experiment.configs.is_empty() {
            return Err(Error::Config("experiment.configs is empty".into()));
        }
        if self.kb.chunk_size == 0 || self.kb.overlap >= self.kb.chunk_size {
            return Err(Error::Config("kb.overlap must be smaller than kb.chunk_size".into()));
        }
        let p = &self.paths;
        for (name, path) in [
            ("cases", &p.cases),
            ("corpus", &p.corpus),
            ("fixtures", &p.fixtures),
            ("slides", &p.slides),
            ("report_embeddings", &p.report_embeddings),
            ("histology_model", &p.histology_model),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "paths.{name} does not exist: {}",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Tool settings with the config-level paths filled in.
    pub fn tool_settings(&self) -> ToolSettings {
        let mut t = self.tools.clone();
        if t.fixtures_dir.is_none() {
            t.fixtures_dir = self.paths.fixtures.clone();
        }
        if t.histology_model.is_none() {
            t.histology_model = self.paths.histology_model.clone();
        }
        if t.feature_base_dir.is_none() {
            t.feature_base_dir = self.paths.cases.as_ref().and_then(|c| c.parent().map(Path::to_path_buf));
        }
        t
    }

    pub fn require<'a>(&self, name: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("paths.{name} is not set")))
    }
}
