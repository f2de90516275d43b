use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use tracing::info;

use moa_core::agent::AgentConfig;
use moa_core::config::RunConfig;
use moa_core::embedding::{apply_normalizer, fit_normalizer, save_embeddings, Modality, NormalizationStats};
use moa_core::knowledge::{load_corpus, KnowledgeIndex, DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP, DEFAULT_TOP_K};
use moa_core::pipeline::{
    embed_report_dir, ensure_parent, generate_reports, ingest, load_embedding_source, load_labels,
    manifest_path_for_file, run_experiments, train_checkpoint, RunManifest, MANIFEST_FILE,
};
use moa_core::text_embed::{EmbedderConfig, EmbedderKind};

#[derive(Parser)]
#[command(name = "moa", version, about = "Multimodal IDH1 prediction: reports, embeddings, training and evaluation")]
struct Cli {
    /// Log line format on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    log_format: LogFormat,

    /// Raise log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a patient-case file and print its class profile
    Ingest {
        #[arg(long)]
        cases: PathBuf,
        /// Treat manifest warnings as errors.
        #[arg(long)]
        strict: bool,
        /// Also write the cohort summary here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build or query the knowledge-base index
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Generate agent reports
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
    /// Embed texts or normalize embeddings
    Embed {
        #[command(subcommand)]
        command: EmbedCommand,
    },
    /// Train a classifier on one embedding file
    Train {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the cross-validated experiments
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
}

#[derive(Subcommand)]
enum KbCommand {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated relevance keywords.
        #[arg(long, value_delimiter = ',')]
        keywords: Option<Vec<String>>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
        chunk_size: usize,
        #[arg(long, default_value_t = DEFAULT_OVERLAP)]
        overlap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, default_value_t = DEFAULT_TOP_K)]
        k: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    Generate {
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        offline: bool,
        /// Withhold the histology tool from the agent.
        #[arg(long)]
        no_histology: bool,
    },
}

#[derive(Subcommand)]
enum EmbedCommand {
    /// Embed every `<id>.txt` report in a directory
    Texts {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = EmbedderArg::Hashed)]
        embedder: EmbedderArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dimension: Option<usize>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, value_enum, default_value_t = ModalityArg::Report)]
        modality: ModalityArg,
        #[arg(long)]
        offline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Z-score embeddings with stored statistics, or fit them with `--fit`
    Normalize {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fit: bool,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Results file (`*.jsonl`) or output directory. Defaults to `paths.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        offline: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderArg {
    Hashed,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Report,
    ClinicalText,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => tracing::Level::WARN,
        (false, 0) => tracing::Level::INFO,
        (false, 1) => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    let builder = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false);
    match cli.log_format {
        LogFormat::Text => builder.with_ansi(false).init(),
        LogFormat::Json => builder.json().flatten_event(true).init(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_ingest(cases: &Path, strict: bool, out: Option<&Path>) -> Result<()> {
    let manifest = ingest(cases, strict)?;
    let summary = json!({
        "cases": manifest.cases.len(),
        "class_counts": manifest.class_counts,
        "ineligible": manifest.ineligible,
        "warnings": manifest.warnings,
    });
    println!("{}", serde_json::to_string(&summary)?);
    if let Some(out) = out {
        write_json(out, &summary)?;
        let mut m = RunManifest::new("ingest", 0, true).input("cases", cases);
        m.outputs.push(out.display().to_string());
        m.write(&manifest_path_for_file(out))?;
    }
    Ok(())
}

fn cmd_kb(command: KbCommand) -> Result<()> {
    match command {
        KbCommand::Build {
            corpus,
            keywords,
            config,
            chunk_size,
            overlap,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let keywords = keywords.unwrap_or_else(|| cfg.kb.keywords.clone());
            let embedder = cfg.embedder.build(cfg.offline)?;
            let docs = load_corpus(&corpus)?;
            let index = KnowledgeIndex::from_corpus(&docs, &keywords, chunk_size, overlap, embedder.as_ref())?;
            let kept: BTreeSet<&str> = index.chunks.iter().map(|c| c.doc_id.as_str()).collect();
            ensure_parent(&out)?;
            index.save(&out)?;
            info!(documents = docs.len(), relevant = kept.len(), chunks = index.chunks.len(), "index built");
            let mut m = RunManifest::new("kb build", cfg.seed, cfg.offline)
                .with_config(&cfg)
                .input("corpus", &corpus);
            m.inputs.insert("embedder".into(), index.embedder.clone());
            m.inputs.insert("keywords".into(), keywords.join(","));
            m.outputs.push(out.display().to_string());
            m.write(&manifest_path_for_file(&out))?;
            println!(
                "{}",
                json!({"documents": docs.len(), "relevant_documents": kept.len(), "chunks": index.chunks.len()})
            );
        }
        KbCommand::Query { index, query, k, config } => {
            let idx = KnowledgeIndex::load(&index)?;
            let embedder_cfg = match config {
                Some(p) => RunConfig::load(&p)?.embedder,
                None => hashed_config_for(&idx.embedder, idx.dimension),
            };
            let embedder = embedder_cfg.build(true)?;
            if embedder.descriptor() != idx.embedder {
                bail!(moa_core::Error::Config(format!(
                    "index was built with {} but the query embedder is {}",
                    idx.embedder,
                    embedder.descriptor()
                )));
            }
            for hit in idx.retrieve(embedder.as_ref(), &query, k)? {
                println!("{}", serde_json::to_string(&hit)?);
            }
        }
    }
    Ok(())
}

/// Rebuilds a hashed embedder config from an index descriptor like `hashed:256:8192`.
fn hashed_config_for(descriptor: &str, dimension: usize) -> EmbedderConfig {
    let mut cfg = EmbedderConfig::hashed(dimension);
    if let Some(max) = descriptor
        .strip_prefix("hashed:")
        .and_then(|rest| rest.split(':').nth(1))
        .and_then(|s| s.parse().ok())
    {
        cfg.max_tokens = max;
    }
    cfg
}

fn cmd_report(command: ReportCommand) -> Result<()> {
    let ReportCommand::Generate {
        cases,
        config,
        out,
        offline,
        no_histology,
    } = command;
    let mut cfg = RunConfig::load(&config)?;
    if let Some(c) = cases {
        cfg.paths.cases = Some(c);
    }
    let offline = offline || cfg.offline;
    cfg.validate()?;
    let cases_path = cfg.require("cases", &cfg.paths.cases)?.to_path_buf();
    let cohort = ingest(&cases_path, false)?;
    let agent = AgentConfig {
        histology_enabled: cfg.agent.histology_enabled && !no_histology,
        ..cfg.agent.clone()
    };
    let summary = generate_reports(&cfg, &agent, &cohort.cases, &out, offline)?;
    write_json(&out.join("report_summary.json"), &serde_json::to_value(&summary)?)?;
    let mut m = RunManifest::new("report generate", cfg.seed, offline)
        .with_config(&cfg)
        .input("cases", &cases_path);
    m.inputs.insert("histology_enabled".into(), agent.histology_enabled.to_string());
    m.outputs = vec!["<patient_id>.txt".into(), "<patient_id>.transcript.json".into(), "report_summary.json".into()];
    m.write(&out.join(MANIFEST_FILE))?;
    println!(
        "{}",
        json!({
            "written": summary.written.len(),
            "failed": summary.failed.len(),
            "histology_invocations": summary.histology_invocations,
        })
    );
    if !summary.failed.is_empty() {
        bail!(moa_core::Error::Backend(format!(
            "report generation failed for {} case(s)",
            summary.failed.len()
        )));
    }
    Ok(())
}

fn cmd_embed(command: EmbedCommand) -> Result<()> {
    match command {
        EmbedCommand::Texts {
            input,
            embedder,
            config,
            dimension,
            endpoint,
            modality,
            offline,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut ecfg = cfg.embedder.clone();
            ecfg.kind = match embedder {
                EmbedderArg::Hashed => EmbedderKind::Hashed,
                EmbedderArg::Remote => EmbedderKind::Remote,
            };
            if let Some(d) = dimension {
                ecfg.dimension = d;
            }
            if endpoint.is_some() {
                ecfg.endpoint = endpoint;
            }
            let offline = offline || cfg.offline;
            let embedder = ecfg.build(offline)?;
            let modality = match modality {
                ModalityArg::Report => Modality::Report,
                ModalityArg::ClinicalText => Modality::ClinicalText,
            };
            let embs = embed_report_dir(&input, embedder.as_ref(), modality)?;
            ensure_parent(&out)?;
            save_embeddings(&out, &embs)?;
            let mut m = RunManifest::new("embed texts", cfg.seed, offline).input("in", &input);
            m.inputs.insert("embedder".into(), embedder.descriptor());
            m.outputs.push(out.display().to_string());
            m.write(&manifest_path_for_file(&out))?;
            info!(count = embs.len(), dimension = embedder.dimension(), "embedded");
        }
        EmbedCommand::Normalize { stats, input, out, fit } => {
            let embs = load_embedding_source(&input)?;
            let st = if fit {
                let st = fit_normalizer(&embs)?;
                ensure_parent(&stats)?;
                st.save(&stats)?;
                st
            } else {
                NormalizationStats::load(&stats)?
            };
            let normed = embs.iter().map(|e| apply_normalizer(&st, e)).collect::<moa_core::Result<Vec<_>>>()?;
            ensure_parent(&out)?;
            save_embeddings(&out, &normed)?;
            let mut m = RunManifest::new("embed normalize", 0, true)
                .input("in", &input)
                .input("stats", &stats);
            m.outputs.push(out.display().to_string());
            if fit {
                m.outputs.push(stats.display().to_string());
            }
            m.write(&manifest_path_for_file(&out))?;
        }
    }
    Ok(())
}

fn cmd_train(embeddings: &Path, labels: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    cfg.train.validate()?;
    let embs = load_embedding_source(embeddings)?;
    let labels_map = load_labels(labels)?;
    let (ckpt, losses) = train_checkpoint(&embs, &labels_map, &cfg.train)?;
    ensure_parent(out)?;
    ckpt.save(out)?;
    let mut m = RunManifest::new("train", cfg.train.seed, true)
        .with_config(&cfg)
        .input("embeddings", embeddings)
        .input("labels", labels);
    m.outputs.push(out.display().to_string());
    m.write(&manifest_path_for_file(out))?;
    println!(
        "{}",
        json!({
            "samples": embs.len(),
            "epochs": losses.len(),
            "final_loss": losses.last(),
        })
    );
    Ok(())
}

fn cmd_experiment(command: ExperimentCommand) -> Result<()> {
    let ExperimentCommand::Run { config, out, offline } = command;
    let cfg = RunConfig::load(&config)?;
    let out = match out.or_else(|| cfg.paths.output_dir.clone()) {
        Some(o) => o,
        None => bail!(moa_core::Error::Config("no --out given and paths.output_dir is not set".into())),
    };
    let run = run_experiments(&cfg, &out, offline || cfg.offline)?;
    println!("{}", run.table);
    info!(results = %run.results_path.display(), "experiment finished");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { cases, strict, out } => cmd_ingest(&cases, strict, out.as_deref()),
        Command::Kb { command } => cmd_kb(command),
        Command::Report { command } => cmd_report(command),
        Command::Embed { command } => cmd_embed(command),
        Command::Train {
            embeddings,
            labels,
            config,
            out,
        } => cmd_train(&embeddings, &labels, config.as_deref(), &out),
        Command::Experiment { command } => cmd_experiment(command),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<moa_core::Error>())
        .map(|e| e.kind())
        .unwrap_or("runtime")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version exit 0; usage errors exit 2.
        Err(e) => e.exit(),
    };
    init_logging(&cli);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = json!({"error": error_kind(&err), "message": format!("{err:#}")});
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}
