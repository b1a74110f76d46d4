use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stella_core::artifact;
use stella_core::beir::{self, BeirError};
use stella_core::eval::{self, EvalError};
use stella_core::gateway::GatewayError;
use stella_core::pipeline::{self, PipelineConfig, PipelineError, Retriever, Stage};
use stella_core::querygen::Language;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "stella", version, about = "Terminology-aware retrieval benchmark builder")]
struct Cli {
    /// Log format on stderr.
    #[arg(long, value_enum, default_value_t = LogFormat::Json, global = true)]
    log_format: LogFormat,
    /// Log filter, e.g. `info` or `stella_core=debug`. RUST_LOG overrides.
    #[arg(long, default_value = "info", global = true)]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogFormat {
    Json,
    Text,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the offline simulated gateway; no network calls.
    #[arg(long)]
    mock: bool,
    /// Directory for reports and stage manifests.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage in order and verify the manifest chain.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
    /// Run one named stage from a config.
    Run {
        stage: Stage,
        #[command(flatten)]
        common: Common,
    },
    /// Filter a document manifest into accepted.jsonl and ledger.json.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Split accepted documents into passages.
    Chunk {
        #[arg(long)]
        accepted: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chunk_size: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Build the terminology dictionary.
    Terms {
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        wordfreq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min_df: Option<usize>,
        #[arg(long)]
        zipf: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Density filter, intent classification and k-medoids selection.
    Select {
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        per_medoid: Option<usize>,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        min_distinct: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Describe terms and generate one TCQ and one TAQ per candidate.
    Generate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        passages: PathBuf,
        /// Accepted for symmetry with the other stages; generation reads
        /// terms from the candidates.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Translate queries with term preservation.
    Translate {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated language codes (default: all six targets).
        #[arg(long, value_delimiter = ',')]
        languages: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Back-translation and term-preservation audits.
    Audit {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        translations: PathBuf,
        #[arg(long)]
        passages: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write BEIR splits for English and every translated language.
    Export {
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        translations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a retriever on a BEIR split or a directory of language splits.
    Eval {
        #[arg(long)]
        beir: PathBuf,
        #[arg(long, default_value = "bm25")]
        retriever: Retriever,
        #[arg(long, default_value_t = eval::DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write TREC run files next to the report.
        #[arg(long)]
        runs: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Micro/macro F1 of predicted intents against reference labels.
    ValidateIntents {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-hash artifacts and check the stage manifest chain.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Download one released BEIR split.
    Fetch {
        #[arg(long)]
        url: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = &common.work_dir {
        cfg.paths.out_dir = w.clone();
    }
    Ok(cfg)
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn run_one(stage: Stage, cfg: &PipelineConfig, mock: bool) -> Result<()> {
    let gw = if stage.needs_gateway() { Some(cfg.gateway(mock)?) } else { None };
    let m = pipeline::run_stage(stage, cfg, gw.as_ref())?;
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

/// Applies the `--work-dir` default for single-stage commands: manifests go
/// next to the primary output.
fn with_out_dir(mut cfg: PipelineConfig, common: &Common, out: &Path) -> PipelineConfig {
    if common.work_dir.is_none() && common.config.is_none() {
        cfg.paths.out_dir = parent_dir(out);
    }
    cfg
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::RunAll { common } => {
            let cfg = load_config(&common)?;
            let gw = cfg.gateway(common.mock)?;
            let summary = pipeline::run_all(&cfg, &gw)?;
            for m in &summary.manifests {
                tracing::info!(stage = %m.stage, counts = ?m.counts, "complete");
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Run { stage, common } => {
            let cfg = load_config(&common)?;
            run_one(stage, &cfg, common.mock)?;
        }
        Command::Ingest { manifest, out, common } => {
            let mut cfg = load_config(&common)?;
            cfg.paths.manifest = Some(manifest);
            cfg.paths.accepted = Some(out.join("accepted.jsonl"));
            if common.work_dir.is_none() {
                cfg.paths.out_dir = out;
            }
            run_one(Stage::Ingest, &cfg, common.mock)?;
        }
        Command::Chunk { accepted, out, chunk_size, overlap, common } => {
            let mut cfg = with_out_dir(load_config(&common)?, &common, &out);
            cfg.paths.accepted = Some(accepted);
            cfg.paths.passages = Some(out);
            if let Some(n) = chunk_size {
                cfg.chunk.chunk_size = n;
            }
            if let Some(n) = overlap {
                cfg.chunk.overlap = n;
            }
            cfg.chunk.validate()?;
            run_one(Stage::Chunk, &cfg, common.mock)?;
        }
        Command::Terms { passages, wordfreq, out, min_df, zipf, common } => {
            let mut cfg = with_out_dir(load_config(&common)?, &common, &out);
            cfg.paths.passages = Some(passages);
            cfg.paths.wordfreq = Some(wordfreq);
            cfg.paths.dict = Some(out);
            if let Some(n) = min_df {
                cfg.terms.min_doc_frequency = n;
            }
            if let Some(z) = zipf {
                cfg.terms.zipf_threshold = z;
            }
            run_one(Stage::Terms, &cfg, common.mock)?;
        }
        Command::Select { passages, dict, out, k, per_medoid, sample, min_distinct, common } => {
            let mut cfg = with_out_dir(load_config(&common)?, &common, &out);
            cfg.paths.passages = Some(passages);
            cfg.paths.dict = Some(dict);
            cfg.paths.candidates = Some(out);
            if let Some(k) = k {
                cfg.select.k = k;
            }
            if let Some(n) = per_medoid {
                cfg.select.per_medoid = n;
            }
            if sample.is_some() {
                cfg.select.sample = sample;
            }
            if let Some(n) = min_distinct {
                cfg.select.min_distinct = n;
            }
            cfg.cluster_config().validate()?;
            run_one(Stage::Select, &cfg, common.mock)?;
        }
        Command::Generate { candidates, passages, dict: _, out, common } => {
            let mut cfg = with_out_dir(load_config(&common)?, &common, &out);
            cfg.paths.candidates = Some(candidates);
            cfg.paths.passages = Some(passages);
            cfg.paths.queries = Some(out);
            run_one(Stage::Generate, &cfg, common.mock)?;
        }
        Command::Translate { queries, dict, out, languages, common } => {
            let mut cfg = with_out_dir(load_config(&common)?, &common, &out);
            cfg.paths.queries = Some(queries);
            cfg.paths.dict = Some(dict);
            cfg.paths.translations = Some(out);
            if !languages.is_empty() {
                cfg.translate.languages = languages
                    .iter()
                    .map(|c| {
                        Language::from_code(c)
                            .filter(|l| *l != Language::En)
                            .with_context(|| format!("unknown target language {c:?}"))
                    })
                    .collect::<Result<_>>()?;
            }
            run_one(Stage::Translate, &cfg, common.mock)?;
        }
        Command::Audit { queries, translations, passages, common } => {
            let mut cfg = load_config(&common)?;
            if common.work_dir.is_none() && common.config.is_none() {
                cfg.paths.out_dir = parent_dir(&queries);
            }
            cfg.paths.queries = Some(queries);
            cfg.paths.translations = Some(translations);
            cfg.paths.passages = Some(passages);
            run_one(Stage::Audit, &cfg, common.mock)?;
        }
        Command::Export { passages, queries, translations, out } => {
            let mut cfg = PipelineConfig::default();
            cfg.paths.out_dir = parent_dir(&out);
            cfg.paths.passages = Some(passages);
            cfg.paths.queries = Some(queries);
            cfg.paths.translations = Some(translations);
            cfg.paths.beir = Some(out);
            run_one(Stage::Export, &cfg, false)?;
        }
        Command::Eval { beir: root, retriever, k, out, runs, common } => {
            let mut cfg = load_config(&common)?;
            cfg.eval.k = k;
            let splits = pipeline::load_splits(&root)?;
            let gw = match retriever {
                Retriever::Dense => Some(cfg.gateway(common.mock)?),
                Retriever::Bm25 => None,
            };
            let (report, run_map) = pipeline::evaluate_splits(retriever, &splits, &cfg.eval, gw.as_ref())?;
            match &out {
                Some(path) => {
                    artifact::write_json(path, &report)?;
                    if runs {
                        for (lang, run) in &run_map {
                            let p = parent_dir(path).join(format!("{}_{}.trec", retriever.name(), lang.code()));
                            eval::write_trec_run(&p, run, retriever.name())?;
                        }
                    }
                }
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            eprint!("{}", report.to_text());
        }
        Command::ValidateIntents { pred, reference, out } => {
            let p = eval::read_intent_labels(&pred)?;
            let r = eval::read_intent_labels(&reference)?;
            let report = eval::f1_validate(&p, &r)?;
            let mut text = format!("n={} micro_f1={:.4} macro_f1={:.4}\n", report.n, report.micro_f1, report.macro_f1);
            for (label, c) in &report.per_intent {
                text.push_str(&format!(
                    "{:<28} support={:<4} precision={:.4} recall={:.4} f1={:.4}\n",
                    label.display(),
                    c.support,
                    c.precision,
                    c.recall,
                    c.f1
                ));
            }
            eprint!("{text}");
            match out {
                Some(path) => artifact::write_json(&path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Verify { common } => {
            let cfg = load_config(&common)?;
            let links = pipeline::verify_chain(&cfg.artifacts())?;
            println!("{}", serde_json::json!({ "chain_links": links, "ok": true }));
        }
        Command::Fetch { url, out } => {
            beir::fetch_split(&url, &out)?;
            let split = beir::load_beir(&out)?;
            let counts: BTreeMap<&str, usize> =
                [("corpus", split.corpus.len()), ("queries", split.queries.len()), ("qrels", split.qrels.len())]
                    .into_iter()
                    .collect();
            println!("{}", serde_json::to_string(&counts)?);
        }
    }
    Ok(())
}

/// Exit codes: 2 configuration, 3 missing artifact, 4 model service,
/// 5 invalid data or broken provenance, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Config { .. } => 2,
                PipelineError::MissingArtifact { .. } => 3,
                PipelineError::Gateway(_) => 4,
                PipelineError::ChainBroken { .. } | PipelineError::Beir(_) | PipelineError::Artifact(_) => 5,
                _ => continue,
            };
        }
        if cause.downcast_ref::<GatewayError>().is_some() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<BeirError>() {
            return match e {
                BeirError::Fetch { .. } => 4,
                _ => 5,
            };
        }
        if cause.downcast_ref::<EvalError>().is_some() || cause.downcast_ref::<artifact::ArtifactError>().is_some() {
            return 5;
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return 3;
            }
        }
    }
    1
}

fn init_logging(format: LogFormat, level: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    match format {
        LogFormat::Json => builder.json().init(),
        LogFormat::Text => builder.init(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_format, &cli.log);
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let causes: Vec<String> = err.chain().map(ToString::to_string).collect();
            tracing::error!(exit_code = code, error = %err, causes = ?causes, "command failed");
            eprintln!("{}", serde_json::json!({ "error": err.to_string(), "causes": causes, "exit_code": code }));
            ExitCode::from(code)
        }
    }
}
