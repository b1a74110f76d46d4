//! Stage orchestration: TOML config, per-stage artifact I/O, provenance
//! manifests and chain verification.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, ArtifactError};
use crate::beir::{self, BeirError};
use crate::chunker::{self, ChunkConfig, ChunkError, Passage};
use crate::eval::{self, Bm25Index, DenseIndex, EvalError, SplitScores};
use crate::gateway::http::ProviderProfile;
use crate::gateway::{Gateway, GatewayError};
use crate::ingest::{self, DocumentRecord, IngestError};
use crate::querygen::{self, GenerationInput, Language, QualityScore, QueryGenError, QueryRecord, QueryType};
use crate::selector::{self, ClusterConfig, Distance, IntentLabel, PoolMember, SelectError};
use crate::terminology::{self, FilterOutcome, TermError, TermFilterConfig, TerminologyDictionary, ZipfTable};
use crate::xlingual::{self, TranslationRecord, XlingualError};

pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("stage {stage} needs {}, which does not exist", path.display())]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error("stage {stage}: {} hashes to {actual}, upstream recorded {expected}", path.display())]
    ChainBroken { stage: Stage, path: PathBuf, expected: String, actual: String },
    #[error("stage {stage}: {message}")]
    Stage { stage: Stage, message: String },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Term(#[from] TermError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    QueryGen(#[from] QueryGenError),
    #[error(transparent)]
    Xlingual(#[from] XlingualError),
    #[error(transparent)]
    Beir(#[from] BeirError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Chunk,
    Terms,
    Select,
    Generate,
    Translate,
    Audit,
    Export,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Chunk,
        Stage::Terms,
        Stage::Select,
        Stage::Generate,
        Stage::Translate,
        Stage::Audit,
        Stage::Export,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Chunk => "chunk",
            Stage::Terms => "terms",
            Stage::Select => "select",
            Stage::Generate => "generate",
            Stage::Translate => "translate",
            Stage::Audit => "audit",
            Stage::Export => "export",
            Stage::Eval => "eval",
        }
    }

    /// Whether the stage talks to a model service.
    pub fn needs_gateway(self) -> bool {
        !matches!(self, Stage::Ingest | Stage::Chunk | Stage::Export)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

// ---------------------------------------------------------------------------
// Config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub wordfreq: Option<PathBuf>,
    pub accepted: Option<PathBuf>,
    pub passages: Option<PathBuf>,
    pub dict: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub translations: Option<PathBuf>,
    pub beir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            manifest: None,
            wordfreq: None,
            accepted: None,
            passages: None,
            dict: None,
            candidates: None,
            queries: None,
            translations: None,
            beir: None,
            report_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub chat: Option<ProviderProfile>,
    pub embed: Option<ProviderProfile>,
    pub tagger: Option<ProviderProfile>,
    /// Embedding dimension of the offline hashing embedder.
    pub mock_dim: usize,
    pub max_concurrent: usize,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self { chat: None, embed: None, tagger: None, mock_dim: 64, max_concurrent: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectParams {
    pub min_distinct: usize,
    pub k: usize,
    pub per_medoid: usize,
    pub sample: Option<usize>,
}

impl Default for SelectParams {
    fn default() -> Self {
        Self { min_distinct: 5, k: 5, per_medoid: 20, sample: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateParams {
    pub window: usize,
    pub max_repairs: u32,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self { window: querygen::DEFAULT_WINDOW, max_repairs: querygen::DEFAULT_MAX_REPAIRS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslateParams {
    pub languages: Vec<Language>,
    pub max_repairs: u32,
}

impl Default for TranslateParams {
    fn default() -> Self {
        Self { languages: Language::TARGETS.to_vec(), max_repairs: querygen::DEFAULT_MAX_REPAIRS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditParams {
    pub bt_threshold: f64,
    /// Number of English queries scored by the judge prompt (0 disables).
    pub judge_sample: usize,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self { bt_threshold: xlingual::BT_THRESHOLD, judge_sample: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retriever {
    Bm25,
    Dense,
}

impl Retriever {
    pub fn name(self) -> &'static str {
        match self {
            Retriever::Bm25 => "bm25",
            Retriever::Dense => "dense",
        }
    }
}

impl FromStr for Retriever {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bm25" => Ok(Retriever::Bm25),
            "dense" => Ok(Retriever::Dense),
            _ => Err(format!("unknown retriever {s:?} (bm25 or dense)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub retrievers: Vec<Retriever>,
    pub k: usize,
    pub k1: f64,
    pub b: f64,
    pub query_prefix: String,
    pub passage_prefix: String,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            retrievers: vec![Retriever::Bm25],
            k: eval::DEFAULT_K,
            k1: eval::DEFAULT_K1,
            b: eval::DEFAULT_B,
            query_prefix: String::new(),
            passage_prefix: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub gateway: GatewaySection,
    pub chunk: ChunkConfig,
    pub terms: TermFilterConfig,
    pub select: SelectParams,
    pub generate: GenerateParams,
    pub translate: TranslateParams,
    pub audit: AuditParams,
    pub eval: EvalParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 13,
            paths: Paths::default(),
            gateway: GatewaySection::default(),
            chunk: ChunkConfig::default(),
            terms: TermFilterConfig::default(),
            select: SelectParams::default(),
            generate: GenerateParams::default(),
            translate: TranslateParams::default(),
            audit: AuditParams::default(),
            eval: EvalParams::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text)
            .map_err(|e| PipelineError::Config { path: base.to_path_buf(), message: e.to_string() })?;
        cfg.resolve_paths(base);
        cfg.validate().map_err(|message| PipelineError::Config { path: base.to_path_buf(), message })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            PipelineError::Config { message, .. } => PipelineError::Config { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.out_dir);
        for slot in [
            &mut p.manifest,
            &mut p.wordfreq,
            &mut p.accepted,
            &mut p.passages,
            &mut p.dict,
            &mut p.candidates,
            &mut p.queries,
            &mut p.translations,
            &mut p.beir,
            &mut p.report_dir,
        ] {
            if let Some(x) = slot.as_mut() {
                fix(x);
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.chunk.validate().map_err(|e| e.to_string())?;
        self.terms.validate().map_err(|e| e.to_string())?;
        self.cluster_config().validate().map_err(|e| e.to_string())?;
        if self.select.min_distinct == 0 {
            return Err("select.min_distinct must be positive".into());
        }
        if self.translate.languages.contains(&Language::En) {
            return Err("translate.languages must not include en".into());
        }
        if self.eval.k == 0 {
            return Err("eval.k must be positive".into());
        }
        if self.gateway.mock_dim == 0 || self.gateway.max_concurrent == 0 {
            return Err("gateway.mock_dim and gateway.max_concurrent must be positive".into());
        }
        Ok(())
    }

    /// The config seed is the clustering seed.
    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            k: self.select.k,
            per_medoid: self.select.per_medoid,
            distance: Distance::Cosine,
            seed: self.seed,
            sample: self.select.sample,
        }
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.paths)
    }

    /// Offline gateway under `mock`, otherwise one built from the profiles.
    pub fn gateway(&self, mock: bool) -> Result<Gateway, PipelineError> {
        if mock {
            return Ok(Gateway::offline(self.gateway.mock_dim, self.gateway.max_concurrent));
        }
        let missing = |what: &str| PipelineError::Config {
            path: self.paths.out_dir.clone(),
            message: format!("gateway.{what} profile is required without --mock"),
        };
        let chat = self.gateway.chat.as_ref().ok_or_else(|| missing("chat"))?;
        let embed = self.gateway.embed.as_ref().ok_or_else(|| missing("embed"))?;
        Ok(Gateway::from_profiles(chat, embed, self.gateway.tagger.as_ref())?)
    }

    /// Hash of everything a stage's output depends on besides its inputs.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let params = match stage {
            Stage::Ingest => serde_json::json!({}),
            Stage::Chunk => serde_json::json!(self.chunk),
            Stage::Terms => serde_json::json!(self.terms),
            Stage::Select => serde_json::json!({ "select": self.select, "seed": self.seed }),
            Stage::Generate => serde_json::json!(self.generate),
            Stage::Translate => serde_json::json!(self.translate),
            Stage::Audit => serde_json::json!(self.audit),
            Stage::Export => serde_json::json!({}),
            Stage::Eval => serde_json::json!(self.eval),
        };
        artifact::sha256_bytes(format!("{stage}:{params}").as_bytes())
    }
}

/// Resolved artifact locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub out_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub wordfreq: Option<PathBuf>,
    pub accepted: PathBuf,
    pub ledger: PathBuf,
    pub passages: PathBuf,
    pub chunk_report: PathBuf,
    pub dict: PathBuf,
    pub term_audit: PathBuf,
    pub candidates: PathBuf,
    pub selection_report: PathBuf,
    pub queries: PathBuf,
    pub rejected: PathBuf,
    pub generation_report: PathBuf,
    pub translations: PathBuf,
    pub flagged: PathBuf,
    pub translation_report: PathBuf,
    pub audited: PathBuf,
    pub audit_report: PathBuf,
    pub beir: PathBuf,
    pub report_dir: PathBuf,
}

impl Artifacts {
    pub fn new(p: &Paths) -> Self {
        let o = &p.out_dir;
        let or = |x: &Option<PathBuf>, name: &str| x.clone().unwrap_or_else(|| o.join(name));
        let accepted = or(&p.accepted, "accepted.jsonl");
        let ledger = accepted.with_file_name("ledger.json");
        Self {
            out_dir: o.clone(),
            manifest: p.manifest.clone(),
            wordfreq: p.wordfreq.clone(),
            accepted,
            ledger,
            passages: or(&p.passages, "passages.jsonl"),
            chunk_report: o.join("chunk_report.json"),
            dict: or(&p.dict, "dict.json"),
            term_audit: o.join("term_audit.json"),
            candidates: or(&p.candidates, "candidates.jsonl"),
            selection_report: o.join("selection_report.json"),
            queries: or(&p.queries, "queries.jsonl"),
            rejected: o.join("rejected_queries.jsonl"),
            generation_report: o.join("generation_report.json"),
            translations: or(&p.translations, "translations.jsonl"),
            flagged: o.join("flagged_translations.jsonl"),
            translation_report: o.join("translation_report.json"),
            audited: o.join("translations_audited.jsonl"),
            audit_report: o.join("audit_report.json"),
            beir: or(&p.beir, "beir"),
            report_dir: or(&p.report_dir, "eval"),
        }
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.out_dir.join(MANIFEST_DIR).join(format!("{stage}.json"))
    }
}

// ---------------------------------------------------------------------------
// Provenance

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fingerprint {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub config_hash: String,
    pub inputs: Vec<Fingerprint>,
    pub outputs: Vec<Fingerprint>,
    pub counts: BTreeMap<String, u64>,
}

fn display_path(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Fingerprints a file, or every file under a directory in path order.
pub fn fingerprint(path: &Path, root: &Path) -> Result<Vec<Fingerprint>, ArtifactError> {
    let mut files = Vec::new();
    collect_files(path, &mut files).map_err(|source| ArtifactError::Io { path: path.to_path_buf(), source })?;
    files
        .into_iter()
        .map(|f| Ok(Fingerprint { path: display_path(&f, root), sha256: artifact::sha256_file(&f)? }))
        .collect()
}

fn fingerprints(paths: &[&Path], root: &Path) -> Result<Vec<Fingerprint>, ArtifactError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(fingerprint(p, root)?);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<StageManifest, ArtifactError> {
    artifact::read_json(path)
}

/// Checks that every input of every present stage manifest matches the
/// output recorded by the stage that produced it, and that recorded outputs
/// still match the files on disk. Returns the number of links checked.
pub fn verify_chain(art: &Artifacts) -> Result<usize, PipelineError> {
    let mut produced: HashMap<String, (Stage, String)> = HashMap::new();
    let mut links = 0;
    for stage in Stage::ALL {
        let mpath = art.manifest_path(stage);
        if !mpath.exists() {
            continue;
        }
        let m = read_manifest(&mpath)?;
        for input in &m.inputs {
            if let Some((_, sha)) = produced.get(&input.path) {
                links += 1;
                if *sha != input.sha256 {
                    return Err(PipelineError::ChainBroken {
                        stage,
                        path: PathBuf::from(&input.path),
                        expected: sha.clone(),
                        actual: input.sha256.clone(),
                    });
                }
            }
        }
        for out in &m.outputs {
            let on_disk = resolve_display(&out.path, &art.out_dir);
            let actual = if on_disk.exists() { artifact::sha256_file(&on_disk)? } else { "missing".into() };
            if actual != out.sha256 {
                return Err(PipelineError::ChainBroken { stage, path: on_disk, expected: out.sha256.clone(), actual });
            }
            produced.insert(out.path.clone(), (stage, out.sha256.clone()));
        }
    }
    Ok(links)
}

fn resolve_display(p: &str, root: &Path) -> PathBuf {
    let path = PathBuf::from(p);
    if path.is_absolute() {
        path
    } else {
        root.join(path)
    }
}

// ---------------------------------------------------------------------------
// Stages

fn require(stage: Stage, path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact { stage, path: path.to_path_buf() })
    }
}

fn require_opt(stage: Stage, path: &Option<PathBuf>, what: &str) -> Result<PathBuf, PipelineError> {
    let p = path.clone().ok_or_else(|| PipelineError::Config {
        path: PathBuf::from("paths"),
        message: format!("paths.{what} is required for stage {stage}"),
    })?;
    require(stage, &p)?;
    Ok(p)
}

struct StageOutput {
    outputs: Vec<PathBuf>,
    counts: BTreeMap<String, u64>,
}

fn counts<const N: usize>(pairs: [(&str, usize); N]) -> BTreeMap<String, u64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v as u64)).collect()
}

/// Input artifacts read by a stage.
pub fn stage_inputs(stage: Stage, cfg: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let a = cfg.artifacts();
    Ok(match stage {
        Stage::Ingest => vec![require_opt(stage, &a.manifest, "manifest")?],
        Stage::Chunk => vec![a.accepted],
        Stage::Terms => vec![a.passages, require_opt(stage, &a.wordfreq, "wordfreq")?],
        Stage::Select => vec![a.passages, a.dict],
        Stage::Generate => vec![a.candidates, a.passages],
        Stage::Translate => vec![a.queries, a.dict],
        Stage::Audit => vec![a.queries, a.translations, a.passages],
        Stage::Export => vec![a.passages, a.queries, a.translations],
        Stage::Eval => vec![a.beir],
    })
}

/// Runs one stage and writes its manifest.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, gw: Option<&Gateway>) -> Result<StageManifest, PipelineError> {
    let inputs = stage_inputs(stage, cfg)?;
    for p in &inputs {
        require(stage, p)?;
    }
    let gw = match (stage.needs_gateway(), gw) {
        (true, None) => return Err(PipelineError::Stage { stage, message: "a model gateway is required".into() }),
        (_, g) => g,
    };
    let a = cfg.artifacts();
    tracing::info!(stage = %stage, "stage start");
    let input_fp = fingerprints(&inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &a.out_dir)?;
    let out = match stage {
        Stage::Ingest => stage_ingest(cfg, &a)?,
        Stage::Chunk => stage_chunk(cfg, &a)?,
        Stage::Terms => stage_terms(cfg, &a, gw.expect("checked"))?,
        Stage::Select => stage_select(cfg, &a, gw.expect("checked"))?,
        Stage::Generate => stage_generate(cfg, &a, gw.expect("checked"))?,
        Stage::Translate => stage_translate(cfg, &a, gw.expect("checked"))?,
        Stage::Audit => stage_audit(cfg, &a, gw.expect("checked"))?,
        Stage::Export => stage_export(&a)?,
        Stage::Eval => stage_eval(cfg, &a, gw.expect("checked"))?,
    };
    let manifest = StageManifest {
        stage,
        config_hash: cfg.stage_hash(stage),
        inputs: input_fp,
        outputs: fingerprints(&out.outputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &a.out_dir)?,
        counts: out.counts,
    };
    artifact::write_json(&a.manifest_path(stage), &manifest)?;
    tracing::info!(stage = %stage, counts = ?manifest.counts, "stage done");
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub manifests: Vec<StageManifest>,
    pub chain_links: usize,
}

/// Runs every stage in order, verifying the manifest chain after each one.
pub fn run_all(cfg: &PipelineConfig, gw: &Gateway) -> Result<RunSummary, PipelineError> {
    let art = cfg.artifacts();
    for stage in Stage::ALL {
        let p = art.manifest_path(stage);
        if p.exists() {
            fs::remove_file(&p).map_err(|source| ArtifactError::Io { path: p.clone(), source })?;
        }
    }
    let mut manifests = Vec::new();
    for stage in Stage::ALL {
        manifests.push(run_stage(stage, cfg, Some(gw))?);
        verify_chain(&art)?;
    }
    let chain_links = verify_chain(&art)?;
    Ok(RunSummary { manifests, chain_links })
}

fn stage_ingest(_cfg: &PipelineConfig, a: &Artifacts) -> Result<StageOutput, PipelineError> {
    let path = a.manifest.as_ref().expect("checked by stage_inputs");
    let file = File::open(path).map_err(|source| ArtifactError::Io { path: path.clone(), source })?;
    let rows = ingest::read_manifest(BufReader::new(file))?;
    let (accepted, ledger) = ingest::ingest(rows);
    if !ledger.reconciles() {
        return Err(PipelineError::Stage {
            stage: Stage::Ingest,
            message: "exclusion ledger does not reconcile".into(),
        });
    }
    for e in &ledger.parse_errors {
        tracing::warn!(line = e.line, error = %e.message, "manifest record skipped");
    }
    artifact::write_jsonl(&a.accepted, &accepted)?;
    artifact::write_json(&a.ledger, &ledger)?;
    Ok(StageOutput {
        outputs: vec![a.accepted.clone(), a.ledger.clone()],
        counts: counts([
            ("manifest_total", ledger.manifest_total),
            ("accepted", ledger.accepted),
            ("excluded", ledger.excluded_total()),
            ("recency_filtered", ledger.recency_filtered),
            ("parse_errors", ledger.parse_errors.len()),
        ]),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkReport {
    pub documents: usize,
    pub chunked: usize,
    pub skipped_empty: Vec<String>,
    pub passages: usize,
    pub degenerate: usize,
}

fn stage_chunk(cfg: &PipelineConfig, a: &Artifacts) -> Result<StageOutput, PipelineError> {
    let docs: Vec<DocumentRecord> = artifact::read_jsonl(&a.accepted)?;
    let results: Vec<Result<Vec<Passage>, ChunkError>> =
        docs.par_iter().map(|d| chunker::chunk_document(d, &cfg.chunk)).collect();
    let mut passages = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(ps) => passages.extend(ps),
            Err(ChunkError::EmptyDocument(id)) => {
                tracing::warn!(doc_id = %id, "document has no text; skipped");
                skipped.push(id);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let report = ChunkReport {
        documents: docs.len(),
        chunked: docs.len() - skipped.len(),
        passages: passages.len(),
        degenerate: passages.iter().filter(|p| p.degenerate).count(),
        skipped_empty: skipped,
    };
    artifact::write_jsonl(&a.passages, &passages)?;
    artifact::write_json(&a.chunk_report, &report)?;
    Ok(StageOutput {
        outputs: vec![a.passages.clone(), a.chunk_report.clone()],
        counts: counts([
            ("documents", report.documents),
            ("passages", report.passages),
            ("skipped_empty", report.skipped_empty.len()),
            ("degenerate", report.degenerate),
        ]),
    })
}

fn stage_terms(cfg: &PipelineConfig, a: &Artifacts, gw: &Gateway) -> Result<StageOutput, PipelineError> {
    let passages: Vec<Passage> = artifact::read_jsonl(&a.passages)?;
    let zipf = ZipfTable::load(a.wordfreq.as_ref().expect("checked by stage_inputs"))?;
    let cands = terminology::extract_candidates(&passages);
    let (dict, outcomes) = terminology::build_dictionary_audited(&cands, &cfg.terms, &zipf, &gw.tagger)?;
    let tally = |o: FilterOutcome| outcomes.values().filter(|x| **x == o).count();
    artifact::write_json(&a.dict, &dict)?;
    artifact::write_json(&a.term_audit, &outcomes)?;
    Ok(StageOutput {
        outputs: vec![a.dict.clone(), a.term_audit.clone()],
        counts: counts([
            ("candidates", cands.candidates.len()),
            ("terms", dict.len()),
            ("low_frequency", tally(FilterOutcome::LowFrequency)),
            ("too_common", tally(FilterOutcome::TooCommon)),
            ("wrong_pos", tally(FilterOutcome::WrongPos)),
        ]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolReport {
    pub pool_size: usize,
    pub clustered: usize,
    pub selected: usize,
    pub backfilled: usize,
    pub medoids: Vec<String>,
    pub total_deviation: f64,
    pub build_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub passages: usize,
    pub dense: usize,
    pub unparseable: Vec<String>,
    pub pools: BTreeMap<IntentLabel, PoolReport>,
}

fn stage_select(cfg: &PipelineConfig, a: &Artifacts, gw: &Gateway) -> Result<StageOutput, PipelineError> {
    let passages: Vec<Passage> = artifact::read_jsonl(&a.passages)?;
    let dict: TerminologyDictionary = artifact::read_json(&a.dict)?;
    let dense = selector::density_filter(&passages, &dict, cfg.select.min_distinct);
    let labels: Vec<Result<IntentLabel, SelectError>> =
        dense.par_iter().map(|(p, _)| selector::classify_intent(&p.text, &gw.chat)).collect();

    let mut unparseable = Vec::new();
    let mut classified = Vec::new();
    for ((p, terms), label) in dense.iter().zip(labels) {
        match label {
            Ok(l) => classified.push((p, terms, l)),
            Err(SelectError::UnparseableIntent { response, reason }) => {
                tracing::warn!(passage_id = %p.passage_id, %response, %reason, "intent unparseable; passage excluded");
                unparseable.push(p.passage_id.clone());
            }
            Err(e) => return Err(e.into()),
        }
    }
    let texts: Vec<String> = classified.iter().map(|(p, _, _)| p.text.clone()).collect();
    let vectors = gw.embed.embed_all(&texts)?;

    let mut pools: BTreeMap<IntentLabel, Vec<PoolMember>> = BTreeMap::new();
    for ((p, terms, l), v) in classified.into_iter().zip(vectors) {
        pools.entry(l).or_default().push(PoolMember {
            passage: p.clone(),
            distinct_terms: terms.clone(),
            embedding: v,
        });
    }
    let cluster = cfg.cluster_config();
    let mut candidates = Vec::new();
    let mut reports = BTreeMap::new();
    for (intent, pool) in &pools {
        let sel = selector::select_representatives(pool, *intent, &cluster)?;
        if sel.backfilled > 0 {
            tracing::warn!(intent = %intent, backfilled = sel.backfilled, "short clusters backfilled");
        }
        reports.insert(
            *intent,
            PoolReport {
                pool_size: sel.pool_size,
                clustered: sel.clustered,
                selected: sel.candidates.len(),
                backfilled: sel.backfilled,
                medoids: sel
                    .candidates
                    .iter()
                    .filter(|c| c.rank_to_medoid == 0)
                    .map(|c| c.passage.passage_id.clone())
                    .collect(),
                total_deviation: sel.clustering.total_deviation,
                build_deviation: sel.clustering.build_deviation,
            },
        );
        candidates.extend(sel.candidates);
    }
    let report = SelectionReport { passages: passages.len(), dense: dense.len(), unparseable, pools: reports };
    artifact::write_jsonl(&a.candidates, &candidates)?;
    artifact::write_json(&a.selection_report, &report)?;
    Ok(StageOutput {
        outputs: vec![a.candidates.clone(), a.selection_report.clone()],
        counts: counts([
            ("passages", report.passages),
            ("dense", report.dense),
            ("unparseable", report.unparseable.len()),
            ("intents", report.pools.len()),
            ("candidates", candidates.len()),
        ]),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct GenerationReport {
    pub candidates: usize,
    pub tcq: usize,
    pub taq: usize,
    pub taq_skipped: Vec<String>,
    pub tcq_skipped: Vec<String>,
    pub invalid: Vec<String>,
    pub failed: Vec<(String, String)>,
    pub undefinable_terms: usize,
    pub description_failures: usize,
    /// Repair rounds used per exported query, as histogram buckets.
    pub repair_rounds: BTreeMap<u32, usize>,
}

struct CandidateOutcome {
    passage_id: String,
    tcq: Result<QueryRecord, QueryGenError>,
    taq: Option<Result<QueryRecord, QueryGenError>>,
    undefinable: usize,
    description_failures: usize,
}

fn stage_generate(cfg: &PipelineConfig, a: &Artifacts, gw: &Gateway) -> Result<StageOutput, PipelineError> {
    let candidates: Vec<selector::CandidatePassage> = artifact::read_jsonl(&a.candidates)?;
    let passages: Vec<Passage> = artifact::read_jsonl(&a.passages)?;
    let mut by_doc: HashMap<&str, Vec<Passage>> = HashMap::new();
    for p in &passages {
        by_doc.entry(p.doc_id.as_str()).or_default().push(p.clone());
    }
    let p = &cfg.generate;
    let outcomes: Vec<Result<CandidateOutcome, QueryGenError>> = candidates
        .par_iter()
        .map(|c| {
            let doc = by_doc.get(c.passage.doc_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let described = querygen::describe_terms(c, doc, &gw.chat, p.window)?;
            let mut all_terms = described.defined.clone();
            all_terms.extend(described.undefinable.iter().cloned());
            let input = GenerationInput { passage: &c.passage, intent: c.intent, terms: &all_terms };
            let tcq = querygen::generate_tcq(&input, &gw.chat, p.max_repairs);
            let taq = (!described.taq_skipped).then(|| {
                let input = GenerationInput { passage: &c.passage, intent: c.intent, terms: &described.defined };
                querygen::generate_taq(&input, &gw.chat, p.max_repairs)
            });
            Ok(CandidateOutcome {
                passage_id: c.passage.passage_id.clone(),
                tcq,
                taq,
                undefinable: described.undefinable.len(),
                description_failures: described.failed.len(),
            })
        })
        .collect();

    let mut report = GenerationReport { candidates: candidates.len(), ..Default::default() };
    let mut queries = Vec::new();
    let mut rejected = Vec::new();
    let mut take =
        |qtype: QueryType, pid: &str, r: Result<QueryRecord, QueryGenError>, report: &mut GenerationReport| match r {
            Ok(q) => {
                *report.repair_rounds.entry(q.repair_rounds).or_default() += 1;
                match qtype {
                    QueryType::Tcq => report.tcq += 1,
                    QueryType::Taq => report.taq += 1,
                }
                queries.push(q);
            }
            Err(QueryGenError::ConstraintUnsatisfiable(rec)) => {
                tracing::warn!(query_id = %rec.query_id, "query still invalid after repairs; excluded");
                report.invalid.push(rec.query_id.clone());
                rejected.push(*rec);
            }
            Err(QueryGenError::Precondition(m)) if qtype == QueryType::Tcq => {
                tracing::warn!(passage_id = %pid, reason = %m, "TCQ skipped");
                report.tcq_skipped.push(pid.to_string());
            }
            Err(e) => {
                tracing::warn!(passage_id = %pid, qtype = qtype.code(), error = %e, "generation failed");
                report.failed.push((QueryRecord::make_id(qtype, pid), e.to_string()));
            }
        };
    for (c, o) in candidates.iter().zip(outcomes) {
        let pid = c.passage.passage_id.as_str();
        let o = match o {
            Ok(o) => o,
            Err(e) => {
                tracing::warn!(passage_id = %pid, error = %e, "term description failed");
                report.failed.push((pid.to_string(), e.to_string()));
                continue;
            }
        };
        report.undefinable_terms += o.undefinable;
        report.description_failures += o.description_failures;
        take(QueryType::Tcq, &o.passage_id, o.tcq, &mut report);
        match o.taq {
            Some(r) => take(QueryType::Taq, &o.passage_id, r, &mut report),
            None => report.taq_skipped.push(o.passage_id.clone()),
        }
    }
    artifact::write_jsonl(&a.queries, &queries)?;
    artifact::write_jsonl(&a.rejected, &rejected)?;
    artifact::write_json(&a.generation_report, &report)?;
    Ok(StageOutput {
        outputs: vec![a.queries.clone(), a.rejected.clone(), a.generation_report.clone()],
        counts: counts([
            ("candidates", report.candidates),
            ("tcq", report.tcq),
            ("taq", report.taq),
            ("taq_skipped", report.taq_skipped.len()),
            ("invalid", report.invalid.len()),
            ("failed", report.failed.len()),
        ]),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TranslationReport {
    pub per_language: BTreeMap<Language, usize>,
    pub flagged: usize,
    pub errors: Vec<(String, Language, String)>,
}

fn stage_translate(cfg: &PipelineConfig, a: &Artifacts, gw: &Gateway) -> Result<StageOutput, PipelineError> {
    let queries: Vec<QueryRecord> = artifact::read_jsonl(&a.queries)?;
    let dict: TerminologyDictionary = artifact::read_json(&a.dict)?;
    let t = &cfg.translate;
    let batch = xlingual::translate_all(&queries, &t.languages, &dict, &gw.chat, t.max_repairs);
    let mut report =
        TranslationReport { flagged: batch.flagged.len(), errors: batch.errors.clone(), ..Default::default() };
    for r in &batch.records {
        *report.per_language.entry(r.language).or_default() += 1;
    }
    for r in &batch.flagged {
        tracing::warn!(query_id = %r.query_id, language = %r.language, missing = ?r.missing_terms, "term preservation failed");
    }
    artifact::write_jsonl(&a.translations, &batch.records)?;
    artifact::write_jsonl(&a.flagged, &batch.flagged)?;
    artifact::write_json(&a.translation_report, &report)?;
    Ok(StageOutput {
        outputs: vec![a.translations.clone(), a.flagged.clone(), a.translation_report.clone()],
        counts: counts([
            ("queries", queries.len()),
            ("translations", batch.records.len()),
            ("flagged", batch.flagged.len()),
            ("errors", batch.errors.len()),
        ]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub judged: usize,
    pub errors: usize,
    pub means: BTreeMap<String, f64>,
    pub overall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub queries: usize,
    pub constraint_valid: usize,
    pub constraint_violations: Vec<String>,
    pub back_translation: xlingual::BackTranslationReport,
    pub term_preservation: xlingual::TermAuditReport,
    pub judge: Option<JudgeSummary>,
}

fn judge_sample(queries: &[QueryRecord], passages: &[Passage], n: usize, gw: &Gateway) -> JudgeSummary {
    let text: HashMap<&str, &str> = passages.iter().map(|p| (p.passage_id.as_str(), p.text.as_str())).collect();
    let scored: Vec<Option<QualityScore>> = queries
        .par_iter()
        .take(n)
        .map(|q| {
            let passage = text.get(q.passage_id.as_str())?;
            querygen::judge_quality(q, passage, &gw.chat)
                .map_err(|e| tracing::warn!(query_id = %q.query_id, error = %e, "judge failed"))
                .ok()
        })
        .collect();
    let ok: Vec<QualityScore> = scored.iter().flatten().cloned().collect();
    let mut means = BTreeMap::new();
    if !ok.is_empty() {
        for (i, field) in QualityScore::FIELDS.iter().enumerate() {
            let v = ok.iter().map(|s| s.values()[i]).sum::<f64>() / ok.len() as f64;
            means.insert(field.to_string(), v);
        }
    }
    JudgeSummary {
        judged: ok.len(),
        errors: scored.len() - ok.len(),
        overall: eval::mean(ok.iter().map(|s| s.mean)),
        means,
    }
}

fn stage_audit(cfg: &PipelineConfig, a: &Artifacts, gw: &Gateway) -> Result<StageOutput, PipelineError> {
    let queries: Vec<QueryRecord> = artifact::read_jsonl(&a.queries)?;
    let mut records: Vec<TranslationRecord> = artifact::read_jsonl(&a.translations)?;
    let original: BTreeMap<String, String> =
        queries.iter().map(|q| (q.query_id.clone(), q.final_query.clone())).collect();
    let violations: Vec<String> =
        queries.iter().filter(|q| !querygen::validate_constraints(q).is_empty()).map(|q| q.query_id.clone()).collect();
    let bt = xlingual::audit_back_translation(&mut records, &original, &gw.chat, &gw.embed, cfg.audit.bt_threshold);
    let terms = xlingual::audit_term_preservation(&records);
    let judge = (cfg.audit.judge_sample > 0).then(|| {
        let passages: Vec<Passage> = artifact::read_jsonl(&a.passages).unwrap_or_default();
        judge_sample(&queries, &passages, cfg.audit.judge_sample, gw)
    });
    let report = AuditReport {
        queries: queries.len(),
        constraint_valid: queries.len() - violations.len(),
        constraint_violations: violations,
        back_translation: bt,
        term_preservation: terms,
        judge,
    };
    artifact::write_jsonl(&a.audited, &records)?;
    artifact::write_json(&a.audit_report, &report)?;
    Ok(StageOutput {
        outputs: vec![a.audited.clone(), a.audit_report.clone()],
        counts: counts([
            ("queries", report.queries),
            ("constraint_valid", report.constraint_valid),
            ("tcq_translations_checked", report.term_preservation.checked),
            ("term_failures", report.term_preservation.failures.len()),
            ("bt_warnings", report.back_translation.warnings().len()),
        ]),
    })
}

fn stage_export(a: &Artifacts) -> Result<StageOutput, PipelineError> {
    let passages: Vec<Passage> = artifact::read_jsonl(&a.passages)?;
    let queries: Vec<QueryRecord> = artifact::read_jsonl(&a.queries)?;
    let translations: Vec<TranslationRecord> = artifact::read_jsonl(&a.translations)?;
    for lang in Language::ALL {
        let dir = a.beir.join(lang.code());
        if dir.is_dir() {
            fs::remove_dir_all(&dir).map_err(|source| ArtifactError::Io { path: dir.clone(), source })?;
        }
    }
    let corpus = beir::corpus_from_passages(&passages);
    let n_corpus = corpus.len();
    let per_lang = beir::export_beir(corpus, &queries, &translations, &a.beir)?;
    let mut c = counts([("corpus", n_corpus), ("splits", per_lang.len())]);
    for (lang, n) in &per_lang {
        c.insert(format!("queries_{}", lang.code()), *n as u64);
    }
    Ok(StageOutput { outputs: vec![a.beir.clone()], counts: c })
}

/// Language splits present under a BEIR root, or the root itself when it is
/// a single split.
pub fn discover_splits(root: &Path) -> Vec<(Language, PathBuf)> {
    if root.join(beir::CORPUS_FILE).exists() {
        return vec![(Language::En, root.to_path_buf())];
    }
    Language::ALL
        .into_iter()
        .map(|l| (l, root.join(l.code())))
        .filter(|(_, d)| d.join(beir::CORPUS_FILE).exists())
        .collect()
}

/// Evaluates one retriever over already-loaded splits.
pub fn evaluate_splits(
    retriever: Retriever,
    splits: &BTreeMap<Language, beir::BeirSplit>,
    params: &EvalParams,
    gw: Option<&Gateway>,
) -> Result<(eval::MetricReport, BTreeMap<Language, eval::Run>), PipelineError> {
    let mut scores = BTreeMap::new();
    let mut runs = BTreeMap::new();
    let mut dense_cache: Option<DenseIndex> = None;
    for (lang, split) in splits {
        let run = match retriever {
            Retriever::Bm25 => {
                let index = Bm25Index::from_split(split, params.k1, params.b)?;
                index.run(split.queries.iter().map(|q| (q.id.as_str(), q.text.as_str())), params.k)
            }
            Retriever::Dense => {
                let gw = gw.ok_or_else(|| PipelineError::Stage {
                    stage: Stage::Eval,
                    message: "dense retrieval needs an embedding gateway".into(),
                })?;
                // Splits share one corpus; embed it once when ids agree.
                let reuse = dense_cache.as_ref().is_some_and(|d| {
                    d.ids.len() == split.corpus.len() && d.ids.iter().zip(&split.corpus).all(|(a, b)| *a == b.id)
                });
                if !reuse {
                    dense_cache = Some(DenseIndex::embed_split(split, &gw.embed, &params.passage_prefix)?);
                }
                eval::dense_run(
                    dense_cache.as_ref().expect("set above"),
                    split,
                    &gw.embed,
                    &params.query_prefix,
                    params.k,
                )?
            }
        };
        let per_query = eval::evaluate_run(&run, &split.qrels_map(), params.k)?;
        scores.insert(*lang, SplitScores::from_split(split, per_query));
        runs.insert(*lang, run);
    }
    Ok((eval::build_report(retriever.name(), params.k, &scores), runs))
}

pub fn load_splits(root: &Path) -> Result<BTreeMap<Language, beir::BeirSplit>, PipelineError> {
    let found = discover_splits(root);
    if found.is_empty() {
        return Err(PipelineError::MissingArtifact { stage: Stage::Eval, path: root.join(beir::CORPUS_FILE) });
    }
    found.into_iter().map(|(l, d)| Ok((l, beir::load_beir(&d)?))).collect()
}

fn stage_eval(cfg: &PipelineConfig, a: &Artifacts, gw: &Gateway) -> Result<StageOutput, PipelineError> {
    let splits = load_splits(&a.beir)?;
    let mut outputs = Vec::new();
    let mut c = counts([("splits", splits.len())]);
    for &r in &cfg.eval.retrievers {
        let (report, runs) = evaluate_splits(r, &splits, &cfg.eval, Some(gw))?;
        let json = a.report_dir.join(format!("report_{}.json", r.name()));
        let txt = a.report_dir.join(format!("report_{}.txt", r.name()));
        artifact::write_json(&json, &report)?;
        artifact::write_atomic(&txt, report.to_text().as_bytes())?;
        outputs.push(json);
        outputs.push(txt);
        for (lang, run) in &runs {
            let path = a.report_dir.join("runs").join(format!("{}_{}.trec", r.name(), lang.code()));
            eval::write_trec_run(&path, run, r.name())?;
            outputs.push(path);
        }
        if let Some(o) = report.reference.overall {
            c.insert(format!("{}_overall_x1000", r.name()), (o * 1000.0).round() as u64);
        }
    }
    Ok(StageOutput { outputs, counts: c })
}
