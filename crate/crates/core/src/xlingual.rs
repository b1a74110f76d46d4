//! Cross-lingual extension: hybrid term-preserving translation for TCQ, full
//! translation for TAQ, and the back-translation and term-preservation audits.

use std::collections::{BTreeMap, HashSet};
use std::sync::LazyLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{cosine, ChatClient, EmbedClient, GatewayError, TEMPERATURE_DETERMINISTIC};
use crate::prompts;
use crate::querygen::{Language, QueryRecord, QueryType};
use crate::terminology::TerminologyDictionary;

pub const BT_THRESHOLD: f64 = 0.93;

#[derive(Debug, Error)]
pub enum XlingualError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{} ({}) lost terms {:?} after {} repairs", .0.query_id, .0.language, .0.missing_terms, .0.repair_rounds)]
    TermPreservationFailure(Box<TranslationRecord>),
    #[error("invalid translation request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub query_id: String,
    pub qtype: QueryType,
    pub language: Language,
    pub translated_query: String,
    #[serde(default)]
    pub kept_terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub back_translation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bt_cosine: Option<f64>,
    pub term_check_passed: bool,
    #[serde(default)]
    pub repair_rounds: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_terms: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct FewShot {
    input: String,
    output: String,
}

static FEW_SHOT: LazyLock<BTreeMap<String, FewShot>> =
    LazyLock::new(|| toml::from_str(include_str!("../data/few_shot.toml")).expect("bundled few-shot examples parse"));

pub fn few_shot_examples(lang: Language) -> String {
    match FEW_SHOT.get(lang.code()) {
        Some(fs) => format!("Input: \"{}\"\nOutput: \"{}\"", fs.input, fs.output),
        None => String::new(),
    }
}

/// Query spans matched by the dictionary, as written, first occurrence order.
pub fn kept_terms_for(query: &str, dict: &TerminologyDictionary) -> Vec<String> {
    let mut seen = HashSet::new();
    dict.find_terms_in(query)
        .into_iter()
        .map(|m| m.text(query).to_string())
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

pub fn missing_terms(translated: &str, kept: &[String]) -> Vec<String> {
    kept.iter().filter(|t| !translated.contains(t.as_str())).cloned().collect()
}

/// Drops labels, wrapping quotes and trailing commentary from a translation.
pub fn clean_translation(raw: &str) -> String {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let mut s = line;
    for label in ["Output:", "Translation:", "Translated Text:"] {
        if let Some(rest) = s.strip_prefix(label) {
            s = rest.trim();
        }
    }
    let quoted = |open: char, close: char| s.starts_with(open) && s.ends_with(close) && s.chars().count() >= 2;
    if quoted('"', '"') || quoted('\u{201C}', '\u{201D}') {
        let mut chars = s.chars();
        chars.next();
        chars.next_back();
        s = chars.as_str();
    }
    s.trim().to_string()
}

fn request(query: &str, lang: Language, kept: &[String]) -> crate::gateway::ChatRequest {
    let instruction = if kept.is_empty() {
        prompts::NO_TERMS.trim().to_string()
    } else {
        prompts::KEEP_TERMS.render(&[("term_list", &kept.join(", "))]).expect("keep-terms template renders")
    };
    prompts::TRANSLATION
        .request(&[
            ("target_language_name", lang.name()),
            ("few_shot_examples", &few_shot_examples(lang)),
            ("keep_terms_instruction", &instruction),
            ("input_query", query),
        ])
        .expect("translation template renders")
        .temperature(TEMPERATURE_DETERMINISTIC)
        .max_output_tokens(256)
}

pub fn translate_query(
    record: &QueryRecord,
    lang: Language,
    dict: &TerminologyDictionary,
    chat: &ChatClient,
    max_repairs: u32,
) -> Result<TranslationRecord, XlingualError> {
    if record.language != Language::En {
        return Err(XlingualError::InvalidRequest(format!("{} is not an English query", record.query_id)));
    }
    if lang == Language::En {
        return Err(XlingualError::InvalidRequest("target language must not be English".into()));
    }
    let kept = match record.qtype {
        QueryType::Tcq => kept_terms_for(&record.final_query, dict),
        QueryType::Taq => Vec::new(),
    };
    let base = request(&record.final_query, lang, &kept);
    let mut req = base.clone();
    let mut round = 0;
    loop {
        let translated = clean_translation(&chat.chat(&req)?);
        let missing = missing_terms(&translated, &kept);
        let out = TranslationRecord {
            query_id: record.query_id.clone(),
            qtype: record.qtype,
            language: lang,
            translated_query: translated,
            kept_terms: kept.clone(),
            back_translation: None,
            bt_cosine: None,
            term_check_passed: missing.is_empty(),
            repair_rounds: round,
            missing_terms: missing,
        };
        if out.term_check_passed {
            return Ok(out);
        }
        if round >= max_repairs {
            return Err(XlingualError::TermPreservationFailure(Box::new(out)));
        }
        round += 1;
        req = base.clone();
        req.user_prompt.push_str(&format!(
            "\n\nYour previous translation did not keep these terms verbatim: {}.\nPrevious translation:\n{}\nTranslate again and keep every listed term exactly as written.",
            out.missing_terms.join(", "),
            out.translated_query
        ));
    }
}

#[derive(Debug, Default)]
pub struct TranslationBatch {
    pub records: Vec<TranslationRecord>,
    /// Records that failed the preservation check; excluded from export.
    pub flagged: Vec<TranslationRecord>,
    pub errors: Vec<(String, Language, String)>,
}

/// Translates every query into every language, in parallel, in a stable order.
pub fn translate_all(
    queries: &[QueryRecord],
    langs: &[Language],
    dict: &TerminologyDictionary,
    chat: &ChatClient,
    max_repairs: u32,
) -> TranslationBatch {
    let jobs: Vec<(&QueryRecord, Language)> = queries.iter().flat_map(|q| langs.iter().map(move |&l| (q, l))).collect();
    let results: Vec<_> =
        jobs.par_iter().map(|(q, l)| (q, *l, translate_query(q, *l, dict, chat, max_repairs))).collect();
    let mut batch = TranslationBatch::default();
    for (q, l, r) in results {
        match r {
            Ok(rec) => batch.records.push(rec),
            Err(XlingualError::TermPreservationFailure(rec)) => batch.flagged.push(*rec),
            Err(e) => batch.errors.push((q.query_id.clone(), l, e.to_string())),
        }
    }
    batch
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageBt {
    pub records: usize,
    pub scored: usize,
    pub errors: usize,
    pub mean_cosine: Option<f64>,
    pub below_threshold: usize,
    pub fraction_below: f64,
    pub warn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackTranslationReport {
    pub threshold: f64,
    pub languages: BTreeMap<Language, LanguageBt>,
}

impl BackTranslationReport {
    pub fn warnings(&self) -> Vec<Language> {
        self.languages.iter().filter(|(_, r)| r.warn).map(|(l, _)| *l).collect()
    }
}

fn back_translate_one(rec: &TranslationRecord, chat: &ChatClient) -> Result<String, GatewayError> {
    let req = prompts::BACK_TRANSLATION
        .request(&[("source_language_name", rec.language.name()), ("input_query", &rec.translated_query)])
        .expect("back-translation template renders")
        .temperature(TEMPERATURE_DETERMINISTIC)
        .max_output_tokens(256);
    Ok(clean_translation(&chat.chat(&req)?))
}

/// Round-trips every record to English and scores it against `original`
/// (query_id to English text). Fills `back_translation` and `bt_cosine`.
pub fn audit_back_translation(
    records: &mut [TranslationRecord],
    original: &BTreeMap<String, String>,
    chat: &ChatClient,
    embed: &EmbedClient,
    threshold: f64,
) -> BackTranslationReport {
    let scored: Vec<Option<(String, f64)>> = records
        .par_iter()
        .map(|rec| {
            let src = original.get(&rec.query_id)?;
            let bt = back_translate_one(rec, chat)
                .map_err(|e| tracing::warn!(query_id = %rec.query_id, error = %e, "back-translation failed"))
                .ok()?;
            let vecs = embed
                .embed(&[src.clone(), bt.clone()])
                .map_err(|e| tracing::warn!(query_id = %rec.query_id, error = %e, "embedding failed"))
                .ok()?;
            Some((bt, cosine(&vecs[0].values, &vecs[1].values)))
        })
        .collect();

    let mut acc: BTreeMap<Language, (usize, Vec<f64>)> = BTreeMap::new();
    for (rec, s) in records.iter_mut().zip(scored) {
        let entry = acc.entry(rec.language).or_default();
        entry.0 += 1;
        if let Some((bt, cos)) = s {
            rec.back_translation = Some(bt);
            rec.bt_cosine = Some(cos);
            entry.1.push(cos);
        }
    }
    let languages = acc
        .into_iter()
        .map(|(lang, (n, cos))| {
            let mean = (!cos.is_empty()).then(|| cos.iter().sum::<f64>() / cos.len() as f64);
            let below = cos.iter().filter(|&&c| c < threshold).count();
            let r = LanguageBt {
                records: n,
                scored: cos.len(),
                errors: n - cos.len(),
                mean_cosine: mean,
                below_threshold: below,
                fraction_below: if cos.is_empty() { 0.0 } else { below as f64 / cos.len() as f64 },
                warn: mean.is_some_and(|m| m < threshold),
            };
            if r.warn {
                tracing::warn!(language = %lang, mean = ?mean, threshold, "back-translation similarity below threshold");
            }
            (lang, r)
        })
        .collect();
    BackTranslationReport { threshold, languages }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermFailure {
    pub query_id: String,
    pub language: Language,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TermAuditReport {
    pub checked: usize,
    pub skipped_taq: usize,
    pub failures: Vec<TermFailure>,
}

impl TermAuditReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Recomputes the verbatim check for every TCQ translation.
pub fn audit_term_preservation(records: &[TranslationRecord]) -> TermAuditReport {
    let mut report = TermAuditReport::default();
    for rec in records {
        if rec.qtype == QueryType::Taq {
            report.skipped_taq += 1;
            continue;
        }
        report.checked += 1;
        let missing = missing_terms(&rec.translated_query, &rec.kept_terms);
        if !missing.is_empty() {
            report.failures.push(TermFailure { query_id: rec.query_id.clone(), language: rec.language, missing });
        }
    }
    report
}
