//! Dual-type synthetic query generation: term descriptions, TCQ/TAQ
//! chain-of-density traces, the hard-constraint validator with its repair
//! loop, and quality judging.

use std::collections::HashSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::chunker::{count_tokens, Passage};
use crate::gateway::{ChatClient, GatewayError, TEMPERATURE_GENERATION};
use crate::prompts;
use crate::selector::{CandidatePassage, IntentLabel};
use crate::terminology::{MatchMode, TermMatcher};

pub const UNDEFINABLE: &str = "Difficult to define within context";
pub const MIN_QUERY_TOKENS: usize = 15;
pub const MAX_QUERY_TOKENS: usize = 25;
pub const MAX_ENTITIES: usize = 2;
pub const DEFAULT_MAX_REPAIRS: u32 = 3;
pub const DEFAULT_WINDOW: usize = 2;

#[derive(Debug, Error)]
pub enum QueryGenError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("constraints still violated after {} repair rounds", .0.repair_rounds)]
    ConstraintUnsatisfiable(Box<QueryRecord>),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("judge score {field}={value} outside [1, 5]")]
    InvalidScore { field: String, value: f64 },
    #[error("judge response unusable: {0}")]
    JudgeResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "TCQ")]
    Tcq,
    #[serde(rename = "TAQ")]
    Taq,
}

impl QueryType {
    pub fn code(self) -> &'static str {
        match self {
            QueryType::Tcq => "TCQ",
            QueryType::Taq => "TAQ",
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Ko,
    Id,
    Th,
    Fr,
    Zh,
    Ja,
}

impl Language {
    pub const ALL: [Language; 7] =
        [Language::En, Language::Ko, Language::Id, Language::Th, Language::Fr, Language::Zh, Language::Ja];

    pub const TARGETS: [Language; 6] =
        [Language::Ko, Language::Id, Language::Th, Language::Fr, Language::Zh, Language::Ja];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Ko => "ko",
            Language::Id => "id",
            Language::Th => "th",
            Language::Fr => "fr",
            Language::Zh => "zh",
            Language::Ja => "ja",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Language::En => "English",
            Language::Ko => "Korean",
            Language::Id => "Indonesian",
            Language::Th => "Thai",
            Language::Fr => "French",
            Language::Zh => "Chinese",
            Language::Ja => "Japanese",
        }
    }

    pub fn from_code(code: &str) -> Option<Language> {
        let c = code.trim().to_ascii_lowercase();
        [Language::En].into_iter().chain(Self::TARGETS).find(|l| l.code() == c)
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermDescription {
    pub term: String,
    pub description: String,
    pub context_span: (usize, usize),
    pub undefinable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CodStep {
    pub query: String,
    pub recognized_entities: Vec<String>,
    pub entities_added: Vec<String>,
    pub self_feedback: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptions_referenced: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Schema,
    Intention,
    ForbiddenForm,
    Sentence,
    Length,
    TermInclusion,
    TermBan,
    DescriptionsReferenced,
    Granularity,
    Reservation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based step, absent for trace-level problems.
    pub step: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(s) => write!(f, "step_{s} [{:?}] {}", self.rule, self.detail),
            None => write!(f, "[{:?}] {}", self.rule, self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub passage_id: String,
    pub doc_id: String,
    pub qtype: QueryType,
    pub intent: IntentLabel,
    pub language: Language,
    pub final_query: String,
    pub trace: Vec<CodStep>,
    pub identified_terms: Vec<TermDescription>,
    pub repair_rounds: u32,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

impl QueryRecord {
    pub fn make_id(qtype: QueryType, passage_id: &str) -> String {
        format!("{}:{passage_id}", qtype.code().to_lowercase())
    }

    pub fn term_surfaces(&self) -> Vec<String> {
        self.identified_terms.iter().map(|t| t.term.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub answerability: f64,
    pub no_external_knowledge: f64,
    pub intent_adherence: f64,
    pub format_compliance: f64,
    pub style_length: f64,
    pub mean: f64,
}

impl QualityScore {
    pub const FIELDS: [&'static str; 5] =
        ["answerability", "no_external_knowledge", "intent_adherence", "format_compliance", "style_length"];

    pub fn new(values: [f64; 5]) -> Result<Self, QueryGenError> {
        for (f, v) in Self::FIELDS.iter().zip(values) {
            if !(1.0..=5.0).contains(&v) {
                return Err(QueryGenError::InvalidScore { field: f.to_string(), value: v });
            }
        }
        Ok(Self {
            answerability: values[0],
            no_external_knowledge: values[1],
            intent_adherence: values[2],
            format_compliance: values[3],
            style_length: values[4],
            mean: values.iter().sum::<f64>() / 5.0,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [
            self.answerability,
            self.no_external_knowledge,
            self.intent_adherence,
            self.format_compliance,
            self.style_length,
        ]
    }
}

// ---------------------------------------------------------------------------
// Term descriptions

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescribedTerms {
    pub defined: Vec<TermDescription>,
    pub undefinable: Vec<TermDescription>,
    pub failed: Vec<(String, String)>,
    pub taq_skipped: bool,
}

/// Ordinal window `[c − w, c + w]` clipped to the document's passages.
pub fn context_window(ordinal: usize, w: usize, max_ordinal: usize) -> (usize, usize) {
    (ordinal.saturating_sub(w), (ordinal + w).min(max_ordinal))
}

fn clean_description(raw: &str) -> String {
    let mut s = raw.trim();
    for prefix in ["Short Description:", "Description:"] {
        if let Some(rest) = s.strip_prefix(prefix) {
            s = rest.trim();
        }
    }
    s.trim_matches(|c: char| c == '"' || c == '\u{201C}' || c == '\u{201D}').trim().to_string()
}

pub fn is_undefinable(description: &str) -> bool {
    let d = description.trim().trim_end_matches('.').trim_matches('"').trim();
    d.eq_ignore_ascii_case(UNDEFINABLE)
}

/// Describes every distinct term of a candidate from its surrounding context.
/// `doc_passages` are the passages of the candidate's document, any order.
pub fn describe_terms(
    candidate: &CandidatePassage,
    doc_passages: &[Passage],
    chat: &ChatClient,
    w: usize,
) -> Result<DescribedTerms, QueryGenError> {
    if candidate.distinct_terms.is_empty() {
        return Err(QueryGenError::Precondition("candidate has no terms".into()));
    }
    let mut doc: Vec<&Passage> = doc_passages.iter().filter(|p| p.doc_id == candidate.passage.doc_id).collect();
    doc.sort_by_key(|p| p.ordinal);
    let max_ordinal = doc.last().map_or(candidate.passage.ordinal, |p| p.ordinal);
    let span = context_window(candidate.passage.ordinal, w, max_ordinal);
    let context: Vec<&str> =
        doc.iter().filter(|p| p.ordinal >= span.0 && p.ordinal <= span.1).map(|p| p.text.as_str()).collect();
    let context_text = if context.is_empty() { candidate.passage.text.clone() } else { context.join("\n\n") };

    let mut out = DescribedTerms::default();
    for term in &candidate.distinct_terms {
        let req = prompts::TERM_DESCRIPTION
            .request(&[("term", term), ("context_text", &context_text)])
            .expect("description template renders")
            .max_output_tokens(128);
        match chat.chat(&req) {
            Ok(raw) => {
                let description = clean_description(&raw);
                let undefinable = is_undefinable(&description) || description.is_empty();
                let td = TermDescription {
                    term: term.clone(),
                    description: if undefinable { UNDEFINABLE.to_string() } else { description },
                    context_span: span,
                    undefinable,
                };
                if undefinable {
                    out.undefinable.push(td);
                } else {
                    out.defined.push(td);
                }
            }
            Err(e) => {
                tracing::warn!(term = %term, error = %e, "term description failed");
                out.failed.push((term.clone(), e.to_string()));
            }
        }
    }
    out.taq_skipped = out.defined.len() < 2;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Constraint validation

static ABBREVIATIONS: LazyLock<HashSet<String>> = LazyLock::new(|| {
    include_str!("../data/abbreviations.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
});

static YES_NO_OPENER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\W*(is|are|am|does|do|did|can|could|will|would|should|shall|has|have|had|was|were|may|might|must|isn't|aren't|doesn't|don't|didn't|can't|won't)\b").unwrap()
});
static LIST_REQUEST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(^\W*(list|enumerate|name)\b|\b(list (all|of|every)|enumerate)\b)").unwrap());
static QUOTE_REQUEST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)(\bquot(e|ed|ing|ation)\b|["\u{201C}\u{201D}])"#).unwrap());
static BARE_DEICTIC: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(this|these|those)\b\s*([.,;:?!)]|$|\b(is|are|was|were|be|been|has|have|had|does|do|did|can|could|will|would|should|may|might|must|of|in|on|at|to|for|with|by|from|as|and|or|but|that|which|when|while|if)\b)|\bthat\s*([.,;:?!)]|$)",
    )
    .unwrap()
});

fn strip_closers(token: &str) -> &str {
    token.trim_end_matches(['"', '\'', ')', ']', '\u{201D}', '\u{2019}'])
}

/// Number of sentence-terminal tokens and whether the text ends with one.
fn sentence_terminals(query: &str) -> (usize, bool) {
    let tokens: Vec<&str> = query.split_whitespace().collect();
    let mut count = 0;
    let mut ends = false;
    for (i, tok) in tokens.iter().enumerate() {
        let core = strip_closers(tok);
        let terminal_char = core.ends_with(['.', '?', '!']);
        let last = i + 1 == tokens.len();
        if !terminal_char {
            continue;
        }
        if last || !ABBREVIATIONS.contains(&core.to_lowercase()) {
            count += 1;
            if last {
                ends = true;
            }
        }
    }
    (count, ends)
}

pub fn forbidden_forms(query: &str) -> Vec<String> {
    let mut out = Vec::new();
    if YES_NO_OPENER.is_match(query) {
        out.push("yes/no question opener".to_string());
    }
    if LIST_REQUEST.is_match(query) {
        out.push("list request".to_string());
    }
    if QUOTE_REQUEST.is_match(query) {
        out.push("quote request or quotation marks".to_string());
    }
    if let Some(m) = BARE_DEICTIC.find(query) {
        out.push(format!("bare deictic {:?}", m.as_str().trim()));
    }
    out
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Whole-word, case-sensitive occurrence of `term` in `text`.
pub fn contains_verbatim(text: &str, term: &str) -> bool {
    if term.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = text[from..].find(term) {
        let s = from + pos;
        let e = s + term.len();
        let before_ok = text[..s].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[e..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = s + text[s..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Inputs the validator needs beyond the trace itself.
pub struct ValidationContext<'a> {
    pub qtype: QueryType,
    pub intent: IntentLabel,
    pub identified_terms: &'a [String],
}

/// Mechanically checkable hard constraints of one parsed trace.
pub fn validate_trace(intention: Option<&str>, trace: &[CodStep], ctx: &ValidationContext) -> Vec<Violation> {
    let mut v = Vec::new();
    let push = |v: &mut Vec<Violation>, step: Option<usize>, rule: Rule, detail: String| {
        v.push(Violation { step, rule, detail })
    };
    match intention {
        Some(i) if i.trim().eq_ignore_ascii_case(ctx.intent.display()) => {}
        Some(i) => {
            push(&mut v, None, Rule::Intention, format!("intention {i:?} differs from {:?}", ctx.intent.display()))
        }
        None => push(&mut v, None, Rule::Schema, "missing intention".into()),
    }
    if trace.len() != 3 {
        push(&mut v, None, Rule::Schema, format!("expected 3 steps, got {}", trace.len()));
        return v;
    }
    let matcher = TermMatcher::from_surfaces(ctx.identified_terms);
    let verbatim =
        |text: &str| -> Vec<&String> { ctx.identified_terms.iter().filter(|t| contains_verbatim(text, t)).collect() };
    let mut prev_terms: Vec<&String> = Vec::new();
    for (i, step) in trace.iter().enumerate() {
        let s = Some(i + 1);
        let q = step.query.trim();
        if q.is_empty() {
            push(&mut v, s, Rule::Schema, "empty query".into());
            continue;
        }
        if step.self_feedback.trim().is_empty() {
            push(&mut v, s, Rule::Schema, "empty self_feedback".into());
        }
        for f in forbidden_forms(q) {
            push(&mut v, s, Rule::ForbiddenForm, f);
        }
        let (terminals, ends) = sentence_terminals(q);
        if terminals != 1 || !ends {
            push(
                &mut v,
                s,
                Rule::Sentence,
                format!("{terminals} sentence terminators; must be exactly one, at the end"),
            );
        }
        let n = count_tokens(q);
        if !(MIN_QUERY_TOKENS..=MAX_QUERY_TOKENS).contains(&n) {
            push(&mut v, s, Rule::Length, format!("{n} tokens, allowed {MIN_QUERY_TOKENS}-{MAX_QUERY_TOKENS}"));
        }
        if step.recognized_entities.len() > MAX_ENTITIES {
            push(
                &mut v,
                s,
                Rule::Granularity,
                format!("{} recognized_entities, max {MAX_ENTITIES}", step.recognized_entities.len()),
            );
        }
        for e in step.recognized_entities.iter().chain(&step.entities_added) {
            let wc = word_count(e);
            if !(1..=3).contains(&wc) {
                push(&mut v, s, Rule::Granularity, format!("entity {e:?} has {wc} words"));
            }
        }
        let recognized: HashSet<String> = step.recognized_entities.iter().map(|e| e.trim().to_lowercase()).collect();
        for e in &step.entities_added {
            if !recognized.contains(&e.trim().to_lowercase()) {
                push(&mut v, s, Rule::Schema, format!("entities_added item {e:?} not in recognized_entities"));
            }
        }

        if i == 0 {
            let mode = if ctx.qtype == QueryType::Taq { MatchMode::Loose } else { MatchMode::Standard };
            for field in std::iter::once(q)
                .chain(step.recognized_entities.iter().map(String::as_str))
                .chain(step.entities_added.iter().map(String::as_str))
            {
                if let Some(m) = matcher.find(field, mode).first() {
                    push(&mut v, s, Rule::Reservation, format!("identified term {:?} used in step 1", m.surface));
                }
            }
        }

        match ctx.qtype {
            QueryType::Tcq if i > 0 => {
                let found = verbatim(q);
                if found.is_empty() {
                    push(&mut v, s, Rule::TermInclusion, "no identified term verbatim".into());
                } else if found.iter().all(|t| prev_terms.contains(t)) {
                    push(&mut v, s, Rule::TermInclusion, "adds no identified term beyond the previous step".into());
                }
                prev_terms = found;
            }
            QueryType::Taq if i > 0 => {
                if let Some(m) = matcher.find(q, MatchMode::Loose).first() {
                    push(&mut v, s, Rule::TermBan, format!("banned term {:?} appears as {:?}", m.surface, m.text(q)));
                }
                match &step.descriptions_referenced {
                    Some(d) if d.iter().any(|x| !x.trim().is_empty()) => {}
                    _ => {
                        push(&mut v, s, Rule::DescriptionsReferenced, "descriptions_referenced missing or empty".into())
                    }
                }
            }
            _ => {}
        }
    }
    v
}

/// Validates a whole record (used for audits and before export).
pub fn validate_constraints(record: &QueryRecord) -> Vec<Violation> {
    let terms = record.term_surfaces();
    let ctx = ValidationContext { qtype: record.qtype, intent: record.intent, identified_terms: &terms };
    let mut v = validate_trace(Some(record.intent.display()), &record.trace, &ctx);
    if record.trace.len() == 3 && record.final_query != record.trace[2].query {
        v.push(Violation { step: None, rule: Rule::Schema, detail: "final_query differs from step_3 query".into() });
    }
    v
}

fn string_list(v: Option<&Value>) -> Result<Vec<String>, String> {
    match v {
        Some(Value::Array(items)) => items
            .iter()
            .map(|x| x.as_str().map(str::to_string).ok_or_else(|| "non-string list item".to_string()))
            .collect(),
        Some(_) => Err("expected an array".into()),
        None => Err("missing".into()),
    }
}

/// Parses a model trace; schema problems are reported as violations.
pub fn parse_trace(raw: &str, qtype: QueryType) -> (Option<String>, Vec<CodStep>, Vec<Violation>) {
    let mut violations = Vec::new();
    let value: Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(e) => {
            violations.push(Violation { step: None, rule: Rule::Schema, detail: format!("invalid JSON: {e}") });
            return (None, Vec::new(), violations);
        }
    };
    let intention = value.get("intention").and_then(Value::as_str).map(str::to_string);
    let mut steps = Vec::new();
    for i in 1..=3 {
        let key = format!("step_{i}");
        let Some(obj) = value.get(&key).and_then(Value::as_object) else {
            violations.push(Violation { step: Some(i), rule: Rule::Schema, detail: format!("missing {key}") });
            steps.push(CodStep::default());
            continue;
        };
        let mut step = CodStep::default();
        match obj.get("query").and_then(Value::as_str) {
            Some(q) => step.query = q.to_string(),
            None => violations.push(Violation { step: Some(i), rule: Rule::Schema, detail: "missing query".into() }),
        }
        match obj.get("self_feedback").and_then(Value::as_str) {
            Some(f) => step.self_feedback = f.to_string(),
            None => {
                violations.push(Violation { step: Some(i), rule: Rule::Schema, detail: "missing self_feedback".into() })
            }
        }
        for (field, slot) in
            [("recognized_entities", &mut step.recognized_entities), ("entities_added", &mut step.entities_added)]
        {
            match string_list(obj.get(field)) {
                Ok(list) => *slot = list,
                Err(e) => {
                    violations.push(Violation { step: Some(i), rule: Rule::Schema, detail: format!("{field}: {e}") })
                }
            }
        }
        if qtype == QueryType::Taq && i > 1 {
            step.descriptions_referenced = string_list(obj.get("descriptions_referenced")).ok();
        }
        steps.push(step);
    }
    (intention, steps, violations)
}

// ---------------------------------------------------------------------------
// Generation

pub struct GenerationInput<'a> {
    pub passage: &'a Passage,
    pub intent: IntentLabel,
    pub terms: &'a [TermDescription],
}

fn input_json(input: &GenerationInput) -> String {
    let terms: Vec<Value> = input
        .terms
        .iter()
        .map(|t| json!({"term": t.term, "description": if t.undefinable { "" } else { t.description.as_str() }}))
        .collect();
    serde_json::to_string_pretty(&json!({
        "passage_text": input.passage.text,
        "identified_terms": terms,
        "sampled_intention": input.intent.display(),
    }))
    .expect("input serializes")
}

fn repair_suffix(violations: &[Violation], previous: &str) -> String {
    let mut s = String::from("\n\n# Repair\nYour previous output violated these hard constraints:\n");
    for v in violations {
        s.push_str(&format!("- {v}\n"));
    }
    s.push_str("Previous output:\n");
    s.push_str(previous.trim());
    s.push_str("\nReturn one corrected JSON object only.");
    s
}

fn generate(
    input: &GenerationInput,
    qtype: QueryType,
    chat: &ChatClient,
    max_repairs: u32,
) -> Result<QueryRecord, QueryGenError> {
    let template = match qtype {
        QueryType::Tcq => prompts::TCQG,
        QueryType::Taq => prompts::TAQG,
    };
    let base = template
        .request(&[("input_json", &input_json(input))])
        .expect("generation template renders")
        .temperature(TEMPERATURE_GENERATION)
        .max_output_tokens(2048)
        .json();
    let surfaces: Vec<String> = input.terms.iter().map(|t| t.term.clone()).collect();
    let ctx = ValidationContext { qtype, intent: input.intent, identified_terms: &surfaces };

    let mut req = base.clone();
    let mut round = 0;
    loop {
        let raw = chat.chat(&req)?;
        let (intention, trace, mut violations) = parse_trace(&raw, qtype);
        if violations.is_empty() {
            violations = validate_trace(intention.as_deref(), &trace, &ctx);
        }
        let final_query = trace.get(2).map(|s| s.query.trim().to_string()).unwrap_or_default();
        let record = QueryRecord {
            query_id: QueryRecord::make_id(qtype, &input.passage.passage_id),
            passage_id: input.passage.passage_id.clone(),
            doc_id: input.passage.doc_id.clone(),
            qtype,
            intent: input.intent,
            language: Language::En,
            final_query,
            trace: trace
                .into_iter()
                .map(|mut s| {
                    s.query = s.query.trim().to_string();
                    s
                })
                .collect(),
            identified_terms: input.terms.to_vec(),
            repair_rounds: round,
            valid: violations.is_empty(),
            violations: violations.clone(),
        };
        if record.valid {
            return Ok(record);
        }
        if round >= max_repairs {
            return Err(QueryGenError::ConstraintUnsatisfiable(Box::new(record)));
        }
        round += 1;
        tracing::debug!(query_id = %record.query_id, round, violations = violations.len(), "repairing query");
        req = base.clone();
        req.user_prompt.push_str(&repair_suffix(&violations, &raw));
    }
}

/// Terminology concordant query; needs at least two identified terms.
pub fn generate_tcq(
    input: &GenerationInput,
    chat: &ChatClient,
    max_repairs: u32,
) -> Result<QueryRecord, QueryGenError> {
    if input.terms.len() < 2 {
        return Err(QueryGenError::Precondition(format!("TCQ needs >= 2 terms, got {}", input.terms.len())));
    }
    generate(input, QueryType::Tcq, chat, max_repairs)
}

/// Terminology agnostic query; needs at least two defined terms.
pub fn generate_taq(
    input: &GenerationInput,
    chat: &ChatClient,
    max_repairs: u32,
) -> Result<QueryRecord, QueryGenError> {
    let defined = input.terms.iter().filter(|t| !t.undefinable).count();
    if defined < 2 || defined != input.terms.len() {
        return Err(QueryGenError::Precondition(format!("TAQ needs >= 2 defined terms only, got {defined}")));
    }
    generate(input, QueryType::Taq, chat, max_repairs)
}

/// Scores a query with the judge prompt; audit only.
pub fn judge_quality(
    record: &QueryRecord,
    passage_text: &str,
    chat: &ChatClient,
) -> Result<QualityScore, QueryGenError> {
    let req = prompts::JUDGE
        .request(&[("intent", record.intent.display()), ("passage_text", passage_text), ("query", &record.final_query)])
        .expect("judge template renders")
        .max_output_tokens(128)
        .json();
    let raw = chat.chat(&req)?;
    let value: Value = serde_json::from_str(&raw).map_err(|e| QueryGenError::JudgeResponse(e.to_string()))?;
    let mut scores = [0.0; 5];
    for (slot, field) in scores.iter_mut().zip(QualityScore::FIELDS) {
        *slot = value
            .get(field)
            .and_then(Value::as_f64)
            .ok_or_else(|| QueryGenError::JudgeResponse(format!("missing numeric {field}")))?;
    }
    QualityScore::new(scores)
}
