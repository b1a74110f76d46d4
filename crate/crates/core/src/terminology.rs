//! Domain terminology: regex candidate extraction, the three-stage filter
//! (document frequency, POS, Zipf specificity), and dictionary lookup.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::BufRead;
use std::path::Path;
use std::sync::{LazyLock, OnceLock};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::{is_punct, Passage};
use crate::gateway::tagger::is_greek;
use crate::gateway::{GatewayError, PosTag, PosTaggerClient};

#[derive(Debug, Error)]
pub enum TermError {
    #[error("frequency table {path} unavailable: {reason}")]
    FrequencyTableMissing { path: String, reason: String },
    #[error("frequency table line {line}: {message}")]
    FrequencyTableParse { line: usize, message: String },
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("tagger failed: {0}")]
    Tagger(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternClass {
    AllCaps,
    Hyphenated,
    Symbolic,
}

/// Which rule of the symbolic class fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolTrigger {
    GreekLetter,
    GreekName,
    Chemical,
    DigitUnit,
    DigitHyphenWord,
}

pub const GREEK_NAMES: [&str; 24] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu", "nu", "xi",
    "omicron", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega",
];

static ALL_CAPS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Z0-9]{2,}$").unwrap());
static HYPHENATED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z]+(?:-[A-Za-z]+)+$").unwrap());
static WORDLIKE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[\p{L}\p{N}]+(?:-[\p{L}\p{N}]+)*$").unwrap());
static CHEMICAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:[A-Z][a-z]?\d*)+$").unwrap());
static DIGIT_UNIT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^\d+(?:\.\d+)?(?:km|m|cm|mm|um|nm|kg|g|mg|t|N|kN|MN|Pa|kPa|MPa|GPa|psi|bar|Hz|kHz|MHz|GHz|K|s|ms|us|ns|W|kW|MW|GW|V|kV|mV|A|mA|J|kJ|MJ|deg|lbf|lb|ft|in)$",
    )
    .unwrap()
});
static DIGIT_HYPHEN_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d+(?:\.\d+)?-[A-Za-z]+$").unwrap());

fn symbolic_trigger(token: &str) -> Option<SymbolTrigger> {
    if !WORDLIKE.is_match(token) {
        return None;
    }
    if token.chars().any(is_greek) {
        return Some(SymbolTrigger::GreekLetter);
    }
    if token.contains('-') && token.split('-').any(|c| GREEK_NAMES.contains(&c.to_ascii_lowercase().as_str())) {
        return Some(SymbolTrigger::GreekName);
    }
    if CHEMICAL.is_match(token)
        && token.chars().any(|c| c.is_ascii_digit())
        && token.chars().filter(|c| c.is_ascii_alphabetic()).count() >= 2
    {
        return Some(SymbolTrigger::Chemical);
    }
    if DIGIT_UNIT.is_match(token) {
        return Some(SymbolTrigger::DigitUnit);
    }
    if DIGIT_HYPHEN_WORD.is_match(token) {
        return Some(SymbolTrigger::DigitHyphenWord);
    }
    None
}

fn is_all_caps(token: &str) -> bool {
    ALL_CAPS.is_match(token) && token.chars().filter(|c| c.is_ascii_uppercase()).count() >= 2
}

fn is_hyphenated(token: &str) -> bool {
    HYPHENATED.is_match(token) && token.split('-').any(|c| c.chars().next().is_some_and(|ch| ch.is_ascii_uppercase()))
}

/// Assigns a pattern class; precedence is symbolic, then hyphenated, then
/// all-caps.
pub fn classify(token: &str) -> Option<(PatternClass, Option<SymbolTrigger>)> {
    if let Some(t) = symbolic_trigger(token) {
        return Some((PatternClass::Symbolic, Some(t)));
    }
    if is_hyphenated(token) {
        return Some((PatternClass::Hyphenated, None));
    }
    if is_all_caps(token) {
        return Some((PatternClass::AllCaps, None));
    }
    None
}

/// True when `surface` satisfies the regex of `class`.
pub fn matches_class(surface: &str, class: PatternClass) -> bool {
    match class {
        PatternClass::AllCaps => is_all_caps(surface),
        PatternClass::Hyphenated => is_hyphenated(surface),
        PatternClass::Symbolic => symbolic_trigger(surface).is_some(),
    }
}

/// Candidate tokens of a text: whitespace and slash delimited, edge punctuation
/// and possessive suffixes removed. Hyphenated tokens also contribute their
/// all-caps components.
pub fn candidate_tokens(text: &str) -> Vec<(String, PatternClass, Option<SymbolTrigger>)> {
    let mut out = Vec::new();
    for raw in text.split(|c: char| c.is_whitespace() || c == '/') {
        let mut tok = raw.trim_matches(is_punct);
        for suffix in ["'s", "\u{2019}s"] {
            if let Some(stripped) = tok.strip_suffix(suffix) {
                tok = stripped.trim_end_matches(is_punct);
            }
        }
        if tok.is_empty() {
            continue;
        }
        if let Some((class, trig)) = classify(tok) {
            out.push((tok.to_string(), class, trig));
        }
        if tok.contains('-') {
            for part in tok.split('-') {
                if is_all_caps(part) && symbolic_trigger(part).is_none() {
                    out.push((part.to_string(), PatternClass::AllCaps, None));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub pattern_class: PatternClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol_trigger: Option<SymbolTrigger>,
    pub doc_frequency: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: BTreeMap<String, Candidate>,
    pub passages_scanned: usize,
    pub corpus_fingerprint: String,
}

/// Scans passages for candidate terms. `doc_frequency` counts distinct
/// passage ids.
pub fn extract_candidates(passages: &[Passage]) -> CandidateSet {
    let per_passage: Vec<Vec<(String, PatternClass, Option<SymbolTrigger>)>> = passages
        .par_iter()
        .map(|p| {
            let mut seen = HashSet::new();
            candidate_tokens(&p.text).into_iter().filter(|(s, _, _)| seen.insert(s.clone())).collect()
        })
        .collect();

    let mut sets: BTreeMap<String, (PatternClass, Option<SymbolTrigger>, HashSet<&str>)> = BTreeMap::new();
    let mut hasher = Sha256::new();
    for (p, found) in passages.iter().zip(per_passage) {
        hasher.update(p.passage_id.as_bytes());
        hasher.update([0]);
        hasher.update(p.text.as_bytes());
        hasher.update([0]);
        for (surface, class, trig) in found {
            sets.entry(surface).or_insert_with(|| (class, trig, HashSet::new())).2.insert(p.passage_id.as_str());
        }
    }
    CandidateSet {
        candidates: sets
            .into_iter()
            .map(|(s, (class, trig, ids))| {
                (s, Candidate { pattern_class: class, symbol_trigger: trig, doc_frequency: ids.len() })
            })
            .collect(),
        passages_scanned: passages.len(),
        corpus_fingerprint: hex::encode(hasher.finalize()),
    }
}

/// General-language word frequencies on the Zipf scale (log10 occurrences
/// per billion words).
#[derive(Debug, Clone, Default)]
pub struct ZipfTable {
    scores: HashMap<String, f64>,
}

impl ZipfTable {
    pub fn load(path: &Path) -> Result<Self, TermError> {
        let file = fs::File::open(path).map_err(|e| TermError::FrequencyTableMissing {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    /// Parses `word<TAB>zipf` lines. Blank lines and `#` comments are
    /// ignored; a non-numeric first row is treated as a header.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, TermError> {
        let mut scores = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| TermError::FrequencyTableParse { line: i + 1, message: e.to_string() })?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, score) = line.split_once('\t').ok_or_else(|| TermError::FrequencyTableParse {
                line: i + 1,
                message: "expected word<TAB>zipf".into(),
            })?;
            match score.trim().parse::<f64>() {
                Ok(z) if z.is_finite() => {
                    scores.insert(word.trim().to_lowercase(), z);
                }
                _ if i == 0 => continue,
                _ => {
                    return Err(TermError::FrequencyTableParse {
                        line: i + 1,
                        message: format!("bad zipf value {score:?}"),
                    })
                }
            }
        }
        Ok(Self { scores })
    }

    pub fn from_pairs<I: IntoIterator<Item = (S, f64)>, S: AsRef<str>>(pairs: I) -> Self {
        Self { scores: pairs.into_iter().map(|(w, z)| (w.as_ref().to_lowercase(), z)).collect() }
    }

    pub fn lookup(&self, surface: &str) -> Option<f64> {
        self.scores.get(&surface.to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermFilterConfig {
    pub min_doc_frequency: usize,
    pub zipf_threshold: f64,
    pub allowed_pos: BTreeSet<PosTag>,
}

impl Default for TermFilterConfig {
    fn default() -> Self {
        Self {
            min_doc_frequency: 10,
            zipf_threshold: 3.5,
            allowed_pos: [PosTag::Noun, PosTag::Propn].into_iter().collect(),
        }
    }
}

impl TermFilterConfig {
    pub fn validate(&self) -> Result<(), TermError> {
        if self.min_doc_frequency == 0 {
            return Err(TermError::InvalidConfig("min_doc_frequency must be >= 1".into()));
        }
        if !(self.zipf_threshold > 0.0) {
            return Err(TermError::InvalidConfig("zipf_threshold must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEntry {
    pub surface: String,
    pub pattern_class: PatternClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol_trigger: Option<SymbolTrigger>,
    pub doc_frequency: usize,
    pub pos: PosTag,
    pub zipf: Option<f64>,
}

/// Splits a term into the components fed to the tagger and returns the index
/// of the head (last component containing a letter).
pub fn term_components(surface: &str) -> (Vec<String>, usize) {
    let parts: Vec<String> =
        surface.split(|c: char| c == '-' || c.is_whitespace()).filter(|s| !s.is_empty()).map(str::to_string).collect();
    let head = parts.iter().rposition(|p| p.chars().any(char::is_alphabetic)).unwrap_or(parts.len() - 1);
    (parts, head)
}

/// Why a candidate was dropped; used for audit output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOutcome {
    Kept,
    LowFrequency,
    TooCommon,
    WrongPos,
}

pub fn build_dictionary(
    candidates: &CandidateSet,
    cfg: &TermFilterConfig,
    freq: &ZipfTable,
    tagger: &PosTaggerClient,
) -> Result<TerminologyDictionary, TermError> {
    let (dict, _) = build_dictionary_audited(candidates, cfg, freq, tagger)?;
    Ok(dict)
}

/// As [`build_dictionary`], also returning the outcome for every candidate.
pub fn build_dictionary_audited(
    candidates: &CandidateSet,
    cfg: &TermFilterConfig,
    freq: &ZipfTable,
    tagger: &PosTaggerClient,
) -> Result<(TerminologyDictionary, BTreeMap<String, FilterOutcome>), TermError> {
    cfg.validate()?;
    let mut entries = Vec::new();
    let mut outcomes = BTreeMap::new();
    for (surface, cand) in &candidates.candidates {
        if cand.doc_frequency < cfg.min_doc_frequency {
            outcomes.insert(surface.clone(), FilterOutcome::LowFrequency);
            continue;
        }
        let zipf = freq.lookup(surface);
        if zipf.is_some_and(|z| z > cfg.zipf_threshold) {
            outcomes.insert(surface.clone(), FilterOutcome::TooCommon);
            continue;
        }
        let (parts, head) = term_components(surface);
        let pos = tagger.pos_tag(&parts)?[head];
        if !cfg.allowed_pos.contains(&pos) {
            outcomes.insert(surface.clone(), FilterOutcome::WrongPos);
            continue;
        }
        outcomes.insert(surface.clone(), FilterOutcome::Kept);
        entries.push(TermEntry {
            surface: surface.clone(),
            pattern_class: cand.pattern_class,
            symbol_trigger: cand.symbol_trigger,
            doc_frequency: cand.doc_frequency,
            pos,
            zipf,
        });
    }
    Ok((TerminologyDictionary::new(entries, cfg.clone(), candidates.corpus_fingerprint.clone()), outcomes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminologyDictionary {
    entries: Vec<TermEntry>,
    pub filter_config: TermFilterConfig,
    pub corpus_fingerprint: String,
    #[serde(skip)]
    matcher: OnceLock<TermMatcher>,
}

impl PartialEq for TerminologyDictionary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
            && self.filter_config == other.filter_config
            && self.corpus_fingerprint == other.corpus_fingerprint
    }
}

impl TerminologyDictionary {
    /// Entries are sorted by surface; later duplicates are dropped.
    pub fn new(mut entries: Vec<TermEntry>, filter_config: TermFilterConfig, corpus_fingerprint: String) -> Self {
        entries.sort_by(|a, b| a.surface.cmp(&b.surface));
        entries.dedup_by(|a, b| a.surface == b.surface);
        Self { entries, filter_config, corpus_fingerprint, matcher: OnceLock::new() }
    }

    /// Dictionary built straight from surfaces, classes inferred; for tests and
    /// ad-hoc term lists.
    pub fn from_surfaces<I: IntoIterator<Item = S>, S: AsRef<str>>(surfaces: I) -> Self {
        let entries = surfaces
            .into_iter()
            .map(|s| {
                let s = s.as_ref();
                let (class, trig) = classify(s).unwrap_or((PatternClass::Symbolic, None));
                TermEntry {
                    surface: s.to_string(),
                    pattern_class: class,
                    symbol_trigger: trig,
                    doc_frequency: 1,
                    pos: PosTag::Noun,
                    zipf: None,
                }
            })
            .collect();
        Self::new(entries, TermFilterConfig::default(), String::new())
    }

    pub fn entries(&self) -> &[TermEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<&TermEntry> {
        self.entries.binary_search_by(|e| e.surface.as_str().cmp(surface)).ok().map(|i| &self.entries[i])
    }

    pub fn matcher(&self) -> &TermMatcher {
        self.matcher.get_or_init(|| TermMatcher::new(&self.entries))
    }

    pub fn find_terms_in(&self, text: &str) -> Vec<TermMatch> {
        self.matcher().find(text, MatchMode::Standard)
    }

    /// Distinct surfaces found in `text`, in first-occurrence order.
    pub fn distinct_terms_in(&self, text: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        self.find_terms_in(text).into_iter().filter(|m| seen.insert(m.surface.clone())).map(|m| m.surface).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMatch {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

impl TermMatch {
    pub fn text<'a>(&self, source: &'a str) -> &'a str {
        &source[self.start..self.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// All-caps entries match case-sensitively, others case-insensitively.
    Standard,
    /// Every entry matches case-insensitively.
    Loose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Joiner {
    Hyphen,
    Space,
    Break,
}

#[derive(Debug, Clone)]
struct Piece {
    start: usize,
    end: usize,
    /// Joiner between this piece and the next one.
    next: Joiner,
}

fn pieces(text: &str) -> Vec<Piece> {
    let mut out: Vec<Piece> = Vec::new();
    let mut cur: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if cur.is_none() {
                cur = Some(i);
            }
        } else if let Some(s) = cur.take() {
            out.push(Piece { start: s, end: i, next: Joiner::Break });
        }
    }
    if let Some(s) = cur {
        out.push(Piece { start: s, end: text.len(), next: Joiner::Break });
    }
    for i in 0..out.len().saturating_sub(1) {
        let gap = &text[out[i].end..out[i + 1].start];
        out[i].next = if gap == "-" {
            Joiner::Hyphen
        } else if !gap.is_empty() && gap.chars().all(char::is_whitespace) {
            Joiner::Space
        } else {
            Joiner::Break
        };
    }
    out
}

#[derive(Debug, Clone)]
struct Pattern {
    surface: String,
    components: Vec<String>,
    lower: Vec<String>,
    case_sensitive: bool,
}

/// Lookup structure over dictionary entries.
#[derive(Debug, Clone)]
pub struct TermMatcher {
    patterns: Vec<Pattern>,
    by_first: HashMap<String, Vec<usize>>,
}

fn eq_component(piece: &str, comp: &str, comp_lower: &str, case_sensitive: bool, last: bool) -> bool {
    let same = |a: &str| if case_sensitive { a == comp } else { a.to_lowercase() == comp_lower };
    if same(piece) {
        return true;
    }
    if last {
        for suffix in ["s", "es", "S", "ES"] {
            if case_sensitive && suffix.chars().all(char::is_uppercase) {
                continue;
            }
            if let Some(stem) = piece.strip_suffix(suffix) {
                if !stem.is_empty() && same(stem) {
                    return true;
                }
            }
        }
    }
    false
}

impl TermMatcher {
    pub fn new(entries: &[TermEntry]) -> Self {
        let mut patterns = Vec::new();
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for e in entries {
            let components: Vec<String> =
                pieces(&e.surface).iter().map(|p| e.surface[p.start..p.end].to_string()).collect();
            if components.is_empty() {
                continue;
            }
            let lower: Vec<String> = components.iter().map(|c| c.to_lowercase()).collect();
            by_first.entry(lower[0].clone()).or_default().push(patterns.len());
            patterns.push(Pattern {
                surface: e.surface.clone(),
                components,
                lower,
                case_sensitive: e.pattern_class == PatternClass::AllCaps,
            });
        }
        Self { patterns, by_first }
    }

    pub fn from_surfaces<I: IntoIterator<Item = S>, S: AsRef<str>>(surfaces: I) -> Self {
        TerminologyDictionary::from_surfaces(surfaces).matcher().clone()
    }

    /// Left-to-right, longest-match-first, non-overlapping term occurrences.
    pub fn find(&self, text: &str, mode: MatchMode) -> Vec<TermMatch> {
        let ps = pieces(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < ps.len() {
            let piece = &text[ps[i].start..ps[i].end];
            let lower = piece.to_lowercase();
            let mut keys = vec![lower.clone()];
            for suffix in ["s", "es"] {
                if let Some(stem) = lower.strip_suffix(suffix) {
                    if !stem.is_empty() {
                        keys.push(stem.to_string());
                    }
                }
            }
            let mut best: Option<(usize, usize)> = None;
            for key in keys {
                let Some(ids) = self.by_first.get(&key) else { continue };
                for &id in ids {
                    let pat = &self.patterns[id];
                    let n = pat.components.len();
                    if i + n > ps.len() {
                        continue;
                    }
                    let cs = pat.case_sensitive && mode == MatchMode::Standard;
                    let ok = (0..n).all(|j| {
                        let p = &ps[i + j];
                        let joined = j + 1 == n || p.next != Joiner::Break;
                        joined && eq_component(&text[p.start..p.end], &pat.components[j], &pat.lower[j], cs, j + 1 == n)
                    });
                    if !ok {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bn, bid)) => n > bn || (n == bn && pat.surface < self.patterns[bid].surface),
                    };
                    if better {
                        best = Some((n, id));
                    }
                }
            }
            match best {
                Some((n, id)) => {
                    out.push(TermMatch {
                        surface: self.patterns[id].surface.clone(),
                        start: ps[i].start,
                        end: ps[i + n - 1].end,
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }
}
