//! Retrieval evaluation: BM25 and exact dense retrieval, nDCG@k, the
//! TCQ/TAQ report tables, intent-classifier F1, and TREC run files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, ArtifactError};
use crate::beir::{BeirSplit, QueryMetadata};
use crate::chunker::{is_punct, Tokenizer, WhitespaceTokenizer};
use crate::gateway::{cosine, EmbedClient, GatewayError};
use crate::querygen::{Language, QueryType};
use crate::selector::IntentLabel;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown passage {0:?}")]
    UnknownPassage(String),
    #[error("vector dimension {got} differs from corpus dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no qrels for query {0:?}")]
    MissingQrels(String),
    #[error("prediction and reference keys differ: {only_pred} only predicted, {only_ref} only in reference")]
    KeyMismatch { only_pred: usize, only_ref: usize },
    #[error("invalid BM25 parameters k1={k1} b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("run file line {line}: {message}")]
    RunParse { line: usize, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Lowercased whitespace tokens with edge punctuation detached; pure
/// punctuation tokens are dropped.
pub fn analyze(text: &str) -> Vec<String> {
    WhitespaceTokenizer
        .tokenize(text)
        .into_iter()
        .map(|t| t.text(text))
        .filter(|t| !t.chars().all(is_punct))
        .map(str::to_lowercase)
        .collect()
}

pub type Ranked = Vec<(String, f64)>;
/// query_id to ranked (passage_id, score), best first.
pub type Run = BTreeMap<String, Ranked>;
pub type Qrels = HashMap<String, HashMap<String, i32>>;

fn rank_order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn build<'a, I>(docs: I, k1: f64, b: f64) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        if !(k1 >= 0.0 && (0.0..=1.0).contains(&b)) {
            return Err(EvalError::InvalidParams { k1, b });
        }
        let docs: Vec<(&str, &str)> = docs.into_iter().collect();
        let analyzed: Vec<Vec<String>> = docs.par_iter().map(|(_, text)| analyze(text)).collect();
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut doc_index = HashMap::with_capacity(docs.len());
        for (i, tokens) in analyzed.into_iter().enumerate() {
            doc_index.insert(docs[i].0.to_string(), i as u32);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i as u32, n));
            }
        }
        let n = doc_lengths.len();
        let avgdl = if n == 0 { 0.0 } else { doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / n as f64 };
        Ok(Self {
            postings,
            doc_ids: docs.iter().map(|(id, _)| id.to_string()).collect(),
            doc_index,
            doc_lengths,
            avgdl,
            k1,
            b,
        })
    }

    pub fn from_split(split: &BeirSplit, k1: f64, b: f64) -> Result<Self, EvalError> {
        let texts: Vec<String> = split
            .corpus
            .iter()
            .map(|c| if c.title.is_empty() { c.text.clone() } else { format!("{} {}", c.title, c.text) })
            .collect();
        Self::build(split.corpus.iter().zip(&texts).map(|(c, t)| (c.id.as_str(), t.as_str())), k1, b)
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: f64, dl: f64) -> f64 {
        let norm = if self.avgdl > 0.0 { dl / self.avgdl } else { 0.0 };
        tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm))
    }

    /// Score of one passage; every query token contributes, repeats included.
    pub fn score(&self, query_tokens: &[String], passage_id: &str) -> Result<f64, EvalError> {
        let &doc = self.doc_index.get(passage_id).ok_or_else(|| EvalError::UnknownPassage(passage_id.into()))?;
        let dl = self.doc_lengths[doc as usize] as f64;
        let mut s = 0.0;
        for t in query_tokens {
            let Some(list) = self.postings.get(t) else { continue };
            if let Some(&(_, tf)) = list.iter().find(|(d, _)| *d == doc) {
                s += self.idf(t) * self.term_weight(tf as f64, dl);
            }
        }
        Ok(s)
    }

    /// Top `cutoff` passages with a positive score.
    pub fn search(&self, query: &str, cutoff: usize) -> Ranked {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in analyze(query) {
            let Some(list) = self.postings.get(&t) else { continue };
            let idf = self.idf(&t);
            for &(doc, tf) in list {
                *acc.entry(doc).or_default() +=
                    idf * self.term_weight(tf as f64, self.doc_lengths[doc as usize] as f64);
            }
        }
        let mut ranked: Ranked =
            acc.into_iter().filter(|(_, s)| *s > 0.0).map(|(d, s)| (self.doc_ids[d as usize].clone(), s)).collect();
        top_k(&mut ranked, cutoff);
        ranked
    }

    pub fn run<'a, I>(&self, queries: I, cutoff: usize) -> Run
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let qs: Vec<(&str, &str)> = queries.into_iter().collect();
        qs.par_iter().map(|(id, text)| (id.to_string(), self.search(text, cutoff))).collect()
    }
}

fn top_k(ranked: &mut Ranked, k: usize) {
    if ranked.len() > k {
        ranked.select_nth_unstable_by(k, rank_order);
        ranked.truncate(k);
    }
    ranked.sort_by(rank_order);
}

/// Corpus vectors for exact cosine retrieval.
#[derive(Debug, Clone, Default)]
pub struct DenseIndex {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
}

impl DenseIndex {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f32>>) -> Result<Self, EvalError> {
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(EvalError::DimensionMismatch { expected: first.len(), got: bad.len() });
            }
        }
        Ok(Self { ids, vectors })
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(Vec::len)
    }

    /// Embeds a split's corpus with an optional passage prefix.
    pub fn embed_split(split: &BeirSplit, embed: &EmbedClient, prefix: &str) -> Result<Self, EvalError> {
        let texts: Vec<String> = split.corpus.iter().map(|c| format!("{prefix}{}", c.text)).collect();
        let vectors = embed.embed_all(&texts)?.into_iter().map(|v| v.values).collect();
        Self::new(split.corpus.iter().map(|c| c.id.clone()).collect(), vectors)
    }
}

/// Exact top-`cutoff` by cosine; equal similarities fall back to passage id.
pub fn dense_retrieve(index: &DenseIndex, query: &[f32], cutoff: usize) -> Result<Ranked, EvalError> {
    if let Some(d) = index.dim() {
        if d != query.len() {
            return Err(EvalError::DimensionMismatch { expected: d, got: query.len() });
        }
    }
    let mut ranked: Ranked =
        index.ids.iter().zip(&index.vectors).map(|(id, v)| (id.clone(), cosine(v, query))).collect();
    top_k(&mut ranked, cutoff);
    Ok(ranked)
}

pub fn dense_run(
    index: &DenseIndex,
    split: &BeirSplit,
    embed: &EmbedClient,
    query_prefix: &str,
    cutoff: usize,
) -> Result<Run, EvalError> {
    let texts: Vec<String> = split.queries.iter().map(|q| format!("{query_prefix}{}", q.text)).collect();
    let vectors = embed.embed_all(&texts)?;
    split
        .queries
        .par_iter()
        .zip(vectors.par_iter())
        .map(|(q, v)| Ok((q.id.clone(), dense_retrieve(index, &v.values, cutoff)?)))
        .collect()
}

/// nDCG@k with gains equal to the relevance grade.
pub fn ndcg_at_k(ranked: &[(String, f64)], rels: &HashMap<String, i32>, k: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (pid, _))| rels.get(pid).copied().unwrap_or(0).max(0) as f64 / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<i32> = rels.values().copied().filter(|&r| r > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &r)| r as f64 / ((i + 2) as f64).log2()).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Per-query nDCG@k for every judged query; queries absent from the run
/// score 0, run queries without judgments are an error.
pub fn evaluate_run(run: &Run, qrels: &Qrels, k: usize) -> Result<BTreeMap<String, f64>, EvalError> {
    if let Some(q) = run.keys().find(|q| !qrels.contains_key(*q)) {
        return Err(EvalError::MissingQrels(q.clone()));
    }
    Ok(qrels
        .iter()
        .map(|(q, rels)| {
            let score = run.get(q).map_or(0.0, |r| ndcg_at_k(r, rels, k));
            (q.clone(), score)
        })
        .collect())
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-query scores of one language split with their metadata.
#[derive(Debug, Clone, Default)]
pub struct SplitScores {
    pub scores: BTreeMap<String, f64>,
    pub metadata: HashMap<String, QueryMetadata>,
}

impl SplitScores {
    pub fn from_split(split: &BeirSplit, scores: BTreeMap<String, f64>) -> Self {
        Self { scores, metadata: split.queries.iter().map(|q| (q.id.clone(), q.metadata.clone())).collect() }
    }

    fn qtype(&self, id: &str) -> Option<QueryType> {
        self.metadata.get(id).and_then(|m| m.qtype).or_else(|| {
            let lower = id.to_ascii_lowercase();
            match (lower.contains("tcq"), lower.contains("taq")) {
                (true, false) => Some(QueryType::Tcq),
                (false, true) => Some(QueryType::Taq),
                _ => None,
            }
        })
    }

    fn intent(&self, id: &str) -> Option<IntentLabel> {
        self.metadata.get(id).and_then(|m| m.intent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeCell {
    pub queries: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SplitReport {
    pub queries: usize,
    /// Mean over all queries.
    pub overall: Option<f64>,
    pub tcq_avg: Option<f64>,
    pub taq_avg: Option<f64>,
    pub gap: Option<f64>,
    /// qtype to intent to mean nDCG.
    pub per_intent: BTreeMap<QueryType, BTreeMap<IntentLabel, TypeCell>>,
    /// Unweighted means over the intent cells, and their mean and difference.
    pub tcq_intent_avg: Option<f64>,
    pub taq_intent_avg: Option<f64>,
    pub intent_overall: Option<f64>,
    pub intent_gap: Option<f64>,
}

fn pair_stats(tcq: Option<f64>, taq: Option<f64>) -> (Option<f64>, Option<f64>) {
    match (tcq, taq) {
        (Some(a), Some(b)) => (Some((a + b) / 2.0), Some(a - b)),
        _ => (None, None),
    }
}

pub fn split_report(s: &SplitScores) -> SplitReport {
    let mut by_type: BTreeMap<QueryType, Vec<f64>> = BTreeMap::new();
    let mut cells: BTreeMap<QueryType, BTreeMap<IntentLabel, Vec<f64>>> = BTreeMap::new();
    for (id, &v) in &s.scores {
        if let Some(t) = s.qtype(id) {
            by_type.entry(t).or_default().push(v);
            if let Some(i) = s.intent(id) {
                cells.entry(t).or_default().entry(i).or_default().push(v);
            }
        }
    }
    let tcq_avg = by_type.get(&QueryType::Tcq).and_then(|v| mean(v.iter().copied()));
    let taq_avg = by_type.get(&QueryType::Taq).and_then(|v| mean(v.iter().copied()));
    let per_intent: BTreeMap<QueryType, BTreeMap<IntentLabel, TypeCell>> = cells
        .into_iter()
        .map(|(t, m)| {
            let row = m
                .into_iter()
                .map(|(i, v)| (i, TypeCell { queries: v.len(), mean: mean(v.iter().copied()).unwrap_or(0.0) }))
                .collect();
            (t, row)
        })
        .collect();
    let intent_avg = |t: QueryType| per_intent.get(&t).and_then(|row| mean(row.values().map(|c| c.mean)));
    let (tcq_intent_avg, taq_intent_avg) = (intent_avg(QueryType::Tcq), intent_avg(QueryType::Taq));
    let (intent_overall, intent_gap) = pair_stats(tcq_intent_avg, taq_intent_avg);
    SplitReport {
        queries: s.scores.len(),
        overall: mean(s.scores.values().copied()),
        tcq_avg,
        taq_avg,
        gap: pair_stats(tcq_avg, taq_avg).1,
        per_intent,
        tcq_intent_avg,
        taq_intent_avg,
        intent_overall,
        intent_gap,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CrossLingualSummary {
    /// Mean over the non-English languages of each language's average.
    pub tcq_avg: Option<f64>,
    pub taq_avg: Option<f64>,
    pub all_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub retriever: String,
    pub k: usize,
    /// English split when present, otherwise the first split.
    pub reference_language: Option<Language>,
    pub reference: SplitReport,
    pub per_language: BTreeMap<Language, SplitReport>,
    pub cross_lingual: CrossLingualSummary,
}

pub fn build_report(retriever: &str, k: usize, splits: &BTreeMap<Language, SplitScores>) -> MetricReport {
    let per_language: BTreeMap<Language, SplitReport> = splits.iter().map(|(l, s)| (*l, split_report(s))).collect();
    let reference_language =
        if per_language.contains_key(&Language::En) { Some(Language::En) } else { per_language.keys().next().copied() };
    let reference = reference_language.and_then(|l| per_language.get(&l).cloned()).unwrap_or_default();
    let others: Vec<&SplitReport> = per_language.iter().filter(|(l, _)| **l != Language::En).map(|(_, r)| r).collect();
    let tcq =
        if others.iter().all(|r| r.tcq_avg.is_some()) { mean(others.iter().filter_map(|r| r.tcq_avg)) } else { None };
    let taq =
        if others.iter().all(|r| r.taq_avg.is_some()) { mean(others.iter().filter_map(|r| r.taq_avg)) } else { None };
    MetricReport {
        retriever: retriever.to_string(),
        k,
        reference_language,
        reference,
        per_language,
        cross_lingual: CrossLingualSummary { tcq_avg: tcq, taq_avg: taq, all_avg: pair_stats(tcq, taq).0 },
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl MetricReport {
    /// Aligned plain-text tables: the reference split by intent, then the
    /// per-language TCQ/TAQ matrix.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let r = &self.reference;
        let lang = self.reference_language.map_or("-", Language::code);
        let _ = writeln!(out, "{} nDCG@{} on {lang} ({} queries)", self.retriever, self.k, r.queries);
        let _ = writeln!(out, "{:<10}{:>9}{:>9}", "", "Overall", "Gap");
        let _ = writeln!(out, "{:<10}{:>9}{:>9}", "queries", cell(r.overall), cell(r.gap));
        let _ = writeln!(out, "{:<10}{:>9}{:>9}", "intents", cell(r.intent_overall), cell(r.intent_gap));
        let mut header = format!("{:<6}", "");
        for i in IntentLabel::ALL {
            header.push_str(&format!("{:>8}", i.code()));
        }
        header.push_str(&format!("{:>8}", "Avg"));
        let _ = writeln!(out, "{header}");
        for t in [QueryType::Tcq, QueryType::Taq] {
            let mut line = format!("{:<6}", t.code());
            for i in IntentLabel::ALL {
                let v = r.per_intent.get(&t).and_then(|row| row.get(&i)).map(|c| c.mean);
                line.push_str(&format!("{:>8}", cell(v)));
            }
            let avg = if t == QueryType::Tcq { r.tcq_intent_avg } else { r.taq_intent_avg };
            line.push_str(&format!("{:>8}", cell(avg)));
            let _ = writeln!(out, "{line}");
        }
        if self.per_language.len() > 1 {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<6}{:>8}{:>8}{:>8}{:>8}", "lang", "queries", "TCQ", "TAQ", "All");
            for (l, s) in &self.per_language {
                let _ = writeln!(
                    out,
                    "{:<6}{:>8}{:>8}{:>8}{:>8}",
                    l.code(),
                    s.queries,
                    cell(s.tcq_avg),
                    cell(s.taq_avg),
                    cell(s.overall)
                );
            }
            let c = &self.cross_lingual;
            let _ = writeln!(
                out,
                "{:<6}{:>8}{:>8}{:>8}{:>8}",
                "x-avg",
                "",
                cell(c.tcq_avg),
                cell(c.taq_avg),
                cell(c.all_avg)
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub n: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_intent: BTreeMap<IntentLabel, ClassF1>,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Multiclass F1. Macro averages over labels present in either the
/// reference or the predictions; 0/0 ratios count as 0.
pub fn f1_validate(
    predictions: &BTreeMap<String, IntentLabel>,
    reference: &BTreeMap<String, IntentLabel>,
) -> Result<F1Report, EvalError> {
    let only_pred = predictions.keys().filter(|k| !reference.contains_key(*k)).count();
    let only_ref = reference.keys().filter(|k| !predictions.contains_key(*k)).count();
    if only_pred + only_ref > 0 {
        return Err(EvalError::KeyMismatch { only_pred, only_ref });
    }
    let labels: BTreeSet<IntentLabel> = predictions.values().chain(reference.values()).copied().collect();
    let mut tp: BTreeMap<IntentLabel, usize> = BTreeMap::new();
    let mut support: BTreeMap<IntentLabel, usize> = BTreeMap::new();
    let mut predicted: BTreeMap<IntentLabel, usize> = BTreeMap::new();
    for (k, gold) in reference {
        let pred = predictions[k];
        *support.entry(*gold).or_default() += 1;
        *predicted.entry(pred).or_default() += 1;
        if pred == *gold {
            *tp.entry(pred).or_default() += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_intent: BTreeMap<IntentLabel, ClassF1> = labels
        .iter()
        .map(|l| {
            let (t, s, p) = (
                tp.get(l).copied().unwrap_or(0),
                support.get(l).copied().unwrap_or(0),
                predicted.get(l).copied().unwrap_or(0),
            );
            let (precision, recall) = (ratio(t, p), ratio(t, s));
            (*l, ClassF1 { support: s, predicted: p, precision, recall, f1: f1(precision, recall) })
        })
        .collect();
    let n = reference.len();
    let correct: usize = tp.values().sum();
    // Single-label: micro precision = micro recall = accuracy.
    let acc = ratio(correct, n);
    Ok(F1Report {
        n,
        micro_f1: if n == 0 { 0.0 } else { f1(acc, acc) },
        macro_f1: mean(per_intent.values().map(|c| c.f1)).unwrap_or(0.0),
        per_intent,
    })
}

/// `query_id Q0 passage_id rank score tag`, ranks starting at 1.
pub fn write_trec_run(path: &Path, run: &Run, tag: &str) -> Result<(), EvalError> {
    let mut w = artifact::create_buffered(path)?;
    for (q, ranked) in run {
        for (i, (pid, score)) in ranked.iter().enumerate() {
            writeln!(w, "{q} Q0 {pid} {} {score:.6} {tag}", i + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trec_run(path: &Path) -> Result<Run, EvalError> {
    let f = std::fs::File::open(path)?;
    let mut run: Run = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(EvalError::RunParse {
                line: i + 1,
                message: format!("expected 6 columns, got {}", cols.len()),
            });
        }
        let score: f64 =
            cols[4].parse().map_err(|e| EvalError::RunParse { line: i + 1, message: format!("score: {e}") })?;
        run.entry(cols[0].to_string()).or_default().push((cols[2].to_string(), score));
    }
    for ranked in run.values_mut() {
        ranked.sort_by(rank_order);
    }
    Ok(run)
}

/// Reads intent labels keyed by item id. Lines are either `id<TAB>label`
/// (an optional `id` header row is skipped) or JSON objects with an `id` or
/// `passage_id` field and an `intent` field. Labels may be codes or display
/// strings.
pub fn read_intent_labels(path: &Path) -> Result<BTreeMap<String, IntentLabel>, EvalError> {
    let f = std::fs::File::open(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| EvalError::RunParse { line: i + 1, message };
        let (id, label) = if line.starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let id = v.get("id").or_else(|| v.get("passage_id")).and_then(|x| x.as_str());
            let label = v.get("intent").and_then(|x| x.as_str());
            match (id, label) {
                (Some(a), Some(b)) => (a.to_string(), b.to_string()),
                _ => return Err(err("expected string fields id (or passage_id) and intent".into())),
            }
        } else {
            let Some((a, b)) = line.split_once('\t') else {
                return Err(err("expected id<TAB>label".into()));
            };
            if i == 0 && a.trim().eq_ignore_ascii_case("id") {
                continue;
            }
            (a.trim().to_string(), b.trim().to_string())
        };
        let intent = IntentLabel::parse_label(&label).ok_or_else(|| err(format!("unknown intent {label:?}")))?;
        if out.insert(id.clone(), intent).is_some() {
            return Err(err(format!("duplicate id {id:?}")));
        }
    }
    Ok(out)
}
