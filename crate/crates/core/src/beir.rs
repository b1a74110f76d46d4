//! BEIR directory layout: `corpus.jsonl`, `queries.jsonl`, `qrels/test.tsv`,
//! one directory per language with the corpus shared across them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, ArtifactError};
use crate::chunker::Passage;
use crate::querygen::{Language, QueryRecord, QueryType};
use crate::selector::IntentLabel;
use crate::xlingual::TranslationRecord;

pub const QRELS_HEADER: &str = "query-id\tcorpus-id\tscore";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const QRELS_FILE: &str = "qrels/test.tsv";

#[derive(Debug, Error)]
pub enum BeirError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", file.display())]
    Parse { file: PathBuf, line: usize, message: String },
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("qrels line {line} references unknown {kind} {id:?}")]
    DanglingQrel { kind: &'static str, id: String, line: usize },
    #[error("query {id} cannot be exported: {reason}")]
    NotExportable { id: String, reason: String },
    #[error("fetch {url}: {message}")]
    Fetch { url: String, message: String },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeirCorpusEntry {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct QueryMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<IntentLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qtype: Option<QueryType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<Language>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_doc_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeirQueryEntry {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: QueryMetadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QrelsEntry {
    pub query_id: String,
    pub passage_id: String,
    pub relevance: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BeirSplit {
    pub corpus: Vec<BeirCorpusEntry>,
    pub queries: Vec<BeirQueryEntry>,
    pub qrels: Vec<QrelsEntry>,
}

impl BeirSplit {
    /// Sorts every table by id so output is deterministic.
    pub fn normalize(&mut self) {
        self.corpus.sort_by(|a, b| a.id.cmp(&b.id));
        self.queries.sort_by(|a, b| a.id.cmp(&b.id));
        self.qrels.sort();
    }

    /// Unique ids and qrels that resolve to both sides.
    pub fn check_integrity(&self) -> Result<(), BeirError> {
        let mut corpus = HashSet::new();
        for c in &self.corpus {
            if !corpus.insert(c.id.as_str()) {
                return Err(BeirError::DuplicateId { kind: "corpus", id: c.id.clone() });
            }
        }
        let mut queries = HashSet::new();
        for q in &self.queries {
            if !queries.insert(q.id.as_str()) {
                return Err(BeirError::DuplicateId { kind: "query", id: q.id.clone() });
            }
        }
        for (i, r) in self.qrels.iter().enumerate() {
            if !queries.contains(r.query_id.as_str()) {
                return Err(BeirError::DanglingQrel { kind: "query", id: r.query_id.clone(), line: i + 2 });
            }
            if !corpus.contains(r.passage_id.as_str()) {
                return Err(BeirError::DanglingQrel { kind: "passage", id: r.passage_id.clone(), line: i + 2 });
            }
        }
        Ok(())
    }

    /// query_id to relevant passage ids with grades.
    pub fn qrels_map(&self) -> HashMap<String, HashMap<String, i32>> {
        let mut m: HashMap<String, HashMap<String, i32>> = HashMap::new();
        for r in &self.qrels {
            m.entry(r.query_id.clone()).or_default().insert(r.passage_id.clone(), r.relevance);
        }
        m
    }
}

pub fn corpus_from_passages(passages: &[Passage]) -> Vec<BeirCorpusEntry> {
    passages
        .iter()
        .map(|p| BeirCorpusEntry { id: p.passage_id.clone(), title: String::new(), text: p.text.clone() })
        .collect()
}

/// Assembles the English split plus one split per translated language.
pub fn build_splits(
    corpus: Vec<BeirCorpusEntry>,
    queries: &[QueryRecord],
    translations: &[TranslationRecord],
) -> Result<BTreeMap<Language, BeirSplit>, BeirError> {
    let mut by_id: HashMap<&str, &QueryRecord> = HashMap::new();
    for q in queries {
        if !q.valid {
            return Err(BeirError::NotExportable { id: q.query_id.clone(), reason: "constraint-invalid".into() });
        }
        if by_id.insert(q.query_id.as_str(), q).is_some() {
            return Err(BeirError::DuplicateId { kind: "query", id: q.query_id.clone() });
        }
    }
    let entry = |q: &QueryRecord, text: &str, lang: Language| BeirQueryEntry {
        id: q.query_id.clone(),
        text: text.to_string(),
        metadata: QueryMetadata {
            intent: Some(q.intent),
            qtype: Some(q.qtype),
            language: Some(lang),
            source_doc_id: Some(q.doc_id.clone()),
        },
    };
    let qrel =
        |q: &QueryRecord| QrelsEntry { query_id: q.query_id.clone(), passage_id: q.passage_id.clone(), relevance: 1 };

    let mut splits: BTreeMap<Language, BeirSplit> = BTreeMap::new();
    let en = splits.entry(Language::En).or_default();
    for q in queries {
        en.queries.push(entry(q, &q.final_query, Language::En));
        en.qrels.push(qrel(q));
    }
    for t in translations {
        let q = by_id.get(t.query_id.as_str()).ok_or_else(|| BeirError::NotExportable {
            id: t.query_id.clone(),
            reason: "translation of an unknown query".into(),
        })?;
        if t.qtype == QueryType::Tcq && !t.term_check_passed {
            return Err(BeirError::NotExportable {
                id: t.query_id.clone(),
                reason: format!("{} term check failed", t.language),
            });
        }
        let split = splits.entry(t.language).or_default();
        split.queries.push(entry(q, &t.translated_query, t.language));
        split.qrels.push(qrel(q));
    }
    for split in splits.values_mut() {
        split.corpus = corpus.clone();
        split.normalize();
        split.check_integrity()?;
    }
    Ok(splits)
}

pub fn write_split(split: &BeirSplit, dir: &Path) -> Result<(), BeirError> {
    split.check_integrity()?;
    artifact::write_jsonl(&dir.join(CORPUS_FILE), &split.corpus)?;
    artifact::write_jsonl(&dir.join(QUERIES_FILE), &split.queries)?;
    let mut tsv = String::from(QRELS_HEADER);
    tsv.push('\n');
    for r in &split.qrels {
        tsv.push_str(&format!("{}\t{}\t{}\n", r.query_id, r.passage_id, r.relevance));
    }
    artifact::write_atomic(&dir.join(QRELS_FILE), tsv.as_bytes())?;
    Ok(())
}

/// Writes `out_dir/<lang>/` for every split; returns query counts.
pub fn export_beir(
    corpus: Vec<BeirCorpusEntry>,
    queries: &[QueryRecord],
    translations: &[TranslationRecord],
    out_dir: &Path,
) -> Result<BTreeMap<Language, usize>, BeirError> {
    let splits = build_splits(corpus, queries, translations)?;
    let mut counts = BTreeMap::new();
    for (lang, split) in &splits {
        write_split(split, &out_dir.join(lang.code()))?;
        counts.insert(*lang, split.queries.len());
    }
    Ok(counts)
}

fn read_jsonl_file<T: serde::de::DeserializeOwned>(file: &Path) -> Result<Vec<T>, BeirError> {
    artifact::read_jsonl(file).map_err(|e| match e {
        ArtifactError::Parse { path, line, message } => BeirError::Parse { file: path, line, message },
        ArtifactError::Io { path, source } => BeirError::Io { path, source },
        other => BeirError::Artifact(other),
    })
}

pub fn read_qrels(file: &Path) -> Result<Vec<QrelsEntry>, BeirError> {
    let f = fs::File::open(file).map_err(|source| BeirError::Io { path: file.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| BeirError::Io { path: file.to_path_buf(), source })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (i == 0 && line.starts_with("query-id")) {
            continue;
        }
        let parse_err = |message: String| BeirError::Parse { file: file.to_path_buf(), line: i + 1, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(format!("expected 3 tab-separated columns, got {}", cols.len())));
        }
        let relevance = cols[2].trim().parse::<i32>().map_err(|e| parse_err(format!("score {:?}: {e}", cols[2])))?;
        out.push(QrelsEntry { query_id: cols[0].to_string(), passage_id: cols[1].to_string(), relevance });
    }
    Ok(out)
}

/// Loads and validates one split directory.
pub fn load_beir(dir: &Path) -> Result<BeirSplit, BeirError> {
    let split = BeirSplit {
        corpus: read_jsonl_file(&dir.join(CORPUS_FILE))?,
        queries: read_jsonl_file(&dir.join(QUERIES_FILE))?,
        qrels: read_qrels(&dir.join(QRELS_FILE))?,
    };
    split.check_integrity()?;
    Ok(split)
}

/// Downloads one split (`corpus.jsonl`, `queries.jsonl`, `qrels/test.tsv`)
/// from `base_url` into `dest`.
pub fn fetch_split(base_url: &str, dest: &Path) -> Result<(), BeirError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(600))
        .build()
        .map_err(|e| BeirError::Fetch { url: base_url.into(), message: e.to_string() })?;
    for file in [CORPUS_FILE, QUERIES_FILE, QRELS_FILE] {
        let url = format!("{}/{file}", base_url.trim_end_matches('/'));
        let fail = |message: String| BeirError::Fetch { url: url.clone(), message };
        let resp = client.get(&url).send().map_err(|e| fail(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(fail(format!("HTTP {}", resp.status())));
        }
        let bytes = resp.bytes().map_err(|e| fail(e.to_string()))?;
        artifact::write_atomic(&dest.join(file), &bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split() -> BeirSplit {
        BeirSplit {
            corpus: vec![
                BeirCorpusEntry { id: "p1".into(), title: String::new(), text: "rocket nozzle".into() },
                BeirCorpusEntry { id: "p2".into(), title: "T".into(), text: "seal".into() },
            ],
            queries: vec![BeirQueryEntry {
                id: "q1".into(),
                text: "nozzle?".into(),
                metadata: QueryMetadata::default(),
            }],
            qrels: vec![QrelsEntry { query_id: "q1".into(), passage_id: "p1".into(), relevance: 1 }],
        }
    }

    #[test]
    fn field_names_are_bit_exact() {
        let line = serde_json::to_string(&split().corpus[0]).unwrap();
        assert_eq!(line, r#"{"_id":"p1","title":"","text":"rocket nozzle"}"#);
    }

    #[test]
    fn round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let s = split();
        write_split(&s, dir.path()).unwrap();
        let qrels = fs::read_to_string(dir.path().join(QRELS_FILE)).unwrap();
        assert_eq!(qrels, "query-id\tcorpus-id\tscore\nq1\tp1\t1\n");
        assert_eq!(load_beir(dir.path()).unwrap(), s);
    }

    #[test]
    fn dangling_and_duplicate() {
        let mut s = split();
        s.qrels[0].passage_id = "p9".into();
        assert!(
            matches!(s.check_integrity(), Err(BeirError::DanglingQrel { kind: "passage", ref id, .. }) if id == "p9")
        );
        let mut s = split();
        s.corpus.push(s.corpus[0].clone());
        assert!(matches!(s.check_integrity(), Err(BeirError::DuplicateId { kind: "corpus", .. })));
    }
}
