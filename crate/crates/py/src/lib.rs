//! Python bindings for the deterministic parts of stella-core.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stella_core::beir::load_beir;
use stella_core::chunker::{self, ChunkConfig};
use stella_core::eval::{self, Bm25Index};
use stella_core::ingest::DocumentRecord;
use stella_core::selector::{self, IntentLabel};
use stella_core::terminology::TerminologyDictionary;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn count_tokens(text: &str) -> usize {
    chunker::count_tokens(text)
}

/// Returns `(passage_id, text, token_count)` tuples.
#[pyfunction]
#[pyo3(signature = (doc_id, text, chunk_size=100, overlap=20))]
fn chunk(doc_id: &str, text: &str, chunk_size: usize, overlap: usize) -> PyResult<Vec<(String, String, usize)>> {
    let cfg = ChunkConfig::new(chunk_size, overlap).map_err(value_err)?;
    let passages = chunker::chunk_document(&DocumentRecord::with_text(doc_id, text), &cfg).map_err(value_err)?;
    Ok(passages.into_iter().map(|p| (p.passage_id, p.text, p.token_count)).collect())
}

/// Returns `(medoids, assignment, total_deviation)` under cosine distance.
#[pyfunction]
fn kmedoids(vectors: Vec<Vec<f32>>, k: usize) -> PyResult<(Vec<usize>, Vec<usize>, f64)> {
    let r = selector::kmedoids(&vectors, k).map_err(value_err)?;
    Ok((r.medoids, r.assignment, r.total_deviation))
}

#[pyfunction]
#[pyo3(signature = (ranked, qrels, k=10))]
fn ndcg(ranked: Vec<(String, f64)>, qrels: HashMap<String, i32>, k: usize) -> f64 {
    eval::ndcg_at_k(&ranked, &qrels, k)
}

fn labels(m: BTreeMap<String, String>) -> PyResult<BTreeMap<String, IntentLabel>> {
    m.into_iter()
        .map(|(k, v)| {
            IntentLabel::parse_label(&v).map(|l| (k, l)).ok_or_else(|| value_err(format!("unknown intent {v:?}")))
        })
        .collect()
}

/// Returns a dict with `n`, `micro_f1`, `macro_f1` and per-intent F1.
#[pyfunction]
fn f1_validate<'py>(
    py: Python<'py>,
    predictions: BTreeMap<String, String>,
    reference: BTreeMap<String, String>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = eval::f1_validate(&labels(predictions)?, &labels(reference)?).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("n", r.n)?;
    out.set_item("micro_f1", r.micro_f1)?;
    out.set_item("macro_f1", r.macro_f1)?;
    let per = PyDict::new(py);
    for (label, c) in r.per_intent {
        per.set_item(label.code(), c.f1)?;
    }
    out.set_item("per_intent", per)?;
    Ok(out)
}

/// Distinct dictionary terms found in `text`, in order of first occurrence.
#[pyfunction]
fn find_terms(terms: Vec<String>, text: &str) -> Vec<String> {
    TerminologyDictionary::from_surfaces(terms).distinct_terms_in(text)
}

/// Loads a BEIR directory into `(corpus, queries, qrels)` plain tuples.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn load_beir_split(
    dir: PathBuf,
) -> PyResult<(Vec<(String, String, String)>, Vec<(String, String)>, Vec<(String, String, i32)>)> {
    let s = load_beir(&dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok((
        s.corpus.into_iter().map(|c| (c.id, c.title, c.text)).collect(),
        s.queries.into_iter().map(|q| (q.id, q.text)).collect(),
        s.qrels.into_iter().map(|r| (r.query_id, r.passage_id, r.relevance)).collect(),
    ))
}

#[pyclass(name = "Bm25")]
struct PyBm25 {
    index: Bm25Index,
}

#[pymethods]
impl PyBm25 {
    #[new]
    #[pyo3(signature = (docs, k1=eval::DEFAULT_K1, b=eval::DEFAULT_B))]
    fn new(docs: Vec<(String, String)>, k1: f64, b: f64) -> PyResult<Self> {
        let index = Bm25Index::build(docs.iter().map(|(i, t)| (i.as_str(), t.as_str())), k1, b).map_err(value_err)?;
        Ok(Self { index })
    }

    #[pyo3(signature = (query, k=10))]
    fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        self.index.search(query, k)
    }

    fn __len__(&self) -> usize {
        self.index.len()
    }
}

#[pymodule]
fn stella(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(count_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(chunk, m)?)?;
    m.add_function(wrap_pyfunction!(kmedoids, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(f1_validate, m)?)?;
    m.add_function(wrap_pyfunction!(find_terms, m)?)?;
    m.add_function(wrap_pyfunction!(load_beir_split, m)?)?;
    m.add_class::<PyBm25>()?;
    Ok(())
}
