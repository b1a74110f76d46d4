//! Deterministic offline backends for tests and `--mock` runs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{BackendError, ChatBackend, ChatRequest, EmbedBackend, PosTag, TagBackend};
use crate::chunker::is_punct;

struct Rule {
    needle: Option<String>,
    responses: Vec<String>,
    cursor: usize,
}

impl Rule {
    fn next(&mut self) -> String {
        let i = self.cursor.min(self.responses.len() - 1);
        self.cursor += 1;
        self.responses[i].clone()
    }
}

/// Chat backend replaying scripted responses.
///
/// Rules are checked in insertion order against the concatenated prompts; the
/// first rule whose needle occurs wins, otherwise the default sequence is used.
/// Each sequence repeats its last element once exhausted.
pub struct ScriptedChat {
    rules: Mutex<Vec<Rule>>,
    calls: AtomicUsize,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn sequence<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let responses: Vec<String> = responses.into_iter().map(Into::into).collect();
        assert!(!responses.is_empty(), "script needs at least one response");
        Self {
            rules: Mutex::new(vec![Rule { needle: None, responses, cursor: 0 }]),
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn always(response: impl Into<String>) -> Self {
        Self::sequence([response.into()])
    }

    pub fn with_rule<I, S>(self, needle: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let responses: Vec<String> = responses.into_iter().map(Into::into).collect();
        assert!(!responses.is_empty(), "rule needs at least one response");
        {
            let mut rules = self.rules.lock().unwrap();
            let at = rules.len() - 1;
            rules.insert(at, Rule { needle: Some(needle.to_string()), responses, cursor: 0 });
        }
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(req.clone());
        let mut rules = self.rules.lock().unwrap();
        let haystack = format!("{}\n{}", req.system_prompt, req.user_prompt);
        let rule = rules
            .iter_mut()
            .find(|r| r.needle.as_deref().is_none_or(|n| haystack.contains(n)))
            .expect("default rule always matches");
        Ok(rule.next())
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Feature-hashing embedder: lowercased word tokens are hashed into `dim`
/// signed buckets and the result is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    id: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim, id: format!("hash-embedder-{dim}") }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        let mut any = false;
        for word in text.split_whitespace() {
            let w: String = word.trim_matches(is_punct).to_lowercase();
            if w.is_empty() {
                continue;
            }
            let h = fnv1a(w.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
            any = true;
        }
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if !any || norm == 0.0 {
            let h = fnv1a(text.as_bytes());
            v.iter_mut().for_each(|x| *x = 0.0);
            v[(h % self.dim as u64) as usize] = 1.0;
            return v;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl EmbedBackend for HashEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Embedder with an explicit text → vector table; unknown texts fail.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    table: HashMap<String, Vec<f32>>,
}

impl TableEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(mut self, text: &str, vector: Vec<f32>) -> Self {
        self.table.insert(text.to_string(), vector);
        self
    }
}

impl EmbedBackend for TableEmbedder {
    fn provider_id(&self) -> &str {
        "table-embedder"
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        texts
            .iter()
            .map(|t| {
                self.table.get(t).cloned().ok_or_else(|| BackendError::Fatal(format!("no vector scripted for {t:?}")))
            })
            .collect()
    }
}

/// Tagger backend with a fixed token → tag table (default OTHER).
#[derive(Debug, Clone, Default)]
pub struct TableTagger {
    table: HashMap<String, PosTag>,
}

impl TableTagger {
    pub fn new<I: IntoIterator<Item = (&'static str, PosTag)>>(entries: I) -> Self {
        Self { table: entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }
}

impl TagBackend for TableTagger {
    fn tag(&self, tokens: &[String]) -> Result<Vec<PosTag>, BackendError> {
        Ok(tokens.iter().map(|t| *self.table.get(t).unwrap_or(&PosTag::Other)).collect())
    }
}
