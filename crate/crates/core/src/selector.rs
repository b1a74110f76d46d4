//! Candidate passage selection: terminology-density filter, intent
//! classification, PAM k-medoids and per-medoid representative extraction.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Passage;
use crate::gateway::{cosine, ChatClient, EmbeddingVector, GatewayError};
use crate::prompts;
use crate::terminology::TerminologyDictionary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("k-medoids needs at least {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("intent pool {intent} has {size} passages, needs {needed}")]
    PoolTooSmall { intent: IntentLabel, size: usize, needed: usize },
    #[error("unparseable intent response {response:?}: {reason}")]
    UnparseableIntent { response: String, reason: String },
    #[error("vectors have inconsistent dimensions ({expected} vs {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IntentLabel {
    Def,
    Num,
    Proc,
    Comp,
    Anom,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 5] =
        [IntentLabel::Def, IntentLabel::Num, IntentLabel::Proc, IntentLabel::Comp, IntentLabel::Anom];

    pub fn display(self) -> &'static str {
        match self {
            IntentLabel::Def => "Definition / Principle",
            IntentLabel::Num => "Numerical / Specification",
            IntentLabel::Proc => "Procedure / Operation",
            IntentLabel::Comp => "Comparison / Trade-off",
            IntentLabel::Anom => "Anomaly / Risk",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            IntentLabel::Def => "Def",
            IntentLabel::Num => "Num",
            IntentLabel::Proc => "Proc",
            IntentLabel::Comp => "Comp",
            IntentLabel::Anom => "Anom",
        }
    }

    /// Accepts either the short code or the display string, case-insensitively.
    pub fn parse_label(s: &str) -> Option<IntentLabel> {
        let s = s.trim();
        Self::ALL.into_iter().find(|l| l.code().eq_ignore_ascii_case(s) || l.display().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display())
    }
}

/// Parses a classifier answer: exact (case-insensitive) display string first,
/// then a substring scan that must find exactly one display string.
pub fn parse_intent_response(response: &str) -> Result<IntentLabel, String> {
    let trimmed =
        response.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '*' || c == '`' || c == '.').trim();
    if let Some(l) = IntentLabel::ALL.into_iter().find(|l| l.display().eq_ignore_ascii_case(trimmed)) {
        return Ok(l);
    }
    let lower = response.to_lowercase();
    let found: Vec<IntentLabel> =
        IntentLabel::ALL.into_iter().filter(|l| lower.contains(&l.display().to_lowercase())).collect();
    match found.as_slice() {
        [one] => Ok(*one),
        [] => Err("response names none of the 5 intents".into()),
        _ => Err(format!("response names {} intents; exactly one is required", found.len())),
    }
}

/// Classifies a passage with the intent prompt at temperature 0. A failed
/// parse triggers one re-prompt that quotes the parse error.
pub fn classify_intent(passage_text: &str, chat: &ChatClient) -> Result<IntentLabel, SelectError> {
    let req = prompts::INTENT_CLASSIFICATION
        .request(&[("passage_text", passage_text)])
        .expect("intent template renders")
        .max_output_tokens(32);
    let first = chat.chat(&req)?;
    let err = match parse_intent_response(&first) {
        Ok(l) => return Ok(l),
        Err(e) => e,
    };
    let mut retry = req.clone();
    retry.user_prompt = format!(
        "{}\n\nYour previous answer was: {}\nIt could not be used: {err}. Answer with exactly one of the 5 intent names.",
        req.user_prompt,
        first.trim()
    );
    let second = chat.chat(&retry)?;
    parse_intent_response(&second).map_err(|reason| SelectError::UnparseableIntent { response: second, reason })
}

/// Keeps passages with at least `min_distinct` distinct dictionary terms,
/// returning them with their distinct terms.
pub fn density_filter(
    passages: &[Passage],
    dict: &TerminologyDictionary,
    min_distinct: usize,
) -> Vec<(Passage, Vec<String>)> {
    dict.matcher();
    passages
        .par_iter()
        .filter_map(|p| {
            let terms = dict.distinct_terms_in(&p.text);
            (terms.len() >= min_distinct).then(|| (p.clone(), terms))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub per_medoid: usize,
    #[serde(default)]
    pub distance: Distance,
    pub seed: u64,
    /// Optional cap on pool size before clustering (uniform sample).
    #[serde(default)]
    pub sample: Option<usize>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k: 5, per_medoid: 20, distance: Distance::Cosine, seed: 13, sample: None }
    }
}

impl ClusterConfig {
    pub fn per_intent(&self) -> usize {
        self.k * self.per_medoid
    }

    pub fn validate(&self) -> Result<(), SelectError> {
        if self.k == 0 || self.per_medoid == 0 {
            return Err(SelectError::InvalidConfig("k and per_medoid must be positive".into()));
        }
        if let Some(s) = self.sample {
            if s < self.per_intent() {
                return Err(SelectError::InvalidConfig(format!(
                    "sample cap {s} below k x per_medoid = {}",
                    self.per_intent()
                )));
            }
        }
        Ok(())
    }
}

/// 1 − cosine, clamped at 0 against rounding.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    (1.0 - cosine(a, b)).max(0.0)
}

pub fn distance_matrix(vectors: &[Vec<f32>]) -> Result<Vec<Vec<f64>>, SelectError> {
    if let Some(first) = vectors.first() {
        if let Some(v) = vectors.iter().find(|v| v.len() != first.len()) {
            return Err(SelectError::DimensionMismatch { expected: first.len(), got: v.len() });
        }
    }
    Ok(vectors.par_iter().map(|a| vectors.iter().map(|b| cosine_distance(a, b)).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMedoidsResult {
    /// Medoid point indices, ascending; cluster `c` is `medoids[c]`.
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    pub total_deviation: f64,
    pub build_deviation: f64,
    pub swaps: usize,
}

/// Sum over points of the distance to their nearest medoid.
pub fn total_deviation(dist: &[Vec<f64>], medoids: &[usize]) -> f64 {
    dist.iter().map(|row| medoids.iter().map(|&m| row[m]).fold(f64::INFINITY, f64::min)).sum()
}

const IMPROVEMENT_EPS: f64 = 1e-12;

fn nearest_two(dist: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = dist.len();
    let mut near = vec![0usize; n];
    let mut d1 = vec![f64::INFINITY; n];
    let mut d2 = vec![f64::INFINITY; n];
    for j in 0..n {
        for (c, &m) in medoids.iter().enumerate() {
            let d = dist[j][m];
            if d < d1[j] {
                d2[j] = d1[j];
                d1[j] = d;
                near[j] = c;
            } else if d < d2[j] {
                d2[j] = d;
            }
        }
    }
    (near, d1, d2)
}

/// PAM on a precomputed distance matrix: greedy BUILD, then steepest-descent
/// SWAP until no swap lowers the objective. Ties go to the lowest index.
pub fn kmedoids_from_distances(dist: &[Vec<f64>], k: usize) -> Result<KMedoidsResult, SelectError> {
    let n = dist.len();
    if k == 0 {
        return Err(SelectError::InvalidConfig("k must be positive".into()));
    }
    if n < k {
        return Err(SelectError::TooFewPoints { n, k });
    }

    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut is_medoid = vec![false; n];
    let first = (0..n)
        .map(|i| (i, dist[i].iter().sum::<f64>()))
        .fold((0usize, f64::INFINITY), |best, (i, s)| if s < best.1 { (i, s) } else { best })
        .0;
    medoids.push(first);
    is_medoid[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|j| dist[j][first]).collect();
    while medoids.len() < k {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            let gain: f64 = (0..n).map(|j| (nearest[j] - dist[j][c]).max(0.0)).sum();
            if gain > best.1 {
                best = (c, gain);
            }
        }
        let c = best.0;
        medoids.push(c);
        is_medoid[c] = true;
        for j in 0..n {
            nearest[j] = nearest[j].min(dist[j][c]);
        }
    }
    let build_deviation = total_deviation(dist, &medoids);

    let mut swaps = 0;
    loop {
        let (near, d1, d2) = nearest_two(dist, &medoids);
        let mut best: Option<(usize, usize, f64)> = None;
        for (ci, _) in medoids.iter().enumerate() {
            for o in (0..n).filter(|&o| !is_medoid[o]) {
                let mut delta = 0.0;
                for j in 0..n {
                    let dj = dist[j][o];
                    let new = if near[j] == ci { d2[j].min(dj) } else { d1[j].min(dj) };
                    delta += new - d1[j];
                }
                if best.is_none_or(|(_, _, bd)| delta < bd) {
                    best = Some((ci, o, delta));
                }
            }
        }
        match best {
            Some((ci, o, delta)) if delta < -IMPROVEMENT_EPS => {
                is_medoid[medoids[ci]] = false;
                medoids[ci] = o;
                is_medoid[o] = true;
                swaps += 1;
            }
            _ => break,
        }
    }

    medoids.sort_unstable();
    let (assignment, _, _) = nearest_two(dist, &medoids);
    Ok(KMedoidsResult { total_deviation: total_deviation(dist, &medoids), medoids, assignment, build_deviation, swaps })
}

/// PAM under cosine distance.
pub fn kmedoids(vectors: &[Vec<f32>], k: usize) -> Result<KMedoidsResult, SelectError> {
    if vectors.len() < k {
        return Err(SelectError::TooFewPoints { n: vectors.len(), k });
    }
    kmedoids_from_distances(&distance_matrix(vectors)?, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePassage {
    pub passage: Passage,
    pub intent: IntentLabel,
    pub distinct_terms: Vec<String>,
    pub embedding: EmbeddingVector,
    pub medoid_id: usize,
    pub rank_to_medoid: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backfilled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolMember {
    pub passage: Passage,
    pub distinct_terms: Vec<String>,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub candidates: Vec<CandidatePassage>,
    pub backfilled: usize,
    pub clustering: KMedoidsResult,
    pub pool_size: usize,
    pub clustered: usize,
}

/// Uniform sample of `cap` pool indices (ascending), or all indices.
pub fn sample_indices(n: usize, cap: Option<usize>, seed: u64) -> Vec<usize> {
    match cap {
        Some(cap) if cap < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, n, cap).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Clusters an intent pool and takes the `per_medoid` members nearest to each
/// medoid (medoid first). Short clusters are backfilled from the nearest
/// still-unselected points of the whole pool and flagged.
pub fn select_representatives(
    pool: &[PoolMember],
    intent: IntentLabel,
    cfg: &ClusterConfig,
) -> Result<Selection, SelectError> {
    cfg.validate()?;
    let needed = cfg.per_intent();
    if pool.len() < needed {
        return Err(SelectError::PoolTooSmall { intent, size: pool.len(), needed });
    }
    let seed = cfg.seed ^ (intent as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let idx = sample_indices(pool.len(), cfg.sample, seed);
    let members: Vec<&PoolMember> = idx.iter().map(|&i| &pool[i]).collect();
    let vectors: Vec<Vec<f32>> = members.iter().map(|m| m.embedding.values.clone()).collect();
    let dist = distance_matrix(&vectors)?;
    let km = kmedoids_from_distances(&dist, cfg.k)?;

    let n = members.len();
    let mut taken = vec![false; n];
    let mut picks: Vec<Vec<(usize, bool)>> = vec![Vec::new(); cfg.k];
    for (c, &m) in km.medoids.iter().enumerate() {
        let mut cluster: Vec<usize> = (0..n).filter(|&j| km.assignment[j] == c && j != m).collect();
        cluster.sort_by(|&a, &b| dist[a][m].total_cmp(&dist[b][m]).then(a.cmp(&b)));
        picks[c].push((m, false));
        taken[m] = true;
        for j in cluster.into_iter().take(cfg.per_medoid - 1) {
            picks[c].push((j, false));
            taken[j] = true;
        }
    }
    let mut backfilled = 0;
    for (c, &m) in km.medoids.iter().enumerate() {
        if picks[c].len() >= cfg.per_medoid {
            continue;
        }
        let mut rest: Vec<usize> = (0..n).filter(|&j| !taken[j]).collect();
        rest.sort_by(|&a, &b| dist[a][m].total_cmp(&dist[b][m]).then(a.cmp(&b)));
        for j in rest.into_iter().take(cfg.per_medoid - picks[c].len()) {
            picks[c].push((j, true));
            taken[j] = true;
            backfilled += 1;
        }
    }

    let mut candidates = Vec::with_capacity(needed);
    for (c, list) in picks.into_iter().enumerate() {
        for (rank, (j, filled)) in list.into_iter().enumerate() {
            let m = members[j];
            candidates.push(CandidatePassage {
                passage: m.passage.clone(),
                intent,
                distinct_terms: m.distinct_terms.clone(),
                embedding: m.embedding.clone(),
                medoid_id: c,
                rank_to_medoid: rank,
                backfilled: filled,
            });
        }
    }
    Ok(Selection { candidates, backfilled, clustering: km, pool_size: pool.len(), clustered: n })
}
