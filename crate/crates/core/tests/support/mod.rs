//! Oracle fixtures shared by the per-module integration tests and the
//! acceptance target. Every check returns a one-line detail on success and a
//! description of the first mismatch on failure.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stella_core::chunker::{chunk_document, normalize_text, ChunkConfig, Passage, Tokenizer, WhitespaceTokenizer};
use stella_core::eval::{self, analyze, f1_validate, ndcg_at_k, Bm25Index, Ranked};
use stella_core::gateway::PosTaggerClient;
use stella_core::ingest::DocumentRecord;
use stella_core::selector::{kmedoids, IntentLabel};
use stella_core::terminology::{
    build_dictionary_audited, extract_candidates, FilterOutcome, TermFilterConfig, ZipfTable,
};

pub type Check = Result<String, String>;

// ---------------------------------------------------------------------------
// Chunker

const WORDS: [&str; 16] = [
    "nozzle",
    "thrust",
    "O-ring",
    "Navier-Stokes",
    "RSRM",
    "the",
    "of",
    "N2O4",
    "3-sigma",
    "seal",
    "grain",
    "Δv",
    "joint",
    "chamber",
    "pressure",
    "1.5",
];
const PUNCT: [&str; 6] = [".", ",", ";", ":", "?", "!"];

pub fn random_text(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut s = String::new();
    for i in 0..words {
        if i > 0 {
            s.push_str(match rng.gen_range(0..40) {
                0 => "\n\n",
                1 => "\n",
                2 => "  ",
                _ => " ",
            });
        }
        s.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
        if rng.gen_bool(0.12) {
            s.push_str(PUNCT[rng.gen_range(0..PUNCT.len())]);
        }
    }
    s
}

fn token_strings(text: &str) -> Vec<String> {
    WhitespaceTokenizer.tokenize(text).iter().map(|t| text[t.start..t.end].to_string()).collect()
}

/// Chunk bound, exact overlap and lossless reconstruction for one document.
pub fn check_chunks(doc: &DocumentRecord, cfg: &ChunkConfig) -> Result<usize, String> {
    let passages = chunk_document(doc, cfg).map_err(|e| e.to_string())?;
    let source = token_strings(&normalize_text(doc.text.as_deref().unwrap_or("")));
    let chunks: Vec<Vec<String>> = passages.iter().map(|p| token_strings(&p.text)).collect();
    let mut rebuilt: Vec<String> = Vec::new();
    for (i, (p, toks)) in passages.iter().zip(&chunks).enumerate() {
        if p.token_count > cfg.chunk_size || toks.len() != p.token_count {
            return Err(format!("chunk {i}: {} tokens (recorded {})", toks.len(), p.token_count));
        }
        if p.ordinal != i || p.passage_id != Passage::make_id(&doc.doc_id, i) {
            return Err(format!("chunk {i}: bad id {}", p.passage_id));
        }
        if i == 0 {
            rebuilt.extend(toks.iter().cloned());
            continue;
        }
        let prev = &chunks[i - 1];
        if prev[prev.len() - cfg.overlap..] != toks[..cfg.overlap] {
            return Err(format!("chunk {i}: overlap with previous chunk is not {} tokens", cfg.overlap));
        }
        rebuilt.extend(toks[cfg.overlap..].iter().cloned());
    }
    if rebuilt != source {
        return Err(format!("reconstruction differs: {} vs {} tokens", rebuilt.len(), source.len()));
    }
    Ok(passages.len())
}

pub fn random_documents(n: usize, seed: u64) -> Vec<DocumentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let words = rng.gen_range(1..900);
            DocumentRecord::with_text(&format!("r{i:04}"), &random_text(&mut rng, words))
        })
        .collect()
}

pub fn chunker_properties() -> Check {
    let docs = random_documents(1000, 1000);
    let cfg = ChunkConfig::default();
    let t = Instant::now();
    let mut chunks = 0;
    for d in &docs {
        chunks += check_chunks(d, &cfg).map_err(|e| format!("{}: {e}", d.doc_id))?;
    }
    let secs = t.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Err(format!("{chunks} chunks checked in {secs:.2}s, limit 10s"));
    }
    Ok(format!("1000 docs, {chunks} chunks, {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// Terminology

/// (surface, passages containing it, zipf entry, expected outcome)
pub type PlantedTerm = (&'static str, usize, Option<f64>, FilterOutcome);

pub fn planted_terms() -> Vec<PlantedTerm> {
    use FilterOutcome::*;
    vec![
        // Passing every filter; two sit exactly on a threshold.
        ("RSRM", 12, Some(1.0), Kept),
        ("CFD", 10, Some(3.5), Kept),
        ("MMOD", 25, None, Kept),
        ("PICA", 14, None, Kept),
        ("Kapton-film", 11, None, Kept),
        ("Hall-thruster", 16, None, Kept),
        ("Mach-number", 30, Some(2.2), Kept),
        ("Reynolds-number", 13, None, Kept),
        ("N2O4", 10, None, Kept),
        ("Al2O3", 18, None, Kept),
        ("3-sigma", 12, None, Kept),
        ("500kg", 11, None, Kept),
        // Below the document-frequency floor only.
        ("LOXT", 9, None, LowFrequency),
        ("ZQRA", 1, None, LowFrequency),
        ("MLIX", 5, Some(1.0), LowFrequency),
        ("Inconel-plate", 9, None, LowFrequency),
        ("H2O2", 3, None, LowFrequency),
        ("Vortex-generator", 8, None, LowFrequency),
        // Too common only.
        ("NASA", 20, Some(4.6), TooCommon),
        ("USA", 15, Some(5.1), TooCommon),
        ("GPS", 12, Some(4.0), TooCommon),
        ("Air-flow", 11, Some(3.8), TooCommon),
        ("CO2", 10, Some(4.2), TooCommon),
        ("Jet-engine", 14, Some(3.51), TooCommon),
        // Head is not a noun only.
        ("O-ring", 17, None, WrongPos),
        ("Non-synchronous", 12, None, WrongPos),
        ("Quasi-static", 10, None, WrongPos),
        ("Anti-symmetric", 11, None, WrongPos),
        ("Semi-rigid", 13, None, WrongPos),
        ("Bi-directional", 10, None, WrongPos),
    ]
}

const FILLER: [&str; 24] = [
    "the",
    "test",
    "article",
    "was",
    "inspected",
    "after",
    "each",
    "firing",
    "and",
    "results",
    "were",
    "logged",
    "by",
    "engineers",
    "under",
    "nominal",
    "conditions",
    "with",
    "margins",
    "reviewed",
    "before",
    "flight",
    "a",
    "panel",
];

/// 500 passages of lowercase filler with each planted term placed in exactly
/// the listed number of distinct passages (some passages repeat a term).
pub fn terminology_corpus(seed: u64) -> Vec<Passage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut texts: Vec<Vec<String>> = (0..500)
        .map(|_| (0..rng.gen_range(20..60)).map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string()).collect())
        .collect();
    for (surface, df, _, _) in planted_terms() {
        let mut hosts: Vec<usize> = (0..500).collect();
        for i in 0..df {
            let j = rng.gen_range(i..500);
            hosts.swap(i, j);
        }
        for &h in &hosts[..df] {
            let words = &mut texts[h];
            let at = rng.gen_range(1..words.len());
            let tok = match rng.gen_range(0..4) {
                0 => format!("({surface})"),
                1 => format!("{surface},"),
                2 => format!("{surface}'s"),
                _ => surface.to_string(),
            };
            words.insert(at, tok);
            if rng.gen_bool(0.2) {
                words.push(format!("{surface}."));
            }
        }
    }
    texts
        .into_iter()
        .enumerate()
        .map(|(i, words)| {
            let text = format!("The {}.", words.join(" "));
            Passage {
                passage_id: Passage::make_id(&format!("t{:03}", i / 5), i % 5),
                doc_id: format!("t{:03}", i / 5),
                ordinal: i % 5,
                token_count: stella_core::chunker::count_tokens(&text),
                text,
                degenerate: false,
            }
        })
        .collect()
}

pub fn terminology_oracle() -> Check {
    let terms = planted_terms();
    let passages = terminology_corpus(30);
    let mut zipf: Vec<(&str, f64)> = terms.iter().filter_map(|t| t.2.map(|z| (t.0, z))).collect();
    zipf.extend(FILLER.iter().map(|w| (*w, 5.0)));
    let freq = ZipfTable::from_pairs(zipf);
    let cfg = TermFilterConfig::default();
    let candidates = extract_candidates(&passages);

    let planted: BTreeMap<&str, &PlantedTerm> = terms.iter().map(|t| (t.0, t)).collect();
    let found: Vec<&String> = candidates.candidates.keys().collect();
    if found.len() != planted.len() || found.iter().any(|s| !planted.contains_key(s.as_str())) {
        return Err(format!("candidate set differs from the 30 planted terms: {found:?}"));
    }
    for (s, c) in &candidates.candidates {
        if c.doc_frequency != planted[s.as_str()].1 {
            return Err(format!("{s}: doc frequency {} vs planted {}", c.doc_frequency, planted[s.as_str()].1));
        }
    }
    let (dict, outcomes) =
        build_dictionary_audited(&candidates, &cfg, &freq, &PosTaggerClient::heuristic()).map_err(|e| e.to_string())?;
    for (surface, _, _, want) in &terms {
        let got = outcomes.get(*surface).copied();
        if got != Some(*want) {
            return Err(format!("{surface}: outcome {got:?}, expected {want:?}"));
        }
    }
    let kept: Vec<&str> = dict.entries().iter().map(|e| e.surface.as_str()).collect();
    let mut want: Vec<&str> = terms.iter().filter(|t| t.3 == FilterOutcome::Kept).map(|t| t.0).collect();
    want.sort();
    if kept != want {
        return Err(format!("dictionary {kept:?}, expected {want:?}"));
    }
    Ok(format!("{} of 30 planted terms kept, every rejection on its planted filter", kept.len()))
}

// ---------------------------------------------------------------------------
// k-medoids

pub fn cos_dist(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).max(0.0)
}

fn subsets(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..n {
        cur.push(i);
        subsets(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Exhaustive minimum of total deviation over every medoid subset.
pub fn brute_force(points: &[Vec<f32>], k: usize) -> f64 {
    let mut all = Vec::new();
    subsets(points.len(), k, 0, &mut Vec::new(), &mut all);
    all.iter()
        .map(|m| {
            points.iter().map(|p| m.iter().map(|&i| cos_dist(p, &points[i])).fold(f64::INFINITY, f64::min)).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Unit-norm directions with pairwise cosine below 0.5.
fn separated_centers(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f32>> {
    let mut out: Vec<Vec<f32>> = Vec::new();
    while out.len() < k {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n < 0.1 {
            continue;
        }
        let v: Vec<f32> = v.iter().map(|x| x / n).collect();
        if out.iter().all(|c| c.iter().zip(&v).map(|(a, b)| a * b).sum::<f32>() < 0.5) {
            out.push(v);
        }
    }
    out
}

/// Random grouped point sets with n <= 12 and k <= 3.
pub fn kmedoids_fixtures(count: usize, seed: u64) -> Vec<(Vec<Vec<f32>>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(3..=12);
            let k = rng.gen_range(1..=3.min(n));
            let dim = rng.gen_range(2..=4);
            let spread = rng.gen_range(0.02..0.2);
            let centers = separated_centers(&mut rng, k, dim);
            let pts =
                (0..n).map(|i| centers[i % k].iter().map(|c| c + rng.gen_range(-spread..spread)).collect()).collect();
            (pts, k)
        })
        .collect()
}

pub fn kmedoids_optimality(count: usize, seed: u64) -> Check {
    for (i, (pts, k)) in kmedoids_fixtures(count, seed).iter().enumerate() {
        let r = kmedoids(pts, *k).map_err(|e| format!("fixture {i}: {e}"))?;
        let opt = brute_force(pts, *k);
        if (r.total_deviation - opt).abs() > 1e-9 {
            return Err(format!("fixture {i} (n={}, k={k}): PAM {} vs optimum {opt}", pts.len(), r.total_deviation));
        }
    }
    Ok(format!("{count} fixtures equal the exhaustive optimum"))
}

// ---------------------------------------------------------------------------
// Retrieval metrics

fn ranked(ids: &[&str]) -> Ranked {
    ids.iter().enumerate().map(|(i, s)| (s.to_string(), 100.0 - i as f64)).collect()
}

pub fn rels(pairs: &[(&str, i32)]) -> HashMap<String, i32> {
    pairs.iter().map(|(p, r)| (p.to_string(), *r)).collect()
}

/// Ten crafted runs with hand-computed nDCG: (run, qrels, k, expected).
pub fn crafted_ndcg_cases() -> Vec<(Ranked, HashMap<String, i32>, usize, f64)> {
    let l = |x: f64| x.log2();
    let filler: Vec<String> = (0..12).map(|i| format!("x{i}")).collect();
    let at = |rank: usize| -> Ranked {
        let mut ids: Vec<&str> = filler.iter().map(String::as_str).collect();
        ids.insert(rank - 1, "p");
        ranked(&ids)
    };
    vec![
        (at(1), rels(&[("p", 1)]), 10, 1.0),
        (at(3), rels(&[("p", 1)]), 10, 0.5),
        (at(2), rels(&[("p", 1)]), 10, 1.0 / l(3.0)),
        (at(10), rels(&[("p", 1)]), 10, 1.0 / l(11.0)),
        (at(11), rels(&[("p", 1)]), 10, 0.0),
        (ranked(&["x", "y"]), rels(&[("p", 1)]), 10, 0.0),
        (ranked(&["a", "b", "x"]), rels(&[("a", 1), ("b", 1)]), 10, 1.0),
        (
            ranked(&["x", "a", "y", "b"]),
            rels(&[("a", 1), ("b", 1)]),
            10,
            (1.0 / l(3.0) + 1.0 / l(5.0)) / (1.0 + 1.0 / l(3.0)),
        ),
        (ranked(&["b", "a"]), rels(&[("a", 2), ("b", 1)]), 10, (1.0 + 2.0 / l(3.0)) / (2.0 + 1.0 / l(3.0))),
        (at(5), rels(&[("p", 1)]), 5, 1.0 / l(6.0)),
    ]
}

pub fn ndcg_oracle() -> Check {
    let cases = crafted_ndcg_cases();
    for (i, (run, rel, k, want)) in cases.iter().enumerate() {
        let got = ndcg_at_k(run, rel, *k);
        if (got - want).abs() >= 1e-9 {
            return Err(format!("run {i}: {got} vs {want}"));
        }
    }
    let rank3 = ndcg_at_k(&cases[1].0, &cases[1].1, 10);
    if rank3 != 0.5 {
        return Err(format!("rank-3 single positive gives {rank3}, not exactly 0.5"));
    }
    Ok(format!("{} runs within 1e-9, rank-3 = {rank3}", cases.len()))
}

pub fn bm25_toy() -> Bm25Index {
    Bm25Index::build(
        [("d1", "rocket nozzle design"), ("d2", "Nozzle erosion in the nozzle throat."), ("d3", "solid rocket motor")],
        eval::DEFAULT_K1,
        eval::DEFAULT_B,
    )
    .expect("toy corpus indexes")
}

pub fn bm25_formula() -> Check {
    let idx = bm25_toy();
    // Both query terms occur in 2 of 3 documents; avgdl = 4.
    let idf = (1.0f64 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5)).ln();
    let norm = |dl: f64| 1.2 * (1.0 - 0.75 + 0.75 * dl / 4.0);
    let term = |tf: f64, dl: f64| idf * tf * 2.2 / (tf + norm(dl));
    let want = [("d1", 2.0 * term(1.0, 3.0)), ("d2", term(2.0, 6.0)), ("d3", term(1.0, 3.0))];
    let q = analyze("rocket nozzle");
    let mut worst = 0.0f64;
    for (id, w) in want {
        let got = idx.score(&q, id).map_err(|e| e.to_string())?;
        worst = worst.max((got - w).abs());
        if (got - w).abs() >= 1e-9 {
            return Err(format!("{id}: {got} vs {w}"));
        }
    }
    Ok(format!("3 documents, max error {worst:.1e}"))
}

const SHARED: [&str; 30] = [
    "pressure",
    "temperature",
    "stage",
    "flight",
    "design",
    "loads",
    "margin",
    "vehicle",
    "structure",
    "thermal",
    "system",
    "test",
    "mission",
    "engine",
    "control",
    "performance",
    "assembly",
    "interface",
    "analysis",
    "data",
    "hardware",
    "component",
    "operation",
    "failure",
    "model",
    "module",
    "requirement",
    "support",
    "power",
    "sensor",
];

/// Paraphrase vocabulary that never occurs in the micro corpus.
const PARAPHRASE: [&str; 8] = ["steady", "keeps", "bounded", "regulates", "onboard", "safely", "unit", "craft"];

/// 200 passages; the first 100 each introduce one unique term. Each of those
/// gets a TCQ naming the term and a TAQ describing its role: one word of the
/// passage's own context plus paraphrase vocabulary absent from the corpus. Returns (corpus, [(query id, text, relevant id)]).
pub fn micro_benchmark(seed: u64) -> (Vec<(String, String)>, Vec<(String, String, String)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<&'static str> {
        (0..n).map(|_| SHARED[rng.gen_range(0..SHARED.len())]).collect()
    };
    let mut corpus = Vec::new();
    let mut queries = Vec::new();
    for i in 0..200 {
        let id = format!("m{i:03}");
        let ctx = pick(12, &mut rng);
        if i < 100 {
            let term = format!("QX{i:03}-{}", ["valve", "seal", "bracket", "liner"][i % 4]);
            let text = format!(
                "The {term} governs {} {} in the {} and the {term} limits {} {} during {} {}.",
                ctx[0], ctx[1], ctx[2], ctx[3], ctx[4], ctx[5], ctx[6]
            );
            corpus.push((id.clone(), text));
            queries.push((format!("tcq:{id}"), format!("What does the {term} govern?"), id.clone()));
            queries.push((
                format!("taq:{id}"),
                {
                    let p: Vec<&str> = (0..3).map(|_| PARAPHRASE[rng.gen_range(0..PARAPHRASE.len())]).collect();
                    format!("Which {} {} the {} {}?", p[0], p[1], ctx[rng.gen_range(0..3)], p[2])
                },
                id,
            ));
        } else {
            corpus.push((
                id,
                format!(
                    "The {} {} {} of the {} {} {} {} {} was reviewed.",
                    ctx[0], ctx[1], ctx[2], ctx[3], ctx[4], ctx[5], ctx[6], ctx[7]
                ),
            ));
        }
    }
    (corpus, queries)
}

/// Mean nDCG@10 of TCQ and TAQ under BM25 on the micro-benchmark.
pub fn micro_benchmark_means(seed: u64) -> (f64, f64) {
    let (corpus, queries) = micro_benchmark(seed);
    let idx = Bm25Index::build(corpus.iter().map(|(i, t)| (i.as_str(), t.as_str())), eval::DEFAULT_K1, eval::DEFAULT_B)
        .expect("micro corpus indexes");
    let mut tcq = Vec::new();
    let mut taq = Vec::new();
    for (qid, text, rel) in &queries {
        let v = ndcg_at_k(&idx.search(text, 10), &rels(&[(rel.as_str(), 1)]), 10);
        if qid.starts_with("tcq") {
            tcq.push(v);
        } else {
            taq.push(v);
        }
    }
    (eval::mean(tcq).unwrap_or(0.0), eval::mean(taq).unwrap_or(0.0))
}

pub fn bm25_lexical_gap() -> Check {
    let (tcq, taq) = micro_benchmark_means(200);
    let gap = tcq - taq;
    let line = format!("200-passage substitute: TCQ {tcq:.3}, TAQ {taq:.3}, gap {gap:.3} (need >= 0.15)");
    if gap >= 0.15 {
        Ok(line)
    } else {
        Err(line)
    }
}

// ---------------------------------------------------------------------------
// Intent validation

pub fn labels(xs: &[IntentLabel]) -> BTreeMap<String, IntentLabel> {
    xs.iter().enumerate().map(|(i, l)| (format!("p{i:03}"), *l)).collect()
}

/// Five confusion-matrix fixtures: (reference, prediction, micro, macro).
pub fn f1_cases() -> Vec<(Vec<IntentLabel>, Vec<IntentLabel>, f64, f64)> {
    use IntentLabel::*;
    vec![
        (vec![Def, Def, Num, Num], vec![Def, Num, Num, Num], 0.75, (2.0 / 3.0 + 0.8) / 2.0),
        (vec![Def, Num, Proc, Def, Num, Proc], vec![Def, Proc, Proc, Num, Num, Def], 0.5, 0.5),
        (vec![Def, Def, Def], vec![Def, Def, Anom], 2.0 / 3.0, 0.4),
        (vec![Def, Num], vec![Num, Def], 0.0, 0.0),
        (
            vec![Def, Def, Def, Num, Num, Proc, Proc, Comp, Comp, Anom],
            vec![Def, Def, Num, Num, Num, Proc, Comp, Comp, Comp, Anom],
            0.8,
            (0.8 + 0.8 + 2.0 / 3.0 + 0.8 + 1.0) / 5.0,
        ),
    ]
}

pub fn f1_arithmetic() -> Check {
    for (i, (r, p, micro, macro_)) in f1_cases().into_iter().enumerate() {
        let rep = f1_validate(&labels(&p), &labels(&r)).map_err(|e| e.to_string())?;
        if (rep.micro_f1 - micro).abs() >= 1e-9 || (rep.macro_f1 - macro_).abs() >= 1e-9 {
            return Err(format!("fixture {i}: {}/{} vs {micro}/{macro_}", rep.micro_f1, rep.macro_f1));
        }
    }
    let all: Vec<IntentLabel> = (0..300).map(|i| IntentLabel::ALL[i % 5]).collect();
    let rep = f1_validate(&labels(&all), &labels(&all)).map_err(|e| e.to_string())?;
    if (rep.micro_f1, rep.macro_f1) != (1.0, 1.0) {
        return Err(format!("perfect agreement gives {}/{}", rep.micro_f1, rep.macro_f1));
    }
    Ok("5 fixtures within 1e-9, perfect agreement 1.0/1.0".into())
}
