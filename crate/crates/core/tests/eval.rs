use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use stella_core::beir::QueryMetadata;
use stella_core::eval::*;
use stella_core::querygen::{Language, QueryType};
use stella_core::selector::IntentLabel;

mod support;
use support::{crafted_ndcg_cases, f1_cases, labels, rels};

fn toy() -> Bm25Index {
    support::bm25_toy()
}

fn toks(q: &str) -> Vec<String> {
    analyze(q)
}

#[test]
fn bm25_matches_hand_evaluated_formula() {
    let idx = toy();
    assert_eq!(idx.avgdl(), 4.0);
    let idf = (1.0f64 + 1.5 / 2.5).ln();
    let q = toks("rocket nozzle");
    let d1 = 2.0 * idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 0.75));
    let d2 = idf * 4.4 / (2.0 + 1.2 * (0.25 + 0.75 * 1.5));
    let d3 = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 0.75));
    assert!((idx.score(&q, "d1").unwrap() - d1).abs() < 1e-9);
    assert!((idx.score(&q, "d2").unwrap() - d2).abs() < 1e-9);
    assert!((idx.score(&q, "d3").unwrap() - d3).abs() < 1e-9);
    let ranked = idx.search("rocket nozzle", 10);
    assert_eq!(ranked.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), vec!["d1", "d2", "d3"]);
    assert!(matches!(idx.score(&q, "d9"), Err(EvalError::UnknownPassage(_))));
}

#[test]
fn bm25_degenerate_cases() {
    let idx = toy();
    for d in ["d1", "d2", "d3"] {
        assert_eq!(idx.score(&toks("turbopump manifold"), d).unwrap(), 0.0);
    }
    assert!(idx.search("turbopump", 10).is_empty());
    let one = Bm25Index::build([("only", "rocket")], DEFAULT_K1, DEFAULT_B).unwrap();
    let idf = one.idf("rocket");
    assert!((idf - (1.0f64 + 0.5 / 1.5).ln()).abs() < 1e-15 && idf > 0.0 && idf.is_finite());
    assert!(one.score(&toks("rocket"), "only").unwrap().is_finite());
    assert!(Bm25Index::build([("a", "x")], 1.2, 1.5).is_err());
}

proptest! {
    #[test]
    fn bm25_non_decreasing_in_tf(tf in 1usize..20, filler in 0usize..20) {
        let doc = |n: usize| {
            let mut w = vec!["nozzle"; n];
            w.extend(std::iter::repeat_n("pad", filler + 20 - n));
            w.join(" ")
        };
        let (a, b) = (doc(tf), doc(tf + 1));
        let idx = Bm25Index::build([("a", a.as_str()), ("b", b.as_str()), ("c", "other words here")], DEFAULT_K1, DEFAULT_B).unwrap();
        let q = toks("nozzle");
        prop_assert!(idx.score(&q, "b").unwrap() >= idx.score(&q, "a").unwrap());
    }
}

fn brute_force(index: &DenseIndex, q: &[f32], k: usize) -> Ranked {
    let mut all: Ranked = index
        .ids
        .iter()
        .zip(&index.vectors)
        .map(|(id, v)| {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| *a as f64 * *b as f64).sum();
            let na: f64 = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = q.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
            (id.clone(), if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) })
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn dense_self_match_and_ties() {
    let idx =
        DenseIndex::new(vec!["b".into(), "a".into(), "c".into()], vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![0.3, 0.9]])
            .unwrap();
    let r = dense_retrieve(&idx, &[0.3, 0.9], 3).unwrap();
    assert_eq!(r[0].0, "c");
    assert!((r[0].1 - 1.0).abs() < 1e-9);
    let r = dense_retrieve(&idx, &[2.0, 2.0], 2).unwrap();
    assert_eq!((r[0].0.as_str(), r[1].0.as_str()), ("a", "b"));
    assert!(matches!(dense_retrieve(&idx, &[1.0], 2), Err(EvalError::DimensionMismatch { expected: 2, got: 1 })));
}

#[test]
fn dense_ten_vector_fixture_matches_full_sort() {
    let vectors: Vec<Vec<f32>> =
        (0..10).map(|i| vec![(i as f32 * 0.7).sin(), (i as f32 * 1.3).cos(), i as f32 / 10.0]).collect();
    let ids: Vec<String> = (0..10).map(|i| format!("p{i:02}")).collect();
    let idx = DenseIndex::new(ids, vectors).unwrap();
    let q = [0.2, -0.4, 0.9];
    let got = dense_retrieve(&idx, &q, 10).unwrap();
    let want = brute_force(&idx, &q, 10);
    assert_eq!(got.iter().map(|r| &r.0).collect::<Vec<_>>(), want.iter().map(|r| &r.0).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn dense_equals_brute_force(
        vecs in prop::collection::vec(prop::collection::vec(-3i8..=3, 3), 1..200),
        q in prop::collection::vec(-3i8..=3, 3),
        k in 1usize..15,
    ) {
        // Small integer coordinates force plenty of exact ties.
        let vectors: Vec<Vec<f32>> = vecs.iter().map(|v| v.iter().map(|&x| x as f32).collect()).collect();
        let ids: Vec<String> = (0..vectors.len()).map(|i| format!("p{i:03}")).collect();
        let idx = DenseIndex::new(ids, vectors).unwrap();
        let qf: Vec<f32> = q.iter().map(|&x| x as f32).collect();
        let got = dense_retrieve(&idx, &qf, k).unwrap();
        let want = brute_force(&idx, &qf, k);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.1 - w.1).abs() < 1e-9);
        }
        // Same scores, so ids agree except inside ties that the oracle resolves identically.
        let gi: Vec<&String> = got.iter().map(|r| &r.0).collect();
        let wi: Vec<&String> = want.iter().map(|r| &r.0).collect();
        let ties_only = gi.iter().zip(&wi).zip(&got).zip(&want).all(|(((a, b), g), w)| a == b || (g.1 - w.1).abs() < 1e-12);
        prop_assert!(ties_only);
    }
}

#[test]
fn ndcg_crafted_runs() {
    let cases = crafted_ndcg_cases();
    assert_eq!(cases.len(), 10);
    for (i, (run, rel, k, want)) in cases.iter().enumerate() {
        let got = ndcg_at_k(run, rel, *k);
        assert!((got - want).abs() < 1e-9, "case {i}: {got} vs {want}");
    }
    assert_eq!(ndcg_at_k(&cases[1].0, &cases[1].1, 10), 0.5);

    let run: Run = cases.iter().take(5).enumerate().map(|(i, c)| (format!("q{i}"), c.0.clone())).collect();
    let mut qrels: Qrels = cases.iter().take(5).enumerate().map(|(i, c)| (format!("q{i}"), c.1.clone())).collect();
    qrels.insert("unretrieved".into(), rels(&[("p", 1)]));
    let per = evaluate_run(&run, &qrels, 10).unwrap();
    assert_eq!(per.len(), 6);
    assert_eq!(per["unretrieved"], 0.0);
    let want = cases.iter().take(5).map(|c| c.3).sum::<f64>() / 6.0;
    assert!((mean(per.values().copied()).unwrap() - want).abs() < 1e-12);

    qrels.remove("q0");
    assert!(matches!(evaluate_run(&run, &qrels, 10), Err(EvalError::MissingQrels(q)) if q == "q0"));
}

proptest! {
    #[test]
    fn ndcg_bounded_and_single_positive_closed_form(n in 1usize..40, pos in 0usize..45, k in 1usize..20) {
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let run: Ranked = ids.iter().enumerate().map(|(i, s)| (s.clone(), -(i as f64))).collect();
        let target = format!("d{pos}");
        let v = ndcg_at_k(&run, &rels(&[(target.as_str(), 1)]), k);
        prop_assert!((0.0..=1.0).contains(&v));
        let rank = pos + 1;
        let want = if pos < n && rank <= k { 1.0 / ((rank + 1) as f64).log2() } else { 0.0 };
        prop_assert!((v - want).abs() < 1e-12);
        prop_assert_eq!(v == 1.0, pos == 0);
    }

    #[test]
    fn ndcg_one_iff_relevant_on_top(n in 2usize..20, rel_mask in prop::collection::vec(any::<bool>(), 20)) {
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let run: Ranked = ids.iter().enumerate().map(|(i, s)| (s.clone(), -(i as f64))).collect();
        let relevant: Vec<&String> = ids.iter().zip(&rel_mask).filter(|(_, m)| **m).map(|(s, _)| s).collect();
        prop_assume!(!relevant.is_empty());
        let r: HashMap<String, i32> = relevant.iter().map(|s| (s.to_string(), 1)).collect();
        let v = ndcg_at_k(&run, &r, n);
        let on_top = (0..relevant.len()).all(|i| r.contains_key(&ids[i]));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        prop_assert_eq!((v - 1.0).abs() < 1e-12, on_top);
    }
}

fn split_scores(rows: &[(&str, QueryType, IntentLabel, f64)]) -> SplitScores {
    let mut s = SplitScores::default();
    for (id, t, i, v) in rows {
        s.scores.insert(id.to_string(), *v);
        s.metadata.insert(id.to_string(), QueryMetadata { intent: Some(*i), qtype: Some(*t), ..Default::default() });
    }
    s
}

#[test]
fn report_perfect_and_gap_definition() {
    use IntentLabel::*;
    use QueryType::*;
    let perfect =
        split_scores(&[("a", Tcq, Def, 1.0), ("b", Taq, Def, 1.0), ("c", Tcq, Num, 1.0), ("d", Taq, Num, 1.0)]);
    let r = build_report("bm25", 10, &BTreeMap::from([(Language::En, perfect)]));
    assert_eq!(r.reference.overall, Some(1.0));
    assert_eq!(r.reference.gap, Some(0.0));
    assert!(r.reference.per_intent.values().flat_map(|m| m.values()).all(|c| c.mean == 1.0));

    let half = split_scores(&[("a", Tcq, Anom, 1.0), ("b", Taq, Anom, 0.5)]);
    let r = build_report("bm25", 10, &BTreeMap::from([(Language::En, half)]));
    assert_eq!(r.reference.gap, Some(0.5));
    assert_eq!(r.reference.overall, Some(0.75));
    let text = r.to_text();
    assert!(text.contains("TCQ") && text.contains("0.500"));
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"gap\":0.5"));
}

#[test]
fn cross_lingual_summary_matches_table_layout() {
    use IntentLabel::Def;
    use QueryType::*;
    // Arctic-Embed-2.0-L row of the cross-lingual table.
    let tcq = [0.661, 0.717, 0.643, 0.722, 0.677, 0.698];
    let taq = [0.345, 0.422, 0.290, 0.402, 0.317, 0.393];
    let mut splits = BTreeMap::new();
    for (i, l) in Language::TARGETS.into_iter().enumerate() {
        splits.insert(l, split_scores(&[("t", Tcq, Def, tcq[i]), ("a", Taq, Def, taq[i])]));
    }
    let r = build_report("dense", 10, &splits);
    // Published cells are rounded to 3 places, so their mean can sit up to
    // 0.0005 away from the published average.
    let close = |v: Option<f64>, want: f64| (v.unwrap() - want).abs() <= 0.001;
    assert!(close(r.cross_lingual.tcq_avg, 0.686));
    assert!(close(r.cross_lingual.taq_avg, 0.362));
    assert!(close(r.cross_lingual.all_avg, 0.524));
}

#[test]
fn qtype_falls_back_to_query_id() {
    let mut s = SplitScores::default();
    s.scores.insert("tcq:1".into(), 0.8);
    s.scores.insert("taq:1".into(), 0.2);
    let r = build_report("bm25", 10, &BTreeMap::from([(Language::En, s)]));
    assert!((r.reference.gap.unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn f1_hand_computed_fixtures() {
    for (i, (r, p, micro, macro_)) in f1_cases().into_iter().enumerate() {
        let rep = f1_validate(&labels(&p), &labels(&r)).unwrap();
        assert!((rep.micro_f1 - micro).abs() < 1e-9, "case {i} micro {}", rep.micro_f1);
        assert!((rep.macro_f1 - macro_).abs() < 1e-9, "case {i} macro {}", rep.macro_f1);
    }
    let all: Vec<IntentLabel> = (0..300).map(|i| IntentLabel::ALL[i % 5]).collect();
    let rep = f1_validate(&labels(&all), &labels(&all)).unwrap();
    assert_eq!((rep.micro_f1, rep.macro_f1), (1.0, 1.0));
    assert_eq!(rep.per_intent[&IntentLabel::Def].support, 60);

    let mut short = labels(&all);
    short.remove("p000");
    assert!(matches!(f1_validate(&short, &labels(&all)), Err(EvalError::KeyMismatch { only_pred: 0, only_ref: 1 })));
}

#[test]
fn published_per_intent_f1_average_to_published_macro() {
    // Per-intent F1 of the intent-classifier validation table.
    let per = [0.930, 0.920, 0.940, 0.910, 0.940];
    let macro_ = mean(per).unwrap();
    assert_eq!(format!("{macro_:.3}"), "0.928");
}

#[test]
fn trec_run_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.trec");
    let run: Run = BTreeMap::from([
        ("q1".to_string(), vec![("d2".to_string(), 3.5), ("d1".to_string(), 1.25)]),
        ("q2".to_string(), vec![("d9".to_string(), 0.5)]),
    ]);
    write_trec_run(&p, &run, "bm25").unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next().unwrap(), "q1 Q0 d2 1 3.500000 bm25");
    assert_eq!(read_trec_run(&p).unwrap(), run);
    std::fs::write(&p, "q1 Q0 d2 1\n").unwrap();
    assert!(matches!(read_trec_run(&p), Err(EvalError::RunParse { line: 1, .. })));
}

#[test]
fn oracle_checks() {
    for (name, check) in
        [("ndcg", support::ndcg_oracle()), ("bm25", support::bm25_formula()), ("f1", support::f1_arithmetic())]
    {
        if let Err(e) = check {
            panic!("{name}: {e}");
        }
    }
}

#[test]
fn bm25_scores_term_queries_above_paraphrases() {
    let (tcq, taq) = support::micro_benchmark_means(200);
    assert!(tcq > 0.9, "TCQ mean {tcq}");
    assert!(tcq - taq >= 0.15, "TCQ {tcq} TAQ {taq}");
    println!("{}", support::bm25_lexical_gap().unwrap());
}
