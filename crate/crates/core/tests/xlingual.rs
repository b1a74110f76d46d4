use std::collections::BTreeMap;
use std::sync::Arc;

use stella_core::gateway::mock::{ScriptedChat, TableEmbedder};
use stella_core::gateway::{ChatClient, EmbedClient, Gateway, RetryPolicy};
use stella_core::querygen::{Language, QueryRecord, QueryType};
use stella_core::selector::IntentLabel;
use stella_core::terminology::TerminologyDictionary;
use stella_core::xlingual::*;

fn query(id: &str, qtype: QueryType, text: &str) -> QueryRecord {
    QueryRecord {
        query_id: id.into(),
        passage_id: "d#0".into(),
        doc_id: "d".into(),
        qtype,
        intent: IntentLabel::Def,
        language: Language::En,
        final_query: text.into(),
        trace: Vec::new(),
        identified_terms: Vec::new(),
        repair_rounds: 0,
        valid: true,
        violations: Vec::new(),
    }
}

fn dict() -> TerminologyDictionary {
    TerminologyDictionary::from_surfaces(["RSRM", "propellant", "O-ring"])
}

fn scripted(script: ScriptedChat) -> (ChatClient, Arc<ScriptedChat>) {
    let s = Arc::new(script);
    (ChatClient::new(s.clone(), RetryPolicy::immediate(0), 2), s)
}

fn record(id: &str, lang: Language, qtype: QueryType, text: &str, kept: &[&str]) -> TranslationRecord {
    TranslationRecord {
        query_id: id.into(),
        qtype,
        language: lang,
        translated_query: text.into(),
        kept_terms: kept.iter().map(|s| s.to_string()).collect(),
        back_translation: None,
        bt_cosine: None,
        term_check_passed: true,
        repair_rounds: 0,
        missing_terms: Vec::new(),
    }
}

#[test]
fn tcq_korean_keeps_rsrm_and_propellant() {
    let gw = Gateway::offline(16, 2);
    let q = query("tcq:d#0", QueryType::Tcq, "How does the RSRM propellant grain geometry affect thrust?");
    let t = translate_query(&q, Language::Ko, &dict(), &gw.chat, 3).unwrap();
    assert_eq!(t.kept_terms, vec!["RSRM", "propellant"]);
    assert!(t.translated_query.contains("RSRM") && t.translated_query.contains("propellant"));
    assert!(!t.translated_query.contains("geometry"));
    assert!(t.term_check_passed);
    assert_eq!(t.repair_rounds, 0);
}

#[test]
fn prompt_carries_critical_rule_only_for_tcq() {
    let (chat, s) = scripted(ScriptedChat::always("번역 RSRM propellant"));
    let tcq = query("tcq:a", QueryType::Tcq, "How does the RSRM propellant burn?");
    translate_query(&tcq, Language::Ko, &dict(), &chat, 0).unwrap();
    let taq = query("taq:a", QueryType::Taq, "How does the solid motor fuel burn?");
    let t = translate_query(&taq, Language::Fr, &dict(), &chat, 0).unwrap();
    assert!(t.kept_terms.is_empty());
    let reqs = s.requests();
    assert!(reqs[0].user_prompt.contains("CRITICAL RULE FOR THIS REQUEST"));
    assert!(reqs[0].user_prompt.contains("Keep them in their original English form: RSRM, propellant."));
    assert!(reqs[0].system_prompt.contains("into Korean."));
    assert!(!reqs[1].user_prompt.contains("CRITICAL RULE"));
    assert!(reqs[1].user_prompt.contains("No specific terms to keep for this request."));
    assert!(reqs[1].user_prompt.contains("Définissez"));
}

#[test]
fn taq_translation_has_no_dictionary_surfaces() {
    let gw = Gateway::offline(16, 2);
    let q = query("taq:d#0", QueryType::Taq, "How does the solid motor fuel grain geometry affect thrust?");
    let t = translate_query(&q, Language::Ja, &dict(), &gw.chat, 3).unwrap();
    assert!(t.kept_terms.is_empty());
    assert!(dict().find_terms_in(&t.translated_query).is_empty());
}

#[test]
fn dropped_term_is_repaired_once() {
    let (chat, s) = scripted(ScriptedChat::sequence(["추진제 propellant 형상", "RSRM propellant 형상"]));
    let q = query("tcq:x", QueryType::Tcq, "How does the RSRM propellant grain geometry affect thrust?");
    let t = translate_query(&q, Language::Ko, &dict(), &chat, 3).unwrap();
    assert!(t.term_check_passed);
    assert_eq!(t.repair_rounds, 1);
    assert!(s.requests()[1].user_prompt.contains("did not keep these terms verbatim: RSRM."));
}

#[test]
fn persistent_loss_is_flagged() {
    let (chat, s) = scripted(ScriptedChat::always("rsrm propellant"));
    let q = query("tcq:x", QueryType::Tcq, "How does the RSRM propellant grain geometry affect thrust?");
    match translate_query(&q, Language::Th, &dict(), &chat, 3) {
        Err(XlingualError::TermPreservationFailure(rec)) => {
            assert!(!rec.term_check_passed);
            assert_eq!(rec.missing_terms, vec!["RSRM"]);
            assert_eq!(rec.repair_rounds, 3);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(s.calls(), 4);
}

#[test]
fn translate_all_covers_every_pair() {
    let gw = Gateway::offline(16, 4);
    let qs = vec![
        query("tcq:1", QueryType::Tcq, "How does the RSRM propellant burn?"),
        query("taq:1", QueryType::Taq, "How does the solid fuel burn?"),
    ];
    let b = translate_all(&qs, &Language::TARGETS, &dict(), &gw.chat, 3);
    assert_eq!(b.records.len(), 12);
    assert!(b.flagged.is_empty() && b.errors.is_empty());
    assert_eq!(audit_term_preservation(&b.records).checked, 6);
}

#[test]
fn identical_round_trip_scores_one() {
    let gw = Gateway::offline(32, 2);
    let q = query("tcq:1", QueryType::Tcq, "How does the RSRM propellant grain geometry affect thrust?");
    let mut recs = vec![translate_query(&q, Language::Fr, &dict(), &gw.chat, 3).unwrap()];
    let orig = BTreeMap::from([(q.query_id.clone(), q.final_query.clone())]);
    let report = audit_back_translation(&mut recs, &orig, &gw.chat, &gw.embed, BT_THRESHOLD);
    assert_eq!(recs[0].back_translation.as_deref(), Some(q.final_query.as_str()));
    assert!((recs[0].bt_cosine.unwrap() - 1.0).abs() < 1e-6);
    assert!(!report.languages[&Language::Fr].warn);
}

#[test]
fn scripted_round_trips_give_hand_computed_mean() {
    let cosines = [0.99, 0.98, 0.97, 0.99, 0.96, 0.95, 0.99, 0.98, 0.97, 0.0];
    let mut script = ScriptedChat::always("unused");
    let mut embedder = TableEmbedder::new();
    let mut recs = Vec::new();
    let mut orig = BTreeMap::new();
    for (i, c) in cosines.iter().enumerate() {
        let (src, bt) = (format!("original {i}"), format!("round trip {i}"));
        script = script.with_rule(&format!("tr-{i}"), [bt.clone()]);
        let c = *c as f32;
        embedder = embedder.insert(&src, vec![1.0, 0.0]).insert(&bt, vec![c, (1.0 - c * c).sqrt()]);
        recs.push(record(&format!("q{i}"), Language::Id, QueryType::Taq, &format!("tr-{i}"), &[]));
        orig.insert(format!("q{i}"), src);
    }
    let (chat, _) = scripted(script);
    let embed = EmbedClient::new(Arc::new(embedder), RetryPolicy::immediate(0), 2, 8);
    let report = audit_back_translation(&mut recs, &orig, &chat, &embed, BT_THRESHOLD);
    let id = &report.languages[&Language::Id];
    let expected = (0.99 + 0.98 + 0.97 + 0.99 + 0.96 + 0.95 + 0.99 + 0.98 + 0.97) / 10.0;
    assert!((id.mean_cosine.unwrap() - expected).abs() < 1e-6);
    assert_eq!(id.scored, 10);
    assert_eq!(id.below_threshold, 1);
    assert!((id.fraction_below - 0.1).abs() < 1e-12);
    assert!(id.warn, "mean {expected} is below 0.93");
    assert!(recs[9].bt_cosine.unwrap().abs() < 1e-6);
}

#[test]
fn orthogonal_round_trip_scores_zero_and_errors_are_counted() {
    let (chat, _) = scripted(ScriptedChat::always("back"));
    let embed = EmbedClient::new(
        Arc::new(TableEmbedder::new().insert("src", vec![1.0, 0.0]).insert("back", vec![0.0, 1.0])),
        RetryPolicy::immediate(0),
        1,
        8,
    );
    let mut recs =
        vec![record("a", Language::Zh, QueryType::Taq, "x", &[]), record("b", Language::Zh, QueryType::Taq, "y", &[])];
    let orig = BTreeMap::from([("a".to_string(), "src".to_string()), ("b".to_string(), "not embeddable".to_string())]);
    let report = audit_back_translation(&mut recs, &orig, &chat, &embed, BT_THRESHOLD);
    let zh = &report.languages[&Language::Zh];
    assert_eq!((zh.records, zh.scored, zh.errors), (2, 1, 1));
    assert_eq!(recs[0].bt_cosine, Some(0.0));
    assert!(recs[1].bt_cosine.is_none());
    assert_eq!(report.warnings(), vec![Language::Zh]);
}

#[test]
fn term_audit_cases() {
    let ok = record("q", Language::Ko, QueryType::Tcq, "RSRM 추진제", &["RSRM"]);
    assert!(audit_term_preservation(std::slice::from_ref(&ok)).all_passed());
    let lower = record("q", Language::Ko, QueryType::Tcq, "rsrm 추진제", &["RSRM"]);
    assert_eq!(audit_term_preservation(&[lower]).failures.len(), 1);

    let mut recs = Vec::new();
    let planted = [6usize, 42, 93];
    for i in 0..100 {
        let qtype = if i % 4 == 3 { QueryType::Taq } else { QueryType::Tcq };
        let text = if planted.contains(&i) { "O-ring 은 손상".to_string() } else { format!("RSRM O-ring {i}") };
        let mut r = record(&format!("q{i}"), Language::Ko, qtype, &text, &["RSRM", "O-ring"]);
        if qtype == QueryType::Taq {
            r.kept_terms.clear();
            r.translated_query = "완전 번역".into();
        }
        recs.push(r);
    }
    let report = audit_term_preservation(&recs);
    let ids: Vec<&str> = report.failures.iter().map(|f| f.query_id.as_str()).collect();
    assert_eq!(ids, vec!["q6", "q42", "q93"]);
    assert_eq!(report.skipped_taq, 25);
    assert_eq!(report.checked, 75);
    assert!(report.failures.iter().all(|f| f.missing == vec!["RSRM"]));
}
