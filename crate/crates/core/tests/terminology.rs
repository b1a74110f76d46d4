use stella_core::gateway::PosTaggerClient;
use stella_core::terminology::*;

mod support;
use support::{planted_terms, terminology_corpus};

#[test]
fn planted_term_oracle() {
    support::terminology_oracle().unwrap();
}

#[test]
fn oracle_is_seed_independent() {
    for seed in [1, 2, 3] {
        let passages = terminology_corpus(seed);
        assert_eq!(passages.len(), 500);
        let cands = extract_candidates(&passages);
        assert_eq!(cands.candidates.len(), 30, "seed {seed}");
    }
}

#[test]
fn planted_counts() {
    let terms = planted_terms();
    assert_eq!(terms.len(), 30);
    let kept = terms.iter().filter(|t| t.3 == FilterOutcome::Kept).count();
    assert_eq!(kept, 12);
    for outcome in [FilterOutcome::LowFrequency, FilterOutcome::TooCommon, FilterOutcome::WrongPos] {
        assert_eq!(terms.iter().filter(|t| t.3 == outcome).count(), 6, "{outcome:?}");
    }
}

#[test]
fn thresholds_are_inclusive_on_the_kept_side() {
    let passages = terminology_corpus(30);
    let cands = extract_candidates(&passages);
    let freq = ZipfTable::from_pairs([("CFD", 3.5), ("Jet-engine", 3.51)]);
    let (_, outcomes) =
        build_dictionary_audited(&cands, &TermFilterConfig::default(), &freq, &PosTaggerClient::heuristic()).unwrap();
    // df exactly 10 and zipf exactly 3.5 both pass.
    assert_eq!(outcomes["CFD"], FilterOutcome::Kept);
    assert_eq!(outcomes["N2O4"], FilterOutcome::Kept);
    assert_eq!(outcomes["LOXT"], FilterOutcome::LowFrequency);
    assert_eq!(outcomes["Jet-engine"], FilterOutcome::TooCommon);

    let strict = TermFilterConfig { min_doc_frequency: 11, ..TermFilterConfig::default() };
    let (_, outcomes) = build_dictionary_audited(&cands, &strict, &freq, &PosTaggerClient::heuristic()).unwrap();
    assert_eq!(outcomes["CFD"], FilterOutcome::LowFrequency);
}

#[test]
fn missing_frequency_table_is_an_error() {
    let err = ZipfTable::load(std::path::Path::new("/nonexistent/wordfreq.tsv")).unwrap_err();
    assert!(matches!(err, TermError::FrequencyTableMissing { .. }));
}
