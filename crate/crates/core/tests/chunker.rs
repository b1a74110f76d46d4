use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stella_core::chunker::*;
use stella_core::ingest::DocumentRecord;

mod support;
use support::random_text;

fn check_document(doc: &DocumentRecord, cfg: &ChunkConfig) -> Result<(), String> {
    support::check_chunks(doc, cfg).map(|_| ())
}

#[test]
fn thousand_random_documents() {
    let detail = support::chunker_properties().unwrap();
    assert!(detail.starts_with("1000 docs"), "{detail}");
}

#[test]
fn exact_multiple_boundaries() {
    let cfg = ChunkConfig::default();
    for n in [1usize, 99, 100, 101, 180, 181, 260, 261] {
        let text = (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let doc = DocumentRecord::with_text("b", &text);
        check_document(&doc, &cfg).unwrap_or_else(|e| panic!("{n}: {e}"));
        let expected = if n <= 100 { 1 } else { 1 + (n - 100).div_ceil(80) };
        assert_eq!(chunk_document(&doc, &cfg).unwrap().len(), expected, "{n} tokens");
    }
}

#[test]
fn empty_document_is_an_error() {
    let doc = DocumentRecord::with_text("e", " \n\t ");
    assert!(matches!(chunk_document(&doc, &ChunkConfig::default()), Err(ChunkError::EmptyDocument(id)) if id == "e"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn invariants_hold_for_any_size_and_overlap(
        seed in any::<u64>(),
        words in 1usize..600,
        size in 8usize..150,
        overlap_frac in 0.0f64..0.9,
    ) {
        let overlap = ((size as f64) * overlap_frac) as usize;
        let cfg = ChunkConfig { chunk_size: size, overlap, ..ChunkConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = DocumentRecord::with_text("p", &random_text(&mut rng, words));
        prop_assert_eq!(check_document(&doc, &cfg), Ok(()));
    }

    #[test]
    fn arbitrary_unicode_never_panics(text in "\\PC{0,400}") {
        let doc = DocumentRecord::with_text("u", &text);
        match chunk_document(&doc, &ChunkConfig::default()) {
            Ok(_) => prop_assert_eq!(check_document(&doc, &ChunkConfig::default()), Ok(())),
            Err(ChunkError::EmptyDocument(_)) => prop_assert!(count_tokens(&normalize_text(&text)) == 0),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}
