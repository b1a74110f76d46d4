//! Rule-based fallback POS tagger. The rule lists live in
//! `data/heuristic_tagger.toml` and are compiled into the binary.

use std::collections::HashSet;

use serde::Deserialize;

use super::PosTag;

const RULES: &str = include_str!("../../data/heuristic_tagger.toml");

#[derive(Debug, Deserialize)]
struct RuleFile {
    min_stem: usize,
    noun_suffixes: Vec<String>,
    nouns: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct HeuristicTagger {
    min_stem: usize,
    suffixes: Vec<String>,
    nouns: HashSet<String>,
}

impl Default for HeuristicTagger {
    fn default() -> Self {
        let rules: RuleFile = toml::from_str(RULES).expect("bundled tagger rules parse");
        Self { min_stem: rules.min_stem, suffixes: rules.noun_suffixes, nouns: rules.nouns.into_iter().collect() }
    }
}

pub fn is_greek(c: char) -> bool {
    matches!(c, '\u{0370}'..='\u{03FF}' | '\u{1F00}'..='\u{1FFF}')
}

impl HeuristicTagger {
    pub fn tag(&self, tokens: &[String]) -> Vec<PosTag> {
        tokens.iter().enumerate().map(|(i, t)| self.tag_one(t, i > 0)).collect()
    }

    pub fn tag_one(&self, token: &str, mid_sentence: bool) -> PosTag {
        let letters: Vec<char> = token.chars().filter(|c| c.is_alphabetic()).collect();
        if letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase()) {
            return PosTag::Propn;
        }
        if mid_sentence && token.chars().next().is_some_and(|c| c.is_uppercase()) {
            return PosTag::Propn;
        }
        let lower = token.to_lowercase();
        if self.nouns.contains(&lower) {
            return PosTag::Noun;
        }
        let has_digit = token.chars().any(|c| c.is_ascii_digit());
        if token.chars().any(is_greek) || (has_digit && !letters.is_empty()) {
            return PosTag::Noun;
        }
        let n = lower.chars().count();
        for s in &self.suffixes {
            if lower.ends_with(s.as_str()) && n >= s.chars().count() + self.min_stem {
                return PosTag::Noun;
            }
        }
        PosTag::Other
    }
}
