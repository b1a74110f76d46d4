//! Token-bounded recursive chunking of document text into passages.
//!
//! Text is normalized, tokenized into spans, and cut into windows of at most
//! `chunk_size` tokens. Each cut is placed at the strongest separator available
//! inside the window (paragraph, line, sentence end, word, character), and every
//! window after the first starts exactly `overlap` tokens before the previous
//! window's end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::DocumentRecord;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("document {0} has no text after normalization")]
    EmptyDocument(String),
    #[error("invalid chunk config: {0}")]
    InvalidConfig(String),
}

/// A byte span of one token inside the text it was produced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn text<'a>(&self, source: &'a str) -> &'a str {
        &source[self.start..self.end]
    }
}

/// Pluggable token definition. Implementations must be deterministic and
/// return non-overlapping spans in ascending order.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Token>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Unicode-whitespace split; leading and trailing punctuation characters of each
/// whitespace-delimited word become tokens of their own. Intra-word punctuation
/// (hyphens, dots, apostrophes) stays attached, so `Navier-Stokes` is one token.
#[derive(Debug, Default, Clone, Copy)]
pub struct WhitespaceTokenizer;

pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{00AB}'
                | '\u{00BB}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{2026}'
                | '\u{00B7}'
                | '\u{3001}'
                | '\u{3002}'
                | '\u{FF0C}'
                | '\u{FF1F}'
                | '\u{FF01}'
        )
}

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = word_start.take() {
                    split_word(text, s, i, &mut out);
                }
            } else if word_start.is_none() {
                word_start = Some(i);
            }
        }
        if let Some(s) = word_start {
            split_word(text, s, text.len(), &mut out);
        }
        out
    }
}

fn split_word(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let word = &text[start..end];
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    let mut lo = 0;
    while lo < chars.len() && is_punct(chars[lo].1) {
        lo += 1;
    }
    if lo == chars.len() {
        for (off, c) in &chars {
            out.push(Token { start: start + off, end: start + off + c.len_utf8() });
        }
        return;
    }
    let mut hi = chars.len();
    while hi > lo && is_punct(chars[hi - 1].1) {
        hi -= 1;
    }
    for (off, c) in &chars[..lo] {
        out.push(Token { start: start + off, end: start + off + c.len_utf8() });
    }
    let core_end = if hi == chars.len() { word.len() } else { chars[hi].0 };
    out.push(Token { start: start + chars[lo].0, end: start + core_end });
    for (off, c) in &chars[hi..] {
        out.push(Token { start: start + off, end: start + off + c.len_utf8() });
    }
}

/// Token count under the default tokenizer.
pub fn count_tokens(text: &str) -> usize {
    WhitespaceTokenizer.count(text)
}

/// Collapses horizontal whitespace, strips control characters, and keeps at most
/// one blank line between paragraphs.
pub fn normalize_text(text: &str) -> String {
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut lines: Vec<String> = Vec::new();
    for raw in text.split('\n') {
        let mut line = String::with_capacity(raw.len());
        let mut pending_space = false;
        for c in raw.chars() {
            if c.is_whitespace() {
                pending_space = true;
            } else if c.is_control() {
                continue;
            } else {
                if pending_space && !line.is_empty() {
                    line.push(' ');
                }
                pending_space = false;
                line.push(c);
            }
        }
        lines.push(line);
    }
    let mut out = String::with_capacity(text.len());
    let mut blank_run = 0;
    for line in lines {
        if line.is_empty() {
            blank_run += 1;
            continue;
        }
        if !out.is_empty() {
            out.push_str(if blank_run > 0 { "\n\n" } else { "\n" });
        }
        blank_run = 0;
        out.push_str(&line);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub token_count: usize,
    /// Set when the cut had to fall inside a whitespace-delimited word.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl Passage {
    pub fn make_id(doc_id: &str, ordinal: usize) -> String {
        format!("{doc_id}#{ordinal}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    pub separator_hierarchy: Vec<String>,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_size: 100,
            overlap: 20,
            separator_hierarchy: ["\n\n", "\n", ". ", " ", ""].iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ChunkConfig {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, ChunkError> {
        let cfg = Self { chunk_size, overlap, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_size == 0 {
            return Err(ChunkError::InvalidConfig("chunk_size must be positive".into()));
        }
        if self.overlap >= self.chunk_size {
            return Err(ChunkError::InvalidConfig(format!(
                "overlap {} must be smaller than chunk_size {}",
                self.overlap, self.chunk_size
            )));
        }
        Ok(())
    }
}

/// Separator levels understood by the boundary classifier. The level of a gap
/// between two tokens is the position of the first separator in the hierarchy
/// that the gap realizes; lower positions are stronger.
fn boundary_level(text: &str, prev: Token, next: Token, hierarchy: &[String]) -> usize {
    let gap = &text[prev.end..next.start];
    let prev_text = prev.text(text);
    for (level, sep) in hierarchy.iter().enumerate() {
        let hit = match sep.as_str() {
            "\n\n" => gap.contains("\n\n"),
            "\n" => gap.contains('\n'),
            ". " => !gap.is_empty() && matches!(prev_text, "." | "?" | "!"),
            " " => !gap.is_empty(),
            "" => true,
            other => gap.contains(other),
        };
        if hit {
            return level;
        }
    }
    hierarchy.len()
}

pub fn chunk_document(doc: &DocumentRecord, cfg: &ChunkConfig) -> Result<Vec<Passage>, ChunkError> {
    chunk_document_with(doc, cfg, &WhitespaceTokenizer)
}

pub fn chunk_document_with(
    doc: &DocumentRecord,
    cfg: &ChunkConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Passage>, ChunkError> {
    cfg.validate()?;
    let text = normalize_text(doc.text.as_deref().unwrap_or(""));
    let tokens = tokenizer.tokenize(&text);
    if tokens.is_empty() {
        return Err(ChunkError::EmptyDocument(doc.doc_id.clone()));
    }
    let windows = plan_windows(&text, &tokens, cfg);
    Ok(windows
        .into_iter()
        .enumerate()
        .map(|(ordinal, w)| Passage {
            passage_id: Passage::make_id(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            text: text[tokens[w.start].start..tokens[w.end - 1].end].to_string(),
            token_count: w.end - w.start,
            degenerate: w.degenerate,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub degenerate: bool,
}

/// Token-index windows for `tokens` (which must be spans of `text`).
pub fn plan_windows(text: &str, tokens: &[Token], cfg: &ChunkConfig) -> Vec<Window> {
    let n = tokens.len();
    let word_level = cfg.separator_hierarchy.iter().position(|s| s == " ");
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        if n - start <= cfg.chunk_size {
            out.push(Window { start, end: n, degenerate: false });
            break;
        }
        let hard_end = start + cfg.chunk_size;
        // Candidate cut positions e give a chunk [start, e); e - start must exceed
        // the overlap so the next window advances.
        let lo = start + cfg.overlap + 1;
        let mut best_e = hard_end;
        let mut best_level = usize::MAX;
        for e in (lo..=hard_end).rev() {
            let level = boundary_level(text, tokens[e - 1], tokens[e], &cfg.separator_hierarchy);
            if level < best_level {
                best_level = level;
                best_e = e;
                if level == 0 {
                    break;
                }
            }
        }
        let degenerate = word_level.is_some_and(|w| best_level > w);
        out.push(Window { start, end: best_e, degenerate });
        start = best_e - cfg.overlap;
    }
    out
}
