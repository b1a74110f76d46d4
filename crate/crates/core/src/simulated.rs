//! Deterministic rule-based stand-in for the chat model, used by `--mock`
//! runs and tests. It recognizes each bundled prompt by its fixed wording and
//! answers in the format that prompt asks for. Generated traces satisfy the
//! hard constraints, and translations are reversible so back-translation
//! returns the original English.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde_json::{json, Value};

use crate::chunker::count_tokens;
use crate::gateway::{BackendError, ChatBackend, ChatRequest};
use crate::querygen::{contains_verbatim, Language, MAX_QUERY_TOKENS, MIN_QUERY_TOKENS, UNDEFINABLE};
use crate::selector::IntentLabel;
use crate::terminology::{MatchMode, TermMatcher};

#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedLlm;

impl ChatBackend for SimulatedLlm {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let user = req.user_prompt.as_str();
        let all = format!("{}\n\n{}", req.system_prompt, user);
        if all.contains("Most Suitable Intent:") {
            return Ok(classify(between(user, "Passage:\n", "\n\nMost Suitable Intent:")).display().to_string());
        }
        if all.contains("Short Description:") {
            let term = between(user, "Term:\n", "\n\nShort Description:").trim();
            let context = between(user, "Context:\n", "\n\nTerm:");
            return Ok(describe(term, context));
        }
        if all.contains("Chain-of-Density") {
            let taq = all.contains("ABSOLUTE TERM-BAN POLICY");
            let input = first_json_object(user).ok_or_else(|| BackendError::Fatal("no input JSON in prompt".into()))?;
            return Ok(trace(&input, taq).to_string());
        }
        if all.contains("expert translator") {
            let lang = between(&all, "English text into ", ".\n");
            let code = language_code(lang.trim());
            let query = after(user, "English Text:\n").trim();
            return Ok(translate(query, &kept_terms(&all), code));
        }
        if all.contains("back into English") {
            return Ok(back_translate(after(user, "Query:\n").trim()));
        }
        if all.contains("\"answerability\"") {
            let passage = between(user, "Passage:\n", "\n\nQuery:");
            let query = after(user, "Query:\n").lines().next().unwrap_or("").trim();
            return Ok(judge(passage, query).to_string());
        }
        Err(BackendError::Fatal("simulated model does not recognize this prompt".into()))
    }
}

fn after<'a>(s: &'a str, marker: &str) -> &'a str {
    s.find(marker).map_or("", |i| &s[i + marker.len()..])
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> &'a str {
    let rest = after(s, start);
    rest.find(end).map_or(rest, |i| &rest[..i])
}

fn first_json_object(s: &str) -> Option<Value> {
    let mut from = 0;
    while let Some(i) = s[from..].find('{') {
        let start = from + i;
        let mut stream = serde_json::Deserializer::from_str(&s[start..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            return Some(v);
        }
        from = start + 1;
    }
    None
}

static STOPWORDS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    [
        "about",
        "above",
        "after",
        "again",
        "against",
        "along",
        "also",
        "although",
        "among",
        "another",
        "because",
        "before",
        "being",
        "below",
        "between",
        "both",
        "could",
        "during",
        "each",
        "either",
        "every",
        "first",
        "following",
        "from",
        "further",
        "given",
        "have",
        "having",
        "here",
        "however",
        "into",
        "itself",
        "other",
        "over",
        "same",
        "second",
        "shall",
        "should",
        "shown",
        "since",
        "some",
        "such",
        "than",
        "that",
        "their",
        "them",
        "then",
        "there",
        "these",
        "they",
        "third",
        "this",
        "those",
        "through",
        "under",
        "until",
        "upon",
        "used",
        "using",
        "very",
        "were",
        "what",
        "when",
        "where",
        "whether",
        "which",
        "while",
        "with",
        "within",
        "without",
        "would",
        "your",
        "list",
        "lists",
        "quote",
        "quoted",
        "quotes",
        "enumerate",
        "name",
        "names",
        "technical",
        "element",
        "related",
        "abbreviation",
        "described",
        "system",
        "document",
        "context",
    ]
    .into_iter()
    .collect()
});

/// Lowercase content words usable as neutral query filler.
fn content_words(text: &str, matcher: &TermMatcher, min_len: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for raw in text.split(|c: char| !c.is_alphabetic()) {
        if raw.chars().count() < min_len || raw.chars().any(|c| !c.is_ascii_lowercase()) {
            continue;
        }
        if STOPWORDS.contains(raw) || !matcher.find(raw, MatchMode::Loose).is_empty() {
            continue;
        }
        if seen.insert(raw.to_string()) {
            out.push(raw.to_string());
        }
    }
    out
}

const INTENT_CUES: [(IntentLabel, &[&str]); 4] = [
    (
        IntentLabel::Anom,
        &["anomal", "failure", "fault", "erosion", "leak", "crack", "malfunction", "mitigat", "root cause"],
    ),
    (IntentLabel::Comp, &["compared", "comparison", "versus", "trade", "higher than", "lower than", "relative to"]),
    (IntentLabel::Proc, &["procedure", "calibrat", "initializ", "sequence", "schedul", "checklist", "step "]),
    (IntentLabel::Num, &["percent", "kg", "km", "psi", "kpa", "mpa", " hz", "tolerance", "range of"]),
];

fn classify(passage: &str) -> IntentLabel {
    let lower = passage.to_lowercase();
    let mut best = (IntentLabel::Def, 0usize);
    for (label, cues) in INTENT_CUES {
        let hits = cues.iter().map(|c| lower.matches(c).count()).sum::<usize>();
        if hits > best.1 {
            best = (label, hits);
        }
    }
    best.0
}

fn describe(term: &str, context: &str) -> String {
    if term.is_empty() || !contains_verbatim(context, term) {
        return UNDEFINABLE.to_string();
    }
    // Acronym introduced as "Long Form Words (TERM)".
    let letters: Vec<char> = term.chars().filter(|c| c.is_ascii_alphabetic()).collect();
    if let Some(i) = context.find(&format!("({term})")) {
        let words: Vec<&str> = context[..i].split_whitespace().collect();
        if letters.len() >= 2 && words.len() >= letters.len() {
            let expansion = &words[words.len() - letters.len()..];
            let initials_match = expansion
                .iter()
                .zip(&letters)
                .all(|(w, l)| w.chars().next().is_some_and(|c| c.eq_ignore_ascii_case(l)));
            if initials_match {
                return format!("Abbreviation of {}.", expansion.join(" "));
            }
        }
    }
    let matcher = TermMatcher::from_surfaces([term]);
    let sentence = context.split_inclusive(['.', '\n']).find(|s| contains_verbatim(s, term)).unwrap_or(context);
    let words = content_words(sentence, &matcher, 5);
    if words.is_empty() {
        return UNDEFINABLE.to_string();
    }
    let picked: Vec<&str> = words.iter().take(3).map(String::as_str).collect();
    format!("Technical element related to {} in the described system.", picked.join(" "))
}

fn frame(intent: IntentLabel) -> (&'static str, &'static str, &'static str) {
    match intent {
        IntentLabel::Def => {
            ("How does", "influence the behavior reported", "for the system under the stated operating conditions?")
        }
        IntentLabel::Num => {
            ("What values and units are reported for", "and under which assumptions", "do the reported ranges hold?")
        }
        IntentLabel::Proc => (
            "What sequence of steps is followed to prepare",
            "according to the reported procedure",
            "for normal operation?",
        ),
        IntentLabel::Comp => {
            ("How does", "compare across the reported configurations", "in terms of performance and margins?")
        }
        IntentLabel::Anom => (
            "What conditions lead to failures involving",
            "and how are recurrences prevented",
            "according to the reported investigation?",
        ),
    }
}

/// Builds a 15 to 25 token question around `subject`.
fn fit_query(intent: IntentLabel, subject: &str) -> String {
    let (head, mid, tail) = frame(intent);
    let full = format!("{head} {subject} {mid} {tail}");
    if count_tokens(&full) <= MAX_QUERY_TOKENS {
        let mut q = full;
        let pad = " across the reported tests";
        while count_tokens(&q) < MIN_QUERY_TOKENS {
            let cut = q.len() - 1;
            q = format!("{}{pad}?", &q[..cut]);
        }
        return q;
    }
    let short = format!("{head} {subject} {mid}?");
    if count_tokens(&short) <= MAX_QUERY_TOKENS {
        return short;
    }
    format!("{head} {subject}?")
}

fn feedback(intent: IntentLabel, next: &str) -> String {
    format!("Keep the {} intent; stay within 15-25 tokens using passage facts only; next add {next}.", intent.display())
}

fn trace(input: &Value, taq: bool) -> Value {
    let passage = input.get("passage_text").and_then(Value::as_str).unwrap_or("");
    let intention = input.get("sampled_intention").and_then(Value::as_str).unwrap_or("");
    let intent = IntentLabel::parse_label(intention).unwrap_or(IntentLabel::Def);
    let terms: Vec<(String, String)> = input
        .get("identified_terms")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|t| {
                    let term = t.get("term")?.as_str()?.to_string();
                    let desc = t.get("description").and_then(Value::as_str).unwrap_or("").to_string();
                    Some((term, desc))
                })
                .collect()
        })
        .unwrap_or_default();
    let surfaces: Vec<&str> = terms.iter().map(|(t, _)| t.as_str()).collect();
    let matcher = TermMatcher::from_surfaces(&surfaces);

    let mut fillers = content_words(passage, &matcher, 5).into_iter();
    let a = fillers.next().unwrap_or_else(|| "design".into());
    let b = fillers.next().unwrap_or_else(|| "operation".into());

    let usable: Vec<&(String, String)> =
        terms.iter().filter(|(t, _)| (1..=3).contains(&t.split_whitespace().count())).collect();
    let t1 = usable.first().map(|(t, _)| t.clone()).unwrap_or_default();
    let step1 = fit_query(intent, &format!("the {a} and the {b}"));

    let (q2, q3, t2, refs2, refs3) = if taq {
        let para = |desc: &str, fallback: &str| -> String {
            let words = content_words(desc, &matcher, 4);
            if words.is_empty() {
                fallback.to_string()
            } else {
                words.into_iter().take(2).collect::<Vec<_>>().join(" ")
            }
        };
        let p1 = para(&usable.first().map(|(_, d)| d.clone()).unwrap_or_default(), "primary component");
        let (t2, d2) = usable.get(1).map(|(t, d)| (t.clone(), d.clone())).unwrap_or_default();
        let mut p2 = para(&d2, "secondary component");
        if p2 == p1 {
            p2 = format!("{p2} assembly");
        }
        let q2 = fit_query(intent, &format!("the {a} of the {p1}"));
        let q3 = fit_query(intent, &format!("the {p1} together with the {p2}"));
        let refs3 = json!([t2.clone(), p2]);
        (q2, q3, t2, json!([t1, p1]), refs3)
    } else {
        let q2 = fit_query(intent, &format!("the {a} of the {t1}"));
        let t2 = usable.iter().skip(1).map(|(t, _)| t.clone()).find(|t| !contains_verbatim(&q2, t)).unwrap_or_default();
        let q3 = fit_query(intent, &format!("the {t1} together with the {t2}"));
        (q2, q3, t2, Value::Null, Value::Null)
    };

    let mut step2 = json!({
        "query": q2,
        "recognized_entities": [a, t1],
        "entities_added": [t1],
        "self_feedback": feedback(intent, "a second technical concept from the passage"),
    });
    let mut step3 = json!({
        "query": q3,
        "recognized_entities": [t1, t2],
        "entities_added": [t2],
        "self_feedback": feedback(intent, "no further entities"),
    });
    if taq {
        step2["descriptions_referenced"] = refs2;
        step3["descriptions_referenced"] = refs3;
    }
    json!({
        "intention": intent.display(),
        "step_1": {
            "query": step1,
            "recognized_entities": [a, b],
            "entities_added": [a, b],
            "self_feedback": feedback(intent, "one technical concept"),
        },
        "step_2": step2,
        "step_3": step3,
    })
}

fn language_code(name: &str) -> &'static str {
    Language::TARGETS.into_iter().find(|l| l.name().eq_ignore_ascii_case(name)).map_or("xx", Language::code)
}

fn kept_terms(prompt: &str) -> Vec<String> {
    let marker = "Keep them in their original English form: ";
    let Some(line) = prompt.lines().find_map(|l| l.trim().strip_prefix(marker)) else {
        return Vec::new();
    };
    line.trim_end_matches('.').split(", ").map(str::trim).filter(|t| !t.is_empty()).map(str::to_string).collect()
}

static ENCODED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"⟪[a-z]{2}\|([^⟫]*)⟫").unwrap());

fn encode_segment(segment: &str, code: &str, out: &mut String) {
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut String| {
        if !run.is_empty() {
            out.push_str(&format!("⟪{code}|{}⟫", run.chars().rev().collect::<String>()));
            run.clear();
        }
    };
    for c in segment.chars() {
        if c.is_alphabetic() {
            run.push(c);
        } else {
            flush(&mut run, out);
            out.push(c);
        }
    }
    flush(&mut run, out);
}

/// Encodes every alphabetic run outside the kept terms; kept terms pass
/// through byte for byte.
fn translate(query: &str, kept: &[String], code: &str) -> String {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for term in kept {
        let mut from = 0;
        while let Some(i) = query[from..].find(term.as_str()) {
            let s = from + i;
            spans.push((s, s + term.len()));
            from = s + term.len().max(1);
        }
    }
    spans.sort();
    let mut out = String::new();
    let mut pos = 0;
    for (s, e) in spans {
        if s < pos {
            if e > pos {
                out.push_str(&query[pos..e]);
                pos = e;
            }
            continue;
        }
        encode_segment(&query[pos..s], code, &mut out);
        out.push_str(&query[s..e]);
        pos = e;
    }
    encode_segment(&query[pos..], code, &mut out);
    out
}

fn back_translate(text: &str) -> String {
    ENCODED.replace_all(text, |c: &regex::Captures| c[1].chars().rev().collect::<String>()).into_owned()
}

fn judge(passage: &str, query: &str) -> Value {
    let passage_lower = passage.to_lowercase();
    let words: Vec<String> =
        query.split(|c: char| !c.is_alphanumeric()).filter(|w| w.chars().count() >= 5).map(str::to_lowercase).collect();
    let grounded = words.iter().filter(|w| passage_lower.contains(w.as_str())).count();
    let answerability = if words.is_empty() || grounded * 3 >= words.len() { 5 } else { 3 };
    let format = if crate::querygen::forbidden_forms(query).is_empty() { 5 } else { 2 };
    let n = count_tokens(query);
    let style = if (MIN_QUERY_TOKENS..=MAX_QUERY_TOKENS).contains(&n) { 5 } else { 3 };
    json!({
        "answerability": answerability,
        "no_external_knowledge": answerability,
        "intent_adherence": 4,
        "format_compliance": format,
        "style_length": style,
    })
}
