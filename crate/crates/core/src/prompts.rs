//! Prompt templates. The texts live in `prompts/*.txt` and are compiled in;
//! placeholders are written `<name>` and filled in a single pass, so inserted
//! values are never re-expanded.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use thiserror::Error;

use crate::gateway::ChatRequest;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template}: no value for placeholder <{name}>")]
    MissingValue { template: &'static str, name: &'static str },
    #[error("template {template}: unknown placeholder <{name}>")]
    UnknownPlaceholder { template: &'static str, name: String },
}

#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
    pub placeholders: &'static [&'static str],
}

pub const INTENT_CLASSIFICATION: Template = Template {
    name: "intent_classification",
    text: include_str!("../prompts/intent_classification.txt"),
    placeholders: &["passage_text"],
};

pub const TERM_DESCRIPTION: Template = Template {
    name: "term_description",
    text: include_str!("../prompts/term_description.txt"),
    placeholders: &["term", "context_text"],
};

pub const TCQG: Template =
    Template { name: "tcqg", text: include_str!("../prompts/tcqg.txt"), placeholders: &["input_json"] };

pub const TAQG: Template =
    Template { name: "taqg", text: include_str!("../prompts/taqg.txt"), placeholders: &["input_json"] };

pub const TRANSLATION: Template = Template {
    name: "translation",
    text: include_str!("../prompts/translation.txt"),
    placeholders: &["target_language_name", "few_shot_examples", "keep_terms_instruction", "input_query"],
};

pub const KEEP_TERMS: Template =
    Template { name: "keep_terms", text: include_str!("../prompts/keep_terms.txt"), placeholders: &["term_list"] };

pub const NO_TERMS: &str = include_str!("../prompts/no_terms.txt");

pub const BACK_TRANSLATION: Template = Template {
    name: "back_translation",
    text: include_str!("../prompts/back_translation.txt"),
    placeholders: &["source_language_name", "input_query"],
};

pub const JUDGE: Template = Template {
    name: "judge",
    text: include_str!("../prompts/judge.txt"),
    placeholders: &["intent", "passage_text", "query"],
};

pub const ALL: [Template; 8] =
    [INTENT_CLASSIFICATION, TERM_DESCRIPTION, TCQG, TAQG, TRANSLATION, KEEP_TERMS, BACK_TRANSLATION, JUDGE];

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<([a-z_]+)>").unwrap());

impl Template {
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let map: HashMap<&str, &str> = values.iter().copied().collect();
        for &name in self.placeholders {
            if !map.contains_key(name) {
                return Err(PromptError::MissingValue { template: self.name, name });
            }
        }
        if let Some((k, _)) = values.iter().find(|(k, _)| !self.placeholders.contains(k)) {
            return Err(PromptError::UnknownPlaceholder { template: self.name, name: k.to_string() });
        }
        let out = PLACEHOLDER.replace_all(self.text, |c: &Captures| match map.get(&c[1]) {
            Some(v) => v.to_string(),
            None => c[0].to_string(),
        });
        Ok(out.trim_end().to_string())
    }

    /// Renders the template and splits it into a chat request: the first block
    /// (the role section) becomes the system prompt, the rest the user prompt.
    pub fn request(&self, values: &[(&str, &str)]) -> Result<ChatRequest, PromptError> {
        let full = self.render(values)?;
        Ok(match full.split_once("\n\n") {
            Some((system, user)) => ChatRequest::new(system.trim(), user.trim()),
            None => ChatRequest::new(full.clone(), full),
        })
    }
}
