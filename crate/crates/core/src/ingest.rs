//! Manifest ingest: recency gate, format/dedup/copyright selection, and
//! per-category exclusion accounting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Earliest publication year admitted into the manifest.
pub const MIN_PUBLICATION_YEAR: i32 = 2000;

/// Non-text-centric document types that are never accepted.
pub const EXCLUDED_DOC_TYPES: [&str; 4] = ["Video", "Poster", "Presentation", "Abstract"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Aeronautics,
    Astronautics,
    #[serde(rename = "Chemistry and Materials")]
    ChemistryAndMaterials,
    Engineering,
    Geosciences,
    #[serde(rename = "Life Sciences")]
    LifeSciences,
    #[serde(rename = "Mathematical and Computer Sciences")]
    MathematicalAndComputerSciences,
    Physics,
    #[serde(rename = "Social and Information Sciences")]
    SocialAndInformationSciences,
    #[serde(rename = "Space Sciences")]
    SpaceSciences,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::Aeronautics,
        Category::Astronautics,
        Category::ChemistryAndMaterials,
        Category::Engineering,
        Category::Geosciences,
        Category::LifeSciences,
        Category::MathematicalAndComputerSciences,
        Category::Physics,
        Category::SocialAndInformationSciences,
        Category::SpaceSciences,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Aeronautics => "Aeronautics",
            Category::Astronautics => "Astronautics",
            Category::ChemistryAndMaterials => "Chemistry and Materials",
            Category::Engineering => "Engineering",
            Category::Geosciences => "Geosciences",
            Category::LifeSciences => "Life Sciences",
            Category::MathematicalAndComputerSciences => "Mathematical and Computer Sciences",
            Category::Physics => "Physics",
            Category::SocialAndInformationSciences => "Social and Information Sciences",
            Category::SpaceSciences => "Space Sciences",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopyrightStatus {
    Public,
    Protected,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub title: String,
    pub authors: Vec<String>,
    pub category: Category,
    pub publication_year: i32,
    pub doc_type: String,
    pub copyright_status: CopyrightStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub download_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Categories of later manifest rows that shared this doc_id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternate_categories: Vec<Category>,
}

impl DocumentRecord {
    /// Minimal accepted-looking record, mostly for tests and adapters.
    pub fn with_text(doc_id: &str, text: &str) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            title: String::new(),
            authors: Vec::new(),
            category: Category::Engineering,
            publication_year: MIN_PUBLICATION_YEAR,
            doc_type: "Technical Report".into(),
            copyright_status: CopyrightStatus::Public,
            download_url: Some(format!("https://example.invalid/{doc_id}.pdf")),
            text: Some(text.to_string()),
            alternate_categories: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NoDownloadUrl,
    Duplicate,
    InvalidType,
    InvalidCopyright,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonCounts {
    pub no_download_url: usize,
    pub duplicate: usize,
    pub invalid_type: usize,
    pub invalid_copyright: usize,
}

impl ReasonCounts {
    pub fn total(&self) -> usize {
        self.no_download_url + self.duplicate + self.invalid_type + self.invalid_copyright
    }

    fn bump(&mut self, reason: ExclusionReason) {
        match reason {
            ExclusionReason::NoDownloadUrl => self.no_download_url += 1,
            ExclusionReason::Duplicate => self.duplicate += 1,
            ExclusionReason::InvalidType => self.invalid_type += 1,
            ExclusionReason::InvalidCopyright => self.invalid_copyright += 1,
        }
    }

    fn add(&mut self, other: &ReasonCounts) {
        self.no_download_url += other.no_download_url;
        self.duplicate += other.duplicate;
        self.invalid_type += other.invalid_type;
        self.invalid_copyright += other.invalid_copyright;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionLedger {
    pub by_category: BTreeMap<Category, ReasonCounts>,
    pub manifest_total: usize,
    pub accepted: usize,
    pub recency_filtered: usize,
    pub parse_errors: Vec<ManifestParseError>,
}

impl ExclusionLedger {
    pub fn totals(&self) -> ReasonCounts {
        let mut t = ReasonCounts::default();
        for c in self.by_category.values() {
            t.add(c);
        }
        t
    }

    pub fn excluded_total(&self) -> usize {
        self.totals().total()
    }

    /// accepted + excluded + recency-filtered + unparseable = manifest rows.
    pub fn reconciles(&self) -> bool {
        self.accepted + self.excluded_total() + self.recency_filtered + self.parse_errors.len() == self.manifest_total
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error reading manifest: {0}")]
    Io(#[from] std::io::Error),
}

/// One manifest row: either a parsed record or a parse failure at a line.
pub type ManifestRow = Result<DocumentRecord, ManifestParseError>;

pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<ManifestRow>, IngestError> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str::<DocumentRecord>(&line)
                .map_err(|e| ManifestParseError { line: idx + 1, message: e.to_string() }),
        );
    }
    Ok(rows)
}

fn is_excluded_type(doc_type: &str) -> bool {
    let t = doc_type.trim();
    EXCLUDED_DOC_TYPES.iter().any(|x| x.eq_ignore_ascii_case(t))
}

/// Classifies one record that already passed the recency gate. Reasons are
/// checked in the fixed order no_download_url, duplicate, invalid_type,
/// invalid_copyright; `seen` holds doc_ids that reached the duplicate check.
fn exclusion_reason(rec: &DocumentRecord, seen: &mut HashSet<String>) -> Option<ExclusionReason> {
    if rec.download_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
        return Some(ExclusionReason::NoDownloadUrl);
    }
    if !seen.insert(rec.doc_id.clone()) {
        return Some(ExclusionReason::Duplicate);
    }
    if is_excluded_type(&rec.doc_type) {
        return Some(ExclusionReason::InvalidType);
    }
    if rec.copyright_status != CopyrightStatus::Public {
        return Some(ExclusionReason::InvalidCopyright);
    }
    None
}

pub fn ingest<I>(manifest: I) -> (Vec<DocumentRecord>, ExclusionLedger)
where
    I: IntoIterator<Item = ManifestRow>,
{
    let mut ledger = ExclusionLedger::default();
    let mut seen = HashSet::new();
    let mut accepted: Vec<DocumentRecord> = Vec::new();
    let mut duplicate_categories: HashMap<String, Vec<Category>> = HashMap::new();

    for row in manifest {
        ledger.manifest_total += 1;
        let rec = match row {
            Ok(r) => r,
            Err(e) => {
                ledger.parse_errors.push(e);
                continue;
            }
        };
        if rec.publication_year < MIN_PUBLICATION_YEAR {
            ledger.recency_filtered += 1;
            continue;
        }
        match exclusion_reason(&rec, &mut seen) {
            Some(reason) => {
                if reason == ExclusionReason::Duplicate {
                    duplicate_categories.entry(rec.doc_id.clone()).or_default().push(rec.category);
                }
                ledger.by_category.entry(rec.category).or_default().bump(reason);
            }
            None => accepted.push(rec),
        }
    }

    for rec in &mut accepted {
        if let Some(alts) = duplicate_categories.remove(&rec.doc_id) {
            for c in alts {
                if c != rec.category && !rec.alternate_categories.contains(&c) {
                    rec.alternate_categories.push(c);
                }
            }
        }
    }
    ledger.accepted = accepted.len();
    (accepted, ledger)
}
