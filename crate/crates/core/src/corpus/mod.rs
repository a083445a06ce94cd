//! Article data model, ingestion, labeling, splitting and featurization.

mod labeling;
mod normalize;
mod split;
pub mod synthetic;
mod tokenizer;
mod vocab;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bibliometrics::ImpactLabel;
use crate::{Error, Result};

pub use labeling::{label_corpus, median_citations, read_journals, JournalRecord, LabelOutcome};
pub use normalize::Normalizer;
pub use split::{read_manifest, split, split_indices, write_manifest, Split, SplitIndices, SplitSpec};
pub use tokenizer::{
    tokenize, TextTokenizer, Tokenizer, WhitespaceTokenizer, WordPieceTokenizer, BOS_ID, EOS_ID,
    PAD_ID, UNK_ID,
};
pub use vocab::{build_vocab, featurize_baseline, normalize_words, BaselineFeatures, BaselineVocab, STOP_WORDS};

/// Names of the numeric metadata fields, in [`MetadataVector`] order.
pub const METADATA_FIELDS: [&str; 7] = [
    "year",
    "reference_count",
    "reference_age",
    "impact_reference",
    "h_index",
    "author_cit",
    "author_papers",
];

pub const METADATA_DIM: usize = METADATA_FIELDS.len();

/// Inclusive range of accepted publication years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub min: i32,
    pub max: i32,
}

impl Default for YearRange {
    fn default() -> Self {
        Self { min: 1900, max: 2100 }
    }
}

/// One manuscript with its text, bibliometric metadata and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub year: i32,
    pub reference_count: u64,
    /// Average publication year of the references.
    pub reference_age: f64,
    /// Share of references published in high-impact journals.
    pub impact_reference: f64,
    pub h_index: u64,
    pub author_cit: u64,
    pub author_papers: u64,
    pub citations: u64,
    pub journal_id: String,
}

impl ArticleRecord {
    pub fn validate(&self, years: &YearRange) -> Result<()> {
        let mut problems = Vec::new();
        if self.id.trim().is_empty() {
            problems.push("id is empty".to_string());
        }
        if self.title.trim().is_empty() {
            problems.push("title is empty".to_string());
        }
        if self.abstract_text.trim().is_empty() {
            problems.push("abstract is empty".to_string());
        }
        if !(0.0..=1.0).contains(&self.impact_reference) {
            problems.push(format!("impact_reference {} outside [0, 1]", self.impact_reference));
        }
        if self.year < years.min || self.year > years.max {
            problems.push(format!(
                "year {} outside [{}, {}]",
                self.year, years.min, years.max
            ));
        }
        if !self.reference_age.is_finite() {
            problems.push("reference_age is not finite".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    /// Raw (unnormalized) metadata vector.
    pub fn metadata(&self) -> MetadataVector {
        MetadataVector {
            values: [
                self.year as f64,
                self.reference_count as f64,
                self.reference_age,
                self.impact_reference,
                self.h_index as f64,
                self.author_cit as f64,
                self.author_papers as f64,
            ],
            normalized: false,
        }
    }
}

/// The seven numeric metadata features in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetadataVector {
    pub values: [f64; METADATA_DIM],
    pub normalized: bool,
}

/// Which impact label a model is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    JournalImpact,
    ArticleImpact,
}

/// An article augmented with its impact scores and both task labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    #[serde(flatten)]
    pub record: ArticleRecord,
    pub jif: f64,
    pub aif: f64,
    pub journal_label: ImpactLabel,
    pub article_label: ImpactLabel,
}

impl LabeledRecord {
    pub fn label(&self, task: Task) -> ImpactLabel {
        match task {
            Task::JournalImpact => self.journal_label,
            Task::ArticleImpact => self.article_label,
        }
    }

    pub fn class(&self, task: Task) -> usize {
        self.label(task).class()
    }
}

pub trait HasId {
    fn id(&self) -> &str;
}

impl HasId for ArticleRecord {
    fn id(&self) -> &str {
        &self.id
    }
}

impl HasId for LabeledRecord {
    fn id(&self) -> &str {
        &self.record.id
    }
}

/// A line of an input file that failed to parse or validate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number (0 when the rejection is not tied to a line).
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub rejections: Vec<Rejection>,
}

const REQUIRED_FIELDS: [&str; 12] = [
    "id",
    "title",
    "abstract",
    "year",
    "reference_count",
    "reference_age",
    "impact_reference",
    "h_index",
    "author_cit",
    "author_papers",
    "citations",
    "journal_id",
];

/// Reads a JSON-lines article file. Malformed or invalid lines are reported
/// with their line number and skipped; nothing is imputed.
pub fn ingest(path: &Path, years: &YearRange) -> Result<Ingested<ArticleRecord>> {
    read_jsonl(path, |r: &ArticleRecord| r.validate(years))
}

/// Reads a labeled corpus written by [`write_jsonl`] after labeling.
pub fn ingest_labeled(path: &Path, years: &YearRange) -> Result<Ingested<LabeledRecord>> {
    read_jsonl(path, |r: &LabeledRecord| r.record.validate(years))
}

fn read_jsonl<T, F>(path: &Path, validate: F) -> Result<Ingested<T>>
where
    T: DeserializeOwned,
    F: Fn(&T) -> Result<()>,
{
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let out = parse_jsonl(BufReader::new(file), &REQUIRED_FIELDS, validate).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    if out.records.is_empty() && out.rejections.is_empty() {
        log::warn!("{}: no records", path.display());
    }
    Ok(out)
}

/// Parses JSON lines, rejecting lines that lack any of `required` (or
/// hold null there) before typed deserialization.
pub(crate) fn parse_jsonl<T, R, F>(reader: R, required: &[&str], validate: F) -> Result<Ingested<T>>
where
    T: DeserializeOwned,
    R: BufRead,
    F: Fn(&T) -> Result<()>,
{
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                rejections.push(Rejection {
                    line: line_no,
                    id: None,
                    reason: format!("malformed JSON: {e}"),
                });
                continue;
            }
        };
        let id = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
        let missing: Vec<&str> = required
            .iter()
            .copied()
            .filter(|f| value.get(f).is_none_or(|v| v.is_null()))
            .collect();
        if !missing.is_empty() {
            rejections.push(Rejection {
                line: line_no,
                id,
                reason: format!("missing required field(s): {}", missing.join(", ")),
            });
            continue;
        }
        let record: T = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                rejections.push(Rejection {
                    line: line_no,
                    id,
                    reason: format!("invalid field value: {e}"),
                });
                continue;
            }
        };
        if let Err(e) = validate(&record) {
            rejections.push(Rejection {
                line: line_no,
                id,
                reason: e.to_string(),
            });
            continue;
        }
        records.push(record);
    }
    for r in &rejections {
        log::warn!("line {}: {}", r.line, r.reason);
    }
    Ok(Ingested { records, rejections })
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses and validates a single JSON article, listing every offending field.
pub fn parse_article(json: &str, years: &YearRange) -> Result<ArticleRecord> {
    let out = parse_jsonl(json.replace('\n', " ").as_bytes(), &REQUIRED_FIELDS, |r: &ArticleRecord| {
        r.validate(years)
    })?;
    match (out.records.into_iter().next(), out.rejections.into_iter().next()) {
        (Some(r), _) => Ok(r),
        (None, Some(rej)) => Err(Error::Validation(rej.reason)),
        (None, None) => Err(Error::Validation("empty article".into())),
    }
}


#[cfg(test)]
pub(crate) use tests::article as test_article;
