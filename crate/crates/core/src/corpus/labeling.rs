use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_jsonl, ArticleRecord, LabeledRecord, Rejection};
use crate::bibliometrics::{compute_aif, compute_jif, label_article, label_journal, AifParams, CitationWindow};
use crate::{Error, Result};

/// A journal with either a precomputed JIF or the counts to derive one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub journal_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jif: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<CitationWindow>,
}

impl JournalRecord {
    /// Precomputed JIF if present, otherwise computed from the window.
    pub fn resolve_jif(&self) -> Result<f64> {
        match (self.jif, &self.window) {
            (Some(jif), _) if jif.is_finite() && jif >= 0.0 => Ok(jif),
            (Some(jif), _) => Err(Error::domain(format!(
                "journal {}: invalid JIF {jif}",
                self.journal_id
            ))),
            (None, Some(w)) => compute_jif(w),
            (None, None) => Err(Error::Validation(format!(
                "journal {}: neither jif nor window given",
                self.journal_id
            ))),
        }
    }
}

/// Reads journals from a JSON-lines file.
pub fn read_journals(path: &Path) -> Result<Vec<JournalRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let out = parse_jsonl(std::io::BufReader::new(file), &["journal_id"], |_: &JournalRecord| Ok(()))?;
    if let Some(r) = out.rejections.first() {
        return Err(Error::Validation(format!(
            "{} line {}: {}",
            path.display(),
            r.line,
            r.reason
        )));
    }
    Ok(out.records)
}

/// Median of the article citation counts (mean of the two middle values for
/// even counts).
pub fn median_citations(records: &[ArticleRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let mut c: Vec<u64> = records.iter().map(|r| r.citations).collect();
    c.sort_unstable();
    let n = c.len();
    Some(if n % 2 == 1 {
        c[n / 2] as f64
    } else {
        (c[n / 2 - 1] + c[n / 2]) as f64 / 2.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelOutcome {
    pub records: Vec<LabeledRecord>,
    pub rejections: Vec<Rejection>,
    /// The AIF parameters actually used (cits_m filled in when not supplied).
    pub params: AifParams,
}

/// Attaches JIF, AIF and both impact labels to every article.
///
/// When `cits_m` is `None` the median citation count of `records` is used;
/// pass the training corpus median when labeling new articles.
pub fn label_corpus(
    records: &[ArticleRecord],
    journals: &[JournalRecord],
    d: f64,
    cits_m: Option<f64>,
) -> Result<LabelOutcome> {
    let mut jifs: BTreeMap<&str, Result<f64>> = BTreeMap::new();
    for j in journals {
        jifs.insert(j.journal_id.as_str(), j.resolve_jif());
    }
    let cits_m = match cits_m {
        Some(m) => m,
        None => median_citations(records)
            .ok_or_else(|| Error::domain("cannot take the citation median of an empty corpus"))?,
    };
    let params = AifParams::new(d, cits_m)?;

    let mut labeled = Vec::with_capacity(records.len());
    let mut rejections = Vec::new();
    for (idx, r) in records.iter().enumerate() {
        let scored = match jifs.get(r.journal_id.as_str()) {
            None => Err(Error::Validation(format!(
                "journal_id {} not found in journal table",
                r.journal_id
            ))),
            Some(Err(e)) => Err(Error::Validation(e.to_string())),
            Some(Ok(jif)) => compute_aif(r.citations, *jif, &params),
        };
        match scored {
            Ok(s) => labeled.push(LabeledRecord {
                record: r.clone(),
                jif: s.jif,
                aif: s.aif,
                journal_label: label_journal(s.jif),
                article_label: label_article(s.aif),
            }),
            Err(e) => rejections.push(Rejection {
                line: idx + 1,
                id: Some(r.id.clone()),
                reason: e.to_string(),
            }),
        }
    }
    Ok(LabelOutcome {
        records: labeled,
        rejections,
        params,
    })
}
