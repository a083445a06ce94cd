//! Journal and article impact metrics, impact labels, and the analyses used to
//! justify them (citation-window stability and feature correlations).
//!
//! Everything here is a pure function of its inputs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledRecord;
use crate::{Error, Result};

/// Journals at or above this JIF are labeled high impact.
pub const JOURNAL_THRESHOLD: f64 = 6.0;
/// Articles at or above this AIF are labeled high impact.
pub const ARTICLE_THRESHOLD: f64 = 5.0;
/// Balance parameter used for the published experiments.
pub const DEFAULT_BALANCE: f64 = 0.4;

const P_MIN: f64 = 0.5;
const P_MAX: f64 = 2.0;

/// Citation and publication counts over the two years preceding the JIF year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CitationWindow {
    pub citations_t1: u64,
    pub citations_t2: u64,
    pub papers_t1: u64,
    pub papers_t2: u64,
}

impl CitationWindow {
    pub fn new(citations_t1: u64, citations_t2: u64, papers_t1: u64, papers_t2: u64) -> Self {
        Self {
            citations_t1,
            citations_t2,
            papers_t1,
            papers_t2,
        }
    }
}

/// Parameters of the article impact factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AifParams {
    /// Balance between the citation term and the venue term, in (0, 0.5).
    pub d: f64,
    /// Median citation count of the reference (training) corpus.
    pub cits_m: f64,
}

impl AifParams {
    pub fn new(d: f64, cits_m: f64) -> Result<Self> {
        let params = Self { d, cits_m };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d < 0.5) {
            return Err(Error::domain(format!(
                "balance parameter d must lie in (0, 0.5), got {}",
                self.d
            )));
        }
        if !(self.cits_m > 0.0 && self.cits_m.is_finite()) {
            return Err(Error::domain(format!(
                "median citation count must be positive, got {}",
                self.cits_m
            )));
        }
        Ok(())
    }

    /// Scaling factor `min(2, max(cits_m / jif, 0.5))`.
    pub fn scaling_factor(&self, jif: f64) -> Result<f64> {
        if !(jif > 0.0 && jif.is_finite()) {
            return Err(Error::domain(format!(
                "JIF must be positive to compute the scaling factor, got {jif}"
            )));
        }
        Ok((self.cits_m / jif).clamp(P_MIN, P_MAX))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactScores {
    pub jif: f64,
    pub cits: u64,
    pub p: f64,
    pub aif: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactLabel {
    Others,
    HighImpact,
}

impl ImpactLabel {
    /// Class index used by the classifiers: `others = 0`, `high_impact = 1`.
    pub fn class(self) -> usize {
        match self {
            ImpactLabel::Others => 0,
            ImpactLabel::HighImpact => 1,
        }
    }

    pub fn from_class(class: usize) -> Self {
        if class == 1 {
            ImpactLabel::HighImpact
        } else {
            ImpactLabel::Others
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ImpactLabel::Others => "others",
            ImpactLabel::HighImpact => "high_impact",
        }
    }
}

/// Journal impact factor over a two-year window.
pub fn compute_jif(w: &CitationWindow) -> Result<f64> {
    let papers = w.papers_t1 + w.papers_t2;
    if papers == 0 {
        return Err(Error::domain(
            "journal window has zero published papers; JIF is undefined",
        ));
    }
    Ok((w.citations_t1 + w.citations_t2) as f64 / papers as f64)
}

/// Article impact factor `ln(d·cits·p + (1−d)·jif)`.
pub fn compute_aif(cits: u64, jif: f64, params: &AifParams) -> Result<ImpactScores> {
    params.validate()?;
    let p = params.scaling_factor(jif)?;
    let arg = params.d * cits as f64 * p + (1.0 - params.d) * jif;
    if !(arg > 0.0) {
        return Err(Error::domain(format!(
            "AIF logarithm argument must be positive, got {arg}"
        )));
    }
    Ok(ImpactScores {
        jif,
        cits,
        p,
        aif: arg.ln(),
    })
}

pub fn label_journal(jif: f64) -> ImpactLabel {
    if jif >= JOURNAL_THRESHOLD {
        ImpactLabel::HighImpact
    } else {
        ImpactLabel::Others
    }
}

pub fn label_article(aif: f64) -> ImpactLabel {
    if aif >= ARTICLE_THRESHOLD {
        ImpactLabel::HighImpact
    } else {
        ImpactLabel::Others
    }
}

/// Citation counts of one article at two horizons after publication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationHistory {
    pub article_id: String,
    pub cits_4y: u64,
    pub cits_8y: u64,
}

impl CitationHistory {
    pub fn new(article_id: impl Into<String>, cits_4y: u64, cits_8y: u64) -> Result<Self> {
        let history = Self {
            article_id: article_id.into(),
            cits_4y,
            cits_8y,
        };
        history.validate()?;
        Ok(history)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cits_8y < self.cits_4y {
            return Err(Error::Validation(format!(
                "article {}: 8-year citations ({}) below 4-year citations ({}); counts are cumulative",
                self.article_id, self.cits_8y, self.cits_4y
            )));
        }
        Ok(())
    }
}

/// The two sides of the sensitivity inequality: the AIF-side citation
/// difference `d·p·|cits_4 − cits_8|` and the raw difference `|cits_4 − cits_8|`.
///
/// `p` is evaluated at the 4-year citation horizon's journal, i.e. from `jif`.
pub fn sensitivity_gap(history: &CitationHistory, params: &AifParams, jif: f64) -> Result<(f64, f64)> {
    let p = params.scaling_factor(jif)?;
    Ok(sensitivity_gap_with_p(history, params.d, p))
}

/// Same as [`sensitivity_gap`] with an explicit scaling factor.
pub fn sensitivity_gap_with_p(history: &CitationHistory, d: f64, p: f64) -> (f64, f64) {
    let raw = history.cits_4y.abs_diff(history.cits_8y) as f64;
    (d * p * raw, raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub others_4y: usize,
    pub impactful_4y: usize,
    pub others_8y: usize,
    pub impactful_8y: usize,
    pub flip_count: usize,
    pub total: usize,
}

impl StabilityReport {
    pub fn flip_fraction(&self) -> f64 {
        self.flip_count as f64 / self.total as f64
    }
}

/// Classifies every history at both horizons (impactful iff `cits > threshold`)
/// and counts articles whose class changes between them.
pub fn stability_report(histories: &[CitationHistory], threshold: u64) -> Result<StabilityReport> {
    if histories.is_empty() {
        return Err(Error::domain("stability analysis needs at least one history"));
    }
    let mut report = StabilityReport {
        others_4y: 0,
        impactful_4y: 0,
        others_8y: 0,
        impactful_8y: 0,
        flip_count: 0,
        total: histories.len(),
    };
    for h in histories {
        let early = h.cits_4y > threshold;
        let late = h.cits_8y > threshold;
        if early {
            report.impactful_4y += 1;
        } else {
            report.others_4y += 1;
        }
        if late {
            report.impactful_8y += 1;
        } else {
            report.others_8y += 1;
        }
        if early != late {
            report.flip_count += 1;
        }
    }
    Ok(report)
}

/// Reads citation histories from CSV with header `article_id,cits_4y,cits_8y`.
pub fn read_histories_csv(path: &Path) -> Result<Vec<CitationHistory>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_histories(file)
}

pub fn read_histories<R: Read>(reader: R) -> Result<Vec<CitationHistory>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let history: CitationHistory = row?;
        history.validate()?;
        out.push(history);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    #[default]
    Pearson,
    Spearman,
}

/// Assessment indicators, in row order of the correlation table.
pub const INDICATORS: [&str; 3] = ["JIF", "citations", "AIF"];
/// Bibliometric features, in column order of the correlation table.
pub const CORRELATION_FEATURES: [&str; 6] = [
    "reference_count",
    "reference_age",
    "impact_reference",
    "h_index",
    "author_cit",
    "author_papers",
];

/// Indicator → feature → coefficient. `None` marks an undefined coefficient
/// (a zero-variance column).
pub type CorrelationTable = BTreeMap<String, BTreeMap<String, Option<f64>>>;

/// Correlations between each impact indicator and each bibliometric feature.
pub fn correlation_matrix(records: &[LabeledRecord], kind: CorrelationKind) -> Result<CorrelationTable> {
    if records.len() < 3 {
        return Err(Error::domain(format!(
            "correlation analysis needs at least 3 records, got {}",
            records.len()
        )));
    }
    let indicators: [Vec<f64>; 3] = [
        records.iter().map(|r| r.jif).collect(),
        records.iter().map(|r| r.record.citations as f64).collect(),
        records.iter().map(|r| r.aif).collect(),
    ];
    let features: [Vec<f64>; 6] = [
        records.iter().map(|r| r.record.reference_count as f64).collect(),
        records.iter().map(|r| r.record.reference_age).collect(),
        records.iter().map(|r| r.record.impact_reference).collect(),
        records.iter().map(|r| r.record.h_index as f64).collect(),
        records.iter().map(|r| r.record.author_cit as f64).collect(),
        records.iter().map(|r| r.record.author_papers as f64).collect(),
    ];
    if indicators
        .iter()
        .chain(features.iter())
        .any(|col| col.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::domain("correlation input contains non-finite values"));
    }

    let mut table = CorrelationTable::new();
    for (name, ind) in INDICATORS.iter().zip(&indicators) {
        let row = table.entry(name.to_string()).or_default();
        for (feature, col) in CORRELATION_FEATURES.iter().zip(&features) {
            row.insert(feature.to_string(), correlation(ind, col, kind));
        }
    }
    Ok(table)
}

/// Correlation coefficient of two equal-length columns; `None` when either
/// column has zero variance.
pub fn correlation(x: &[f64], y: &[f64], kind: CorrelationKind) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "correlation columns differ in length");
    match kind {
        CorrelationKind::Pearson => pearson(x, y),
        CorrelationKind::Spearman => pearson(&ranks(x), &ranks(y)),
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fractional ranks (1-based), ties receive the average of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn jif_examples() {
        assert_eq!(compute_jif(&CitationWindow::new(100, 100, 50, 50)).unwrap(), 2.0);
        assert_eq!(compute_jif(&CitationWindow::new(0, 0, 10, 10)).unwrap(), 0.0);
        let jif = compute_jif(&CitationWindow::new(387, 269, 41, 57)).unwrap();
        assert!(close(jif, 656.0 / 98.0, 1e-12));
        assert!(close(jif, 6.6938775, 1e-7));
    }

    #[test]
    fn jif_rejects_empty_window() {
        assert!(matches!(
            compute_jif(&CitationWindow::new(5, 5, 0, 0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn aif_examples() {
        let params = AifParams::new(0.4, 29.0).unwrap();
        let s = compute_aif(29, 6.0, &params).unwrap();
        assert_eq!(s.p, 2.0);
        assert!(close(s.aif, 26.8f64.ln(), 1e-12));
        assert!(close(s.aif, 3.28840, 1e-5));

        let s = compute_aif(0, 2.0, &params).unwrap();
        assert_eq!(s.p, 2.0);
        assert!(close(s.aif, 0.18232, 1e-5));

        let s = compute_aif(10, 100.0, &params).unwrap();
        assert_eq!(s.p, 0.5);
        assert!(close(s.aif, 4.12713, 1e-5));
    }

    #[test]
    fn aif_domain_errors() {
        let params = AifParams::new(0.4, 29.0).unwrap();
        assert!(compute_aif(3, 0.0, &params).is_err());
        assert!(compute_aif(3, -1.0, &params).is_err());
        assert!(AifParams::new(0.5, 29.0).is_err());
        assert!(AifParams::new(0.0, 29.0).is_err());
        assert!(AifParams::new(0.4, 0.0).is_err());
    }

    #[test]
    fn thresholds_are_inclusive() {
        assert_eq!(label_journal(6.0), ImpactLabel::HighImpact);
        assert_eq!(label_journal(5.999), ImpactLabel::Others);
        assert_eq!(label_journal(0.0), ImpactLabel::Others);
        assert_eq!(label_article(5.0), ImpactLabel::HighImpact);
        assert_eq!(label_article(3.288), ImpactLabel::Others);
        assert_eq!(label_article(-1.0), ImpactLabel::Others);
    }

    #[test]
    fn sensitivity_examples() {
        let h = CitationHistory::new("a", 10, 30).unwrap();
        assert_eq!(sensitivity_gap_with_p(&h, 0.4, 2.0), (16.0, 20.0));
        let h = CitationHistory::new("b", 7, 7).unwrap();
        assert_eq!(sensitivity_gap_with_p(&h, 0.4, 2.0), (0.0, 0.0));
        let h = CitationHistory::new("c", 0, 100).unwrap();
        assert_eq!(sensitivity_gap_with_p(&h, 0.1, 0.5), (5.0, 100.0));
        // p derived from the journal: cits_m / jif = 29 / 6 clamps to 2
        let params = AifParams::new(0.4, 29.0).unwrap();
        let h = CitationHistory::new("a", 10, 30).unwrap();
        assert_eq!(sensitivity_gap(&h, &params, 6.0).unwrap(), (16.0, 20.0));
    }

    #[test]
    fn history_must_be_cumulative() {
        assert!(CitationHistory::new("x", 9, 3).is_err());
    }

    #[test]
    fn stability_examples() {
        let r = stability_report(&[CitationHistory::new("a", 25, 25).unwrap()], 20).unwrap();
        assert_eq!(
            (r.others_4y, r.impactful_4y, r.others_8y, r.impactful_8y, r.flip_count),
            (0, 1, 0, 1, 0)
        );
        let r = stability_report(&[CitationHistory::new("a", 15, 25).unwrap()], 20).unwrap();
        assert_eq!(
            (r.others_4y, r.impactful_4y, r.others_8y, r.impactful_8y, r.flip_count),
            (1, 0, 0, 1, 1)
        );
        // threshold is strict: exactly 20 citations is not impactful
        let r = stability_report(&[CitationHistory::new("a", 20, 21).unwrap()], 20).unwrap();
        assert_eq!(r.flip_count, 1);
        assert!(stability_report(&[], 20).is_err());
    }

    #[test]
    fn histories_csv() {
        let data = "article_id,cits_4y,cits_8y\nhep-1,3,9\nhep-2,30,31\n";
        let hs = read_histories(data.as_bytes()).unwrap();
        assert_eq!(hs.len(), 2);
        assert_eq!(hs[1], CitationHistory::new("hep-2", 30, 31).unwrap());
        assert!(read_histories("article_id,cits_4y,cits_8y\nx,5,1\n".as_bytes()).is_err());
    }

    #[test]
    fn correlation_extremes() {
        let x = [1.0, 4.0, 2.0, 8.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(close(correlation(&x, &x, CorrelationKind::Pearson).unwrap(), 1.0, 1e-12));
        assert!(close(correlation(&x, &neg, CorrelationKind::Pearson).unwrap(), -1.0, 1e-12));
        assert!(close(correlation(&x, &neg, CorrelationKind::Spearman).unwrap(), -1.0, 1e-12));
        assert_eq!(correlation(&x, &[3.0; 4], CorrelationKind::Pearson), None);
    }

    #[test]
    fn spearman_ties_use_average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        // monotone but nonlinear relation: Spearman is exactly 1
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.powi(3)).collect();
        assert!(close(correlation(&x, &y, CorrelationKind::Spearman).unwrap(), 1.0, 1e-12));
        assert!(correlation(&x, &y, CorrelationKind::Pearson).unwrap() < 1.0);
    }
}
