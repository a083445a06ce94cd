use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Binary confusion counts and the derived metrics; the positive class is
/// high impact (class 1). Undefined ratios serialize as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl EvalReport {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Result<Self> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::domain("cannot evaluate an empty split"));
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Ok(Self {
            accuracy: (tp + tn) as f64 / total as f64,
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        })
    }

    /// `predicted[i]` and `actual[i]` are class indices in {0, 1}.
    pub fn from_predictions(predicted: &[usize], actual: &[usize]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::domain(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in predicted.iter().zip(actual) {
            match (p, y) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 0) => tn += 1,
                (0, 1) => fn_ += 1,
                _ => return Err(Error::domain(format!("class pair ({p}, {y}) outside {{0, 1}}"))),
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Empirical 0-1 risk.
    pub fn error_rate(&self) -> f64 {
        (self.fp + self.fn_) as f64 / self.total() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Mean and sample standard deviation of one metric across runs. Runs
/// where the metric is undefined are left out; `n` counts the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        let n = v.len();
        if n == 0 {
            return Self {
                mean: None,
                sd: None,
                n,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n == 1 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            mean: Some(mean),
            sd: Some(sd),
            n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

impl MetricSummary {
    pub fn of(reports: &[EvalReport]) -> Self {
        Self {
            accuracy: Summary::of(reports.iter().map(|r| Some(r.accuracy))),
            precision: Summary::of(reports.iter().map(|r| r.precision)),
            recall: Summary::of(reports.iter().map(|r| r.recall)),
            f1: Summary::of(reports.iter().map(|r| r.f1)),
        }
    }
}
