//! Classical comparison classifiers over the one-hot + metadata features:
//! k-nearest neighbours, linear SVM, logistic regression and ZeroR.
//!
//! A [`Baseline`] holds hyperparameters only; [`Baseline::fit`] returns a
//! [`FittedBaseline`], the only type that can predict.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::config::BaselineConfig;
use crate::corpus::{featurize_baseline, BaselineVocab, LabeledRecord, Normalizer, Task};
use crate::training::EvalReport;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Knn,
    Svm,
    Lr,
    Zeror,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [BaselineKind::Knn, BaselineKind::Svm, BaselineKind::Lr, BaselineKind::Zeror];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::Knn => "knn",
            BaselineKind::Svm => "svm",
            BaselineKind::Lr => "lr",
            BaselineKind::Zeror => "zeror",
        }
    }
}

/// Feature rows with their labels and record ids (ids break distance ties).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, x: Vec<Vec<f64>>, y: Vec<usize>) -> Result<Self> {
        if ids.len() != x.len() || x.len() != y.len() {
            return Err(Error::domain(format!(
                "dataset columns disagree: {} ids, {} rows, {} labels",
                ids.len(),
                x.len(),
                y.len()
            )));
        }
        if let Some(w) = x.first().map(Vec::len) {
            if x.iter().any(|r| r.len() != w) {
                return Err(Error::domain("feature rows have different widths"));
            }
        }
        if y.iter().any(|&c| c > 1) {
            return Err(Error::domain("labels must be 0 or 1"));
        }
        Ok(Self { ids, x, y })
    }

    /// Featurizes labeled records with a vocabulary and normalizer fitted
    /// on the training split.
    pub fn from_records(records: &[LabeledRecord], vocab: &BaselineVocab, normalizer: &Normalizer, task: Task) -> Result<Self> {
        Self::new(
            records.iter().map(|r| r.record.id.clone()).collect(),
            records
                .iter()
                .map(|r| featurize_baseline(&r.record, vocab, normalizer).to_vec())
                .collect(),
            records.iter().map(|r| r.class(task)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// An unfitted baseline: kind plus hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub k: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Baseline {
    pub fn new(kind: BaselineKind, cfg: &BaselineConfig) -> Self {
        Self {
            kind,
            k: cfg.knn_k,
            l2: cfg.l2,
            learning_rate: cfg.learning_rate,
            iterations: cfg.iterations,
        }
    }

    pub fn fit(&self, data: &Dataset) -> Result<FittedBaseline> {
        if data.is_empty() {
            return Err(Error::domain("cannot fit a baseline on an empty training set"));
        }
        let state = match self.kind {
            BaselineKind::Zeror => State::Zeror(majority(&data.y)),
            BaselineKind::Knn => {
                if self.k == 0 {
                    return Err(Error::Config("knn needs k ≥ 1".into()));
                }
                State::Knn {
                    k: self.k,
                    train: data.clone(),
                }
            }
            BaselineKind::Svm | BaselineKind::Lr => {
                if data.y.iter().all(|&c| c == data.y[0]) {
                    log::warn!(
                        "{} trained on a single-class set; the model is degenerate",
                        self.kind.as_str()
                    );
                }
                let loss = if self.kind == BaselineKind::Svm { Margin::Hinge } else { Margin::Logistic };
                let (model, history) = descend(data, loss, self.l2, self.learning_rate, self.iterations);
                State::Linear { model, history }
            }
        };
        Ok(FittedBaseline { kind: self.kind, state })
    }
}

fn majority(y: &[usize]) -> usize {
    let ones = y.iter().filter(|&&c| c == 1).count();
    usize::from(ones > y.len() - ones)
}

#[derive(Debug, Clone, PartialEq)]
enum State {
    Zeror(usize),
    Knn { k: usize, train: Dataset },
    Linear { model: LinearModel, history: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.b + self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Margin {
    Hinge,
    Logistic,
}

/// `softplus(-m) = ln(1 + e^{-m})`, stable for large |m|.
fn log1p_exp_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

fn objective(data: &Dataset, model: &LinearModel, loss: Margin, l2: f64) -> f64 {
    let n = data.len() as f64;
    let data_term: f64 = data
        .x
        .iter()
        .zip(&data.y)
        .map(|(x, &y)| {
            let m = signed(y) * model.score(x);
            match loss {
                Margin::Hinge => (1.0 - m).max(0.0),
                Margin::Logistic => log1p_exp_neg(m),
            }
        })
        .sum::<f64>()
        / n;
    data_term + 0.5 * l2 * model.w.iter().map(|w| w * w).sum::<f64>()
}

fn signed(y: usize) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

fn gradient(data: &Dataset, model: &LinearModel, loss: Margin, l2: f64) -> (Vec<f64>, f64) {
    let n = data.len() as f64;
    let mut gw: Vec<f64> = model.w.iter().map(|w| l2 * w).collect();
    let mut gb = 0.0;
    for (x, &y) in data.x.iter().zip(&data.y) {
        let s = signed(y);
        let m = s * model.score(x);
        // d(loss)/d(margin)
        let dm = match loss {
            Margin::Hinge => {
                if m < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Margin::Logistic => -1.0 / (1.0 + m.exp()),
        };
        if dm != 0.0 {
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += dm * s * xi / n;
            }
            gb += dm * s / n;
        }
    }
    (gw, gb)
}

/// Gradient descent with step halving: a step that would raise the
/// objective is halved until it does not (the step is reset every
/// iteration), so the recorded objective never increases.
fn descend(data: &Dataset, loss: Margin, l2: f64, step: f64, iterations: usize) -> (LinearModel, Vec<f64>) {
    let dim = data.x[0].len();
    let mut model = LinearModel { w: vec![0.0; dim], b: 0.0 };
    let mut current = objective(data, &model, loss, l2);
    let mut history = vec![current];
    for _ in 0..iterations {
        let (gw, gb) = gradient(data, &model, loss, l2);
        let mut eta = step;
        for _ in 0..40 {
            let trial = LinearModel {
                w: model.w.iter().zip(&gw).map(|(w, g)| w - eta * g).collect(),
                b: model.b - eta * gb,
            };
            let value = objective(data, &trial, loss, l2);
            if value <= current {
                model = trial;
                current = value;
                break;
            }
            eta /= 2.0;
        }
        history.push(current);
    }
    (model, history)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedBaseline {
    kind: BaselineKind,
    state: State,
}

impl FittedBaseline {
    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    /// Objective value after each gradient iteration (linear models only).
    pub fn loss_history(&self) -> Option<&[f64]> {
        match &self.state {
            State::Linear { history, .. } => Some(history),
            _ => None,
        }
    }

    pub fn linear_model(&self) -> Option<&LinearModel> {
        match &self.state {
            State::Linear { model, .. } => Some(model),
            _ => None,
        }
    }

    pub fn predict_one(&self, x: &[f64]) -> usize {
        match &self.state {
            State::Zeror(c) => *c,
            State::Linear { model, .. } => usize::from(model.score(x) > 0.0),
            State::Knn { k, train } => {
                let mut order: Vec<(f64, &str, usize)> = train
                    .x
                    .iter()
                    .zip(&train.ids)
                    .zip(&train.y)
                    .map(|((t, id), &y)| (sq_dist(t, x), id.as_str(), y))
                    .collect();
                order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1)));
                let votes = order.iter().take(*k).filter(|(_, _, y)| *y == 1).count();
                let k = (*k).min(order.len());
                usize::from(votes > k - votes)
            }
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<usize> {
        x.iter().map(|r| self.predict_one(r)).collect()
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<EvalReport> {
        EvalReport::from_predictions(&self.predict(&data.x), &data.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(x: Vec<Vec<f64>>, y: Vec<usize>) -> Dataset {
        let ids = (0..y.len()).map(|i| format!("r{i:03}")).collect();
        Dataset::new(ids, x, y).unwrap()
    }

    fn baseline(kind: BaselineKind) -> Baseline {
        Baseline::new(kind, &BaselineConfig::default())
    }

    #[test]
    fn zeror_majority_and_ties() {
        let d = data(vec![vec![0.0]; 3], vec![1, 1, 0]);
        let m = baseline(BaselineKind::Zeror).fit(&d).unwrap();
        assert_eq!(m.predict(&[vec![5.0]]), vec![1]);
        let d = data(vec![vec![0.0]; 2], vec![1, 0]);
        assert_eq!(baseline(BaselineKind::Zeror).fit(&d).unwrap().predict_one(&[0.0]), 0);
    }

    #[test]
    fn linear_models_separate_one_dimensional_data() {
        let d = data(vec![vec![0.0], vec![1.0]], vec![0, 1]);
        for kind in [BaselineKind::Lr, BaselineKind::Svm] {
            let m = baseline(kind).fit(&d).unwrap();
            assert_eq!(m.evaluate(&d).unwrap().accuracy, 1.0, "{kind:?}");
        }
    }

    #[test]
    fn knn_k1_returns_own_label() {
        let d = data(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 5.0]], vec![0, 1, 0]);
        let m = Baseline { k: 1, ..baseline(BaselineKind::Knn) }.fit(&d).unwrap();
        for (x, y) in d.x.iter().zip(&d.y) {
            assert_eq!(m.predict_one(x), *y);
        }
    }

    #[test]
    fn knn_vote_tie_goes_to_smaller_label() {
        let d = data(vec![vec![0.0], vec![1.0]], vec![1, 0]);
        let m = Baseline { k: 2, ..baseline(BaselineKind::Knn) }.fit(&d).unwrap();
        assert_eq!(m.predict_one(&[0.1]), 0);
    }

    #[test]
    fn knn_distance_tie_goes_to_smaller_id() {
        // both training points are equidistant from the query
        let d = Dataset::new(vec!["b".into(), "a".into()], vec![vec![-1.0], vec![1.0]], vec![1, 0]).unwrap();
        let m = Baseline { k: 1, ..baseline(BaselineKind::Knn) }.fit(&d).unwrap();
        assert_eq!(m.predict_one(&[0.0]), 0);
    }

    #[test]
    fn descent_is_monotone() {
        let d = data(
            vec![vec![0.0, 1.0], vec![1.0, 0.5], vec![0.3, 0.2], vec![0.9, 0.9], vec![0.5, 0.1]],
            vec![0, 1, 0, 1, 1],
        );
        for kind in [BaselineKind::Lr, BaselineKind::Svm] {
            let m = baseline(kind).fit(&d).unwrap();
            let h = m.loss_history().unwrap();
            assert_eq!(h.len(), 501);
            assert!(h.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn empty_training_set_is_error() {
        let d = data(vec![], vec![]);
        assert!(baseline(BaselineKind::Knn).fit(&d).is_err());
    }
}
