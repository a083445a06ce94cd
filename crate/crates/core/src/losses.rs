//! Cross-entropy, supervised contrastive loss and their weighted sum, each
//! with an analytic gradient so the training loop can feed them back into
//! the graph.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower clamp applied to probabilities before taking their log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Floor on feature norms during l2 normalization.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureNormalization {
    #[default]
    L2,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Cross-entropy averaged over the batch, contrastive loss averaged
    /// over anchors that have positives.
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub tau: f64,
    pub feature_normalization: FeatureNormalization,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            tau: 0.1,
            feature_normalization: FeatureNormalization::L2,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// One mini-batch as seen by the losses. Rows of `features` and
/// `probabilities` line up with `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub probabilities: Array2<f64>,
}

impl Batch {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, probabilities: Array2<f64>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::domain("empty batch"));
        }
        if features.nrows() != n || probabilities.nrows() != n {
            return Err(Error::domain(format!(
                "batch rows disagree: {} labels, {} feature rows, {} probability rows",
                n,
                features.nrows(),
                probabilities.nrows()
            )));
        }
        if probabilities.ncols() != 2 {
            return Err(Error::Dimension {
                context: "class probabilities",
                expected: 2,
                actual: probabilities.ncols(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::domain(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self {
            features,
            labels,
            probabilities,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Returns the cross-entropy and its gradient with respect to the
/// probability matrix.
pub fn cross_entropy_grad(batch: &Batch, reduction: Reduction) -> (f64, Array2<f64>) {
    let n = batch.len();
    let scale = match reduction {
        Reduction::Mean => 1.0 / n as f64,
        Reduction::Sum => 1.0,
    };
    let mut loss = 0.0;
    let mut grad = Array2::zeros(batch.probabilities.dim());
    for (i, &y) in batch.labels.iter().enumerate() {
        let p = batch.probabilities[[i, y]];
        let clamped = p.max(PROB_CLAMP);
        loss -= clamped.ln();
        if p > PROB_CLAMP {
            grad[[i, y]] = -scale / p;
        }
    }
    (loss * scale, grad)
}

pub fn cross_entropy(batch: &Batch, reduction: Reduction) -> f64 {
    cross_entropy_grad(batch, reduction).0
}

fn normalize_rows(f: &Array2<f64>, mode: FeatureNormalization) -> (Array2<f64>, Array1<f64>) {
    match mode {
        FeatureNormalization::None => (f.clone(), Array1::ones(f.nrows())),
        FeatureNormalization::L2 => {
            let norms = f.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_FLOOR));
            let mut z = f.clone();
            for (mut row, &n) in z.rows_mut().into_iter().zip(norms.iter()) {
                row /= n;
            }
            (z, norms)
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Returns the supervised contrastive loss and its gradient with respect
/// to the raw (pre-normalization) features.
pub fn supcon_grad(batch: &Batch, cfg: &LossConfig) -> Result<(f64, Array2<f64>)> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::domain(format!("contrastive loss needs at least 2 samples, got {n}")));
    }
    let (z, norms) = normalize_rows(&batch.features, cfg.feature_normalization);
    let sim = z.dot(&z.t()) / cfg.tau;
    let labels = &batch.labels;

    // ds[i][j]: derivative of the summed anchor terms w.r.t. sim[i][j]
    let mut ds = Array2::<f64>::zeros((n, n));
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let others = (0..n).filter(|&a| a != i).map(|a| sim[[i, a]]);
        let lse = log_sum_exp(others);
        let k = positives.len() as f64;
        total += lse - positives.iter().map(|&p| sim[[i, p]]).sum::<f64>() / k;
        for a in (0..n).filter(|&a| a != i) {
            ds[[i, a]] += (sim[[i, a]] - lse).exp();
        }
        for &p in &positives {
            ds[[i, p]] -= 1.0 / k;
        }
    }
    if anchors == 0 {
        return Ok((0.0, Array2::zeros(batch.features.dim())));
    }
    let scale = match cfg.reduction {
        Reduction::Mean => 1.0 / anchors as f64,
        Reduction::Sum => 1.0,
    };
    ds *= scale / cfg.tau;
    // sim = z zᵀ / τ, so dz = (ds + dsᵀ) z / τ (the 1/τ is folded into ds)
    let sym = &ds + &ds.t();
    let dz = sym.dot(&z);
    let df = match cfg.feature_normalization {
        FeatureNormalization::None => dz,
        FeatureNormalization::L2 => {
            let mut df = dz;
            for i in 0..n {
                let zi = z.row(i);
                let proj = zi.dot(&df.row(i));
                let mut row = df.row_mut(i);
                row.scaled_add(-proj, &zi);
                row /= norms[i];
            }
            df
        }
    };
    Ok((total * scale, df))
}

pub fn supcon(batch: &Batch, cfg: &LossConfig) -> Result<f64> {
    Ok(supcon_grad(batch, cfg)?.0)
}

/// The weighted objective and its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub cross_entropy: f64,
    pub supcon: f64,
    pub total: f64,
}

/// Gradients of the combined objective with respect to the batch inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub parts: LossParts,
    pub d_features: Array2<f64>,
    pub d_probabilities: Array2<f64>,
}

/// `L_c + α·L_s`. With `α = 0` the contrastive term is not evaluated, so
/// single-sample batches are accepted.
pub fn total_loss_grad(batch: &Batch, cfg: &LossConfig) -> Result<LossGrad> {
    cfg.validate()?;
    let (ce, d_probabilities) = cross_entropy_grad(batch, cfg.reduction);
    let (sc, d_features) = if cfg.alpha > 0.0 {
        let (s, g) = supcon_grad(batch, cfg)?;
        (s, g * cfg.alpha)
    } else {
        (0.0, Array2::zeros(batch.features.dim()))
    };
    Ok(LossGrad {
        parts: LossParts {
            cross_entropy: ce,
            supcon: sc,
            total: combine(ce, sc, cfg.alpha),
        },
        d_features,
        d_probabilities,
    })
}

pub fn total_loss(batch: &Batch, cfg: &LossConfig) -> Result<LossParts> {
    Ok(total_loss_grad(batch, cfg)?.parts)
}

pub fn combine(cross_entropy: f64, supcon: f64, alpha: f64) -> f64 {
    cross_entropy + alpha * supcon
}
