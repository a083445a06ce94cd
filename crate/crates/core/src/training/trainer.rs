use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::Featurizer;
use super::metrics::EvalReport;
use crate::bibliometrics::ImpactLabel;
use crate::config::{ImacConfig, Variant};
use crate::corpus::{LabeledRecord, Split, Task};
use crate::fusion::{FeatureBundle, ImacModel};
use crate::losses::{total_loss_grad, Batch, LossConfig, LossParts, Reduction};
use crate::nn::{Adam, Graph, ParamId, Params};
use crate::{Error, Result};

/// Independent random streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    Dropout = 2,
    Sampling = 3,
}

pub fn rng_stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_cross_entropy: f64,
    pub train_supcon: f64,
    /// Accuracy of the training-mode (dropout on) forward passes.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ImacConfig,
    pub seed: u64,
    pub variant: Variant,
    pub vocab_size: usize,
    pub parameter_count: usize,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (best validation accuracy, later
    /// epochs winning ties).
    pub best_epoch: usize,
    /// Final metrics per split name (`train`, `val`, `test`).
    pub reports: BTreeMap<String, EvalReport>,
    pub wall_time_secs: f64,
}

/// A trained network together with its featurizer and run record.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ImacConfig,
    pub model: ImacModel,
    pub params: Params,
    pub featurizer: Featurizer,
    pub manifest: RunManifest,
}

/// Class decision and probabilities for one article.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: ImpactLabel,
    pub p: [f64; 2],
}

impl Prediction {
    fn from_probs(p: [f64; 2]) -> Self {
        let class = usize::from(p[1] > p[0]);
        Self {
            label: ImpactLabel::from_class(class),
            p,
        }
    }
}

/// Loss, training-mode correctness count and parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub parts: LossParts,
    pub correct: usize,
    pub grads: Vec<(ParamId, Array2<f64>)>,
}

/// Forward and backward pass of the combined objective over one batch.
/// Dropout is active iff `dropout` is given. A single-sample batch has no
/// contrastive pairs, so only the cross-entropy applies to it.
pub fn batch_objective(
    model: &ImacModel,
    params: &Params,
    bundles: &[FeatureBundle],
    labels: &[usize],
    loss: &LossConfig,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<BatchOutcome> {
    let mut g = Graph::new(params);
    let vars = model.batch_graph(&mut g, bundles, dropout)?;
    let probs = g.value(vars.probabilities).clone();
    let batch = Batch::new(g.value(vars.features).clone(), labels.to_vec(), probs)?;
    let cfg = if batch.len() < 2 {
        LossConfig { alpha: 0.0, ..*loss }
    } else {
        *loss
    };
    let lg = total_loss_grad(&batch, &cfg)?;
    let correct = batch
        .probabilities
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(p, &y)| usize::from(p[1] > p[0]) == y)
        .count();
    let mut seeds = vec![(vars.probabilities, lg.d_probabilities)];
    if cfg.alpha > 0.0 {
        seeds.push((vars.features, lg.d_features));
    }
    let grads = g.backward(&seeds).params();
    Ok(BatchOutcome {
        parts: lg.parts,
        correct,
        grads,
    })
}

fn loss_only(model: &ImacModel, params: &Params, bundles: &[FeatureBundle], labels: &[usize], loss: &LossConfig) -> Result<LossParts> {
    let mut g = Graph::new(params);
    let vars = model.batch_graph(&mut g, bundles, None)?;
    let batch = Batch::new(
        g.value(vars.features).clone(),
        labels.to_vec(),
        g.value(vars.probabilities).clone(),
    )?;
    let cfg = if batch.len() < 2 {
        LossConfig { alpha: 0.0, ..*loss }
    } else {
        *loss
    };
    Ok(total_loss_grad(&batch, &cfg)?.parts)
}

/// Accumulates per-batch losses into an epoch figure: the size-weighted
/// mean for mean-reduced losses, the plain sum otherwise.
struct LossAccumulator {
    reduction: Reduction,
    total: f64,
    ce: f64,
    sc: f64,
    count: usize,
}

impl LossAccumulator {
    fn new(reduction: Reduction) -> Self {
        Self {
            reduction,
            total: 0.0,
            ce: 0.0,
            sc: 0.0,
            count: 0,
        }
    }

    fn add(&mut self, parts: &LossParts, n: usize) {
        let w = match self.reduction {
            Reduction::Mean => n as f64,
            Reduction::Sum => 1.0,
        };
        self.total += w * parts.total;
        self.ce += w * parts.cross_entropy;
        self.sc += w * parts.supcon;
        self.count += n;
    }

    fn finish(&self) -> (f64, f64, f64) {
        let div = match self.reduction {
            Reduction::Mean => self.count.max(1) as f64,
            Reduction::Sum => 1.0,
        };
        (self.total / div, self.ce / div, self.sc / div)
    }
}

/// Predictions with dropout disabled.
pub fn predict_bundles(model: &ImacModel, params: &Params, bundles: &[FeatureBundle]) -> Result<Vec<Prediction>> {
    bundles
        .iter()
        .map(|b| {
            let t = model.forward(params, b)?;
            Ok(Prediction::from_probs([t.p[0], t.p[1]]))
        })
        .collect()
}

fn report(model: &ImacModel, params: &Params, bundles: &[FeatureBundle], labels: &[usize]) -> Result<EvalReport> {
    let predicted: Vec<usize> = predict_bundles(model, params, bundles)?
        .iter()
        .map(|p| p.label.class())
        .collect();
    EvalReport::from_predictions(&predicted, labels)
}

fn validation_loss(
    model: &ImacModel,
    params: &Params,
    bundles: &[FeatureBundle],
    labels: &[usize],
    cfg: &ImacConfig,
) -> Result<f64> {
    let mut acc = LossAccumulator::new(cfg.loss.reduction);
    for (b, y) in bundles.chunks(cfg.train.batch_size).zip(labels.chunks(cfg.train.batch_size)) {
        acc.add(&loss_only(model, params, b, y, &cfg.loss)?, b.len());
    }
    Ok(acc.finish().0)
}

fn labels_of(records: &[LabeledRecord], task: Task) -> Vec<usize> {
    records.iter().map(|r| r.class(task)).collect()
}

/// Trains IMAC on `splits.train`, keeping the parameters of the epoch with
/// the best validation accuracy, and evaluates every nonempty split.
pub fn train(splits: &Split<LabeledRecord>, cfg: &ImacConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::domain("training needs nonempty train and validation splits"));
    }
    let started = Instant::now();
    let task = cfg.train.task;
    let seed = cfg.train.seed;

    let articles: Vec<_> = splits.train.iter().map(|r| r.record.clone()).collect();
    let featurizer = Featurizer::fit(&articles, cfg)?;
    let train_x = featurizer.bundles(splits.train.iter().map(|r| &r.record))?;
    let val_x = featurizer.bundles(splits.val.iter().map(|r| &r.record))?;
    let train_y = labels_of(&splits.train, task);
    let val_y = labels_of(&splits.val, task);

    let init_seed = rng_stream(seed, Stream::Init).next_u64();
    let (model, mut params) = ImacModel::init(&cfg.model, featurizer.vocab_size(), init_seed)?;
    let frozen: HashSet<ParamId> = if cfg.model.encoder.freeze {
        model.encoder_param_ids().into_iter().collect()
    } else {
        HashSet::new()
    };
    let mut shuffle_rng = rng_stream(seed, Stream::Shuffle);
    let mut dropout_rng = rng_stream(seed, Stream::Dropout);
    let mut opt = Adam::new(cfg.train.optimizer, &params);

    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    let mut best: Option<(f64, usize, Params)> = None;
    for epoch in 1..=cfg.train.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut acc = LossAccumulator::new(cfg.loss.reduction);
        let mut correct = 0;
        for (b, idx) in order.chunks(cfg.train.batch_size).enumerate() {
            let bundles: Vec<FeatureBundle> = idx.iter().map(|&i| train_x[i].clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_y[i]).collect();
            let out = batch_objective(&model, &params, &bundles, &labels, &cfg.loss, Some(&mut dropout_rng))?;
            if !out.parts.total.is_finite() || out.grads.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
                let ids: Vec<&str> = idx.iter().map(|&i| splits.train[i].record.id.as_str()).collect();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    ids: ids.join(","),
                });
            }
            acc.add(&out.parts, idx.len());
            correct += out.correct;
            let grads: Vec<_> = out.grads.into_iter().filter(|(id, _)| !frozen.contains(id)).collect();
            opt.step(&mut params, &grads);
        }
        let (train_loss, train_ce, train_sc) = acc.finish();
        let val_loss = validation_loss(&model, &params, &val_x, &val_y, cfg)?;
        let val_accuracy = report(&model, &params, &val_x, &val_y)?.accuracy;
        let record = EpochRecord {
            epoch,
            train_loss,
            train_cross_entropy: train_ce,
            train_supcon: train_sc,
            train_accuracy: correct as f64 / train_x.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4} acc {:.3}, val loss {val_loss:.4} acc {val_accuracy:.3}",
            record.train_accuracy
        );
        epochs.push(record);
        if best.as_ref().is_none_or(|(a, _, _)| val_accuracy >= *a) {
            best = Some((val_accuracy, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");

    let mut reports = BTreeMap::new();
    reports.insert("train".to_string(), report(&model, &params, &train_x, &train_y)?);
    reports.insert("val".to_string(), report(&model, &params, &val_x, &val_y)?);
    if !splits.test.is_empty() {
        let test_x = featurizer.bundles(splits.test.iter().map(|r| &r.record))?;
        reports.insert("test".to_string(), report(&model, &params, &test_x, &labels_of(&splits.test, task))?);
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        seed,
        variant: cfg.variant(),
        vocab_size: featurizer.vocab_size(),
        parameter_count: params.scalar_count(),
        epochs,
        best_epoch,
        reports,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainedModel {
        config: cfg.clone(),
        model,
        params,
        featurizer,
        manifest,
    })
}

impl TrainedModel {
    pub fn predict(&self, record: &crate::corpus::ArticleRecord) -> Result<Prediction> {
        let bundle = self.featurizer.bundle(record)?;
        Ok(predict_bundles(&self.model, &self.params, std::slice::from_ref(&bundle))?[0])
    }

    pub fn evaluate(&self, records: &[LabeledRecord], task: Task) -> Result<EvalReport> {
        if records.is_empty() {
            return Err(Error::domain("cannot evaluate an empty split"));
        }
        let bundles = self.featurizer.bundles(records.iter().map(|r| &r.record))?;
        report(&self.model, &self.params, &bundles, &labels_of(records, task))
    }
}

/// Metrics of a trained model on a labeled split.
pub fn evaluate(trained: &TrainedModel, records: &[LabeledRecord], task: Task) -> Result<EvalReport> {
    trained.evaluate(records, task)
}
