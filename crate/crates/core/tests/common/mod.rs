#![allow(dead_code)]

use std::path::PathBuf;

use imac_core::config::ImacConfig;
use imac_core::corpus::{ingest, label_corpus, read_journals, split, LabeledRecord, Split, Task, YearRange};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic")
}

/// The bundled 200-record synthetic corpus, labeled with default AIF
/// parameters.
pub fn bundled_corpus() -> Vec<LabeledRecord> {
    let dir = data_dir();
    let articles = ingest(&dir.join("articles.jsonl"), &YearRange::default()).unwrap();
    assert!(articles.rejections.is_empty());
    let journals = read_journals(&dir.join("journals.jsonl")).unwrap();
    label_corpus(&articles.records, &journals, 0.4, None).unwrap().records
}

pub fn bundled_splits(cfg: &ImacConfig) -> Split<LabeledRecord> {
    let records = bundled_corpus();
    split(&records, |r| r.class(Task::JournalImpact), &cfg.split).unwrap()
}

/// Desk-scale configuration: the small built-in encoder at dimension `d`.
/// The from-scratch encoder uses a learning rate of 1e-3.
pub fn desk_config(d: usize, epochs: usize) -> ImacConfig {
    let mut cfg = ImacConfig::default();
    cfg.model.encoder.d = d;
    cfg.model.encoder.max_positions = 64;
    cfg.tokenizer.title_max_len = 16;
    cfg.tokenizer.abstract_max_len = 64;
    cfg.train.optimizer.learning_rate = 1e-3;
    cfg.train.epochs = epochs;
    cfg.train.seed = 42;
    cfg.validate().unwrap();
    cfg
}
