mod common;

use imac_core::corpus::Task;
use imac_core::training::{export_embeddings, run_repeated, train, TrainedModel};

#[test]
fn checkpoint_round_trip_reproduces_metrics() {
    let cfg = common::desk_config(16, 2);
    let splits = common::bundled_splits(&cfg);
    let trained = train(&splits, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    trained.save(dir.path()).unwrap();
    let loaded = TrainedModel::load(dir.path()).unwrap();

    let before = trained.evaluate(&splits.test, Task::JournalImpact).unwrap();
    let after = loaded.evaluate(&splits.test, Task::JournalImpact).unwrap();
    assert_eq!(before.to_json().unwrap(), after.to_json().unwrap());
    for r in &splits.val {
        assert_eq!(trained.predict(&r.record).unwrap(), loaded.predict(&r.record).unwrap());
    }
}

#[test]
fn loading_without_params_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let err = TrainedModel::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("json"), "{err}");
}

#[test]
fn contrastive_weight_changes_the_trajectory() {
    let with = common::desk_config(16, 2);
    let mut without = with.clone();
    without.loss.alpha = 0.0;
    let splits = common::bundled_splits(&with);
    let a = train(&splits, &with).unwrap().manifest;
    let b = train(&splits, &without).unwrap().manifest;
    assert!(b.epochs.iter().all(|e| e.train_supcon == 0.0));
    assert!(a.epochs.iter().all(|e| e.train_supcon > 0.0));
    assert_ne!(a.epochs[0].train_cross_entropy, b.epochs[0].train_cross_entropy);
}

#[test]
fn single_run_summary_has_zero_spread() {
    let mut cfg = common::desk_config(8, 1);
    cfg.train.num_runs = 1;
    let splits = common::bundled_splits(&cfg);
    let runs = run_repeated(&splits, &cfg).unwrap();
    assert_eq!(runs.runs.len(), 1);
    assert_eq!(runs.val.accuracy.sd, Some(0.0));
    assert_eq!(runs.val.accuracy.n, 1);
    assert_eq!(runs.val.accuracy.mean, Some(runs.runs[0].reports["val"].accuracy));
}

#[test]
fn embedding_export_is_bounded_and_labeled() {
    let cfg = common::desk_config(8, 1);
    let splits = common::bundled_splits(&cfg);
    let trained = train(&splits, &cfg).unwrap();
    let rows = export_embeddings(&trained, &splits.train, Task::JournalImpact, 10, 3).unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.label <= 1 && r.x.is_finite() && r.y.is_finite()));
    let again = export_embeddings(&trained, &splits.train, Task::JournalImpact, 10, 3).unwrap();
    assert_eq!(rows, again);

    let all = export_embeddings(&trained, &splits.val, Task::JournalImpact, 1000, 3).unwrap();
    assert_eq!(all.len(), splits.val.len());
}

#[test]
fn splits_are_disjoint_and_cover_the_corpus() {
    let cfg = common::desk_config(8, 1);
    let corpus = common::bundled_corpus();
    let splits = common::bundled_splits(&cfg);
    let mut ids: Vec<&str> = splits
        .train
        .iter()
        .chain(&splits.val)
        .chain(&splits.test)
        .map(|r| r.record.id.as_str())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), corpus.len());
}
