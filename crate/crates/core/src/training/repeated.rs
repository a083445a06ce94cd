use serde::{Deserialize, Serialize};

use super::metrics::{EvalReport, MetricSummary};
use super::trainer::{train, RunManifest};
use crate::config::ImacConfig;
use crate::corpus::{LabeledRecord, Split};
use crate::Result;

/// Per-run manifests and the across-run summary per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedRuns {
    pub runs: Vec<RunManifest>,
    pub val: MetricSummary,
    pub test: Option<MetricSummary>,
}

fn summary(runs: &[RunManifest], split: &str) -> Option<MetricSummary> {
    let reports: Vec<EvalReport> = runs.iter().filter_map(|r| r.reports.get(split).copied()).collect();
    (!reports.is_empty()).then(|| MetricSummary::of(&reports))
}

/// Trains `num_runs` models with seeds `seed, seed+1, …` on the same splits.
pub fn run_repeated(splits: &Split<LabeledRecord>, cfg: &ImacConfig) -> Result<RepeatedRuns> {
    let mut runs = Vec::with_capacity(cfg.train.num_runs);
    for k in 0..cfg.train.num_runs {
        let mut run_cfg = cfg.clone();
        run_cfg.train.seed = cfg.train.seed.wrapping_add(k as u64);
        log::info!("run {}/{} (seed {})", k + 1, cfg.train.num_runs, run_cfg.train.seed);
        runs.push(train(splits, &run_cfg)?.manifest);
    }
    Ok(summarize(runs))
}

pub fn summarize(runs: Vec<RunManifest>) -> RepeatedRuns {
    RepeatedRuns {
        val: summary(&runs, "val").expect("every run reports its validation split"),
        test: summary(&runs, "test"),
        runs,
    }
}
