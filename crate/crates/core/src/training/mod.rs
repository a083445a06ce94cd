//! Optimization, evaluation, checkpointing and feature export for IMAC.

mod checkpoint;
mod export;
mod features;
mod metrics;
mod repeated;
mod trainer;

pub use checkpoint::{write_manifest, CONFIG_FILE, MANIFEST_FILE, NORMALIZER_FILE, PARAMS_FILE, TOKENIZER_FILE};
pub use export::{export_embeddings, principal_components_2d, write_embeddings_csv, EmbeddingRow};
pub use features::Featurizer;
pub use metrics::{EvalReport, MetricSummary, Summary};
pub use repeated::{run_repeated, summarize, RepeatedRuns};
pub use trainer::{
    batch_objective, evaluate, predict_bundles, rng_stream, train, BatchOutcome, EpochRecord, Prediction,
    RunManifest, Stream, TrainedModel,
};
