//! `imac`: the command-line pipeline.
//!
//! ingest → label → split → train → evaluate / predict / export-embeddings,
//! plus baselines, analyses and a synthetic corpus generator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use imac_core::baselines::{Baseline, BaselineKind, Dataset};
use imac_core::bibliometrics::{correlation_matrix, read_histories_csv, stability_report, CorrelationKind};
use imac_core::config::{ImacConfig, Variant};
use imac_core::corpus::{
    build_vocab, ingest, ingest_labeled, label_corpus, parse_article, read_journals, split, synthetic,
    write_jsonl, write_manifest, LabeledRecord, Normalizer, Split, Task, YearRange,
};
use imac_core::training::{
    export_embeddings, summarize, train, write_embeddings_csv, write_manifest as write_run_manifest, TrainedModel,
};

/// Environment variable naming the directory that relative checkpoint
/// paths are resolved against.
const CHECKPOINT_ROOT_VAR: &str = "IMAC_CHECKPOINT_ROOT";

#[derive(Parser)]
#[command(name = "imac", version, about = "Impact-based manuscript assessment pipeline")]
struct Cli {
    /// JSON configuration file; command flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSON-lines article file and write the accepted records.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to write rejected lines as JSON (default: stderr summary only).
        #[arg(long)]
        rejections: Option<PathBuf>,
    },
    /// Attach JIF, AIF and both impact labels to an ingested corpus.
    Label {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        journals: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// AIF balance parameter d.
        #[arg(long)]
        d: Option<f64>,
        /// Citation median used by the AIF scaling factor (default: corpus median).
        #[arg(long)]
        cits_m: Option<f64>,
    },
    /// Stratified train/val/test split of a labeled corpus.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train IMAC on a split directory and save a checkpoint.
    Train {
        #[arg(long)]
        splits: PathBuf,
        /// Checkpoint directory; relative paths resolve under $IMAC_CHECKPOINT_ROOT.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Metrics of a checkpoint on a labeled split file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        /// Metrics JSON destination (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit and score KNN, SVM, LR and ZeroR on a split directory.
    Baselines {
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
    },
    /// Class and probabilities for one article JSON file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        article: PathBuf,
    },
    /// Fused features of sampled articles projected to 2-D, as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n_per_class: usize,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Metric-rationality analyses.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
    /// Write a synthetic corpus with planted, label-correlated signal.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = synthetic::BUNDLED_SIZE)]
        n: usize,
        #[arg(long, default_value_t = synthetic::BUNDLED_SEED)]
        seed: u64,
        /// Also write this many citation histories to histories.csv.
        #[arg(long)]
        histories: Option<usize>,
    },
}

#[derive(Subcommand)]
enum Analysis {
    /// Impact-class flips between 4- and 8-year citation windows.
    Stability {
        #[arg(long)]
        histories: PathBuf,
        #[arg(long, default_value_t = 20)]
        threshold: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Correlation of JIF, citations and AIF with article features.
    Correlations {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Pearson)]
        method: MethodArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden size of the encoder and fused features.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Number of seeds to train (seed, seed+1, ...); the first is checkpointed.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Journal,
    Article,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Journal => Task::JournalImpact,
            TaskArg::Article => Task::ArticleImpact,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    NoFusion,
    NoSupcon,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pearson,
    Spearman,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ImacConfig> {
    match path {
        Some(p) => ImacConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(ImacConfig::default()),
    }
}

fn task_or(cfg: &ImacConfig, task: Option<TaskArg>) -> Task {
    task.map(Task::from).unwrap_or(cfg.train.task)
}

/// Fails with a message naming the command that produces `path`.
fn require(path: &Path, producer: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("{} does not exist; create it with `imac {producer}`", path.display());
    }
    Ok(())
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    match std::env::var_os(CHECKPOINT_ROOT_VAR) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_labeled(path: &Path) -> anyhow::Result<Vec<LabeledRecord>> {
    require(path, "split")?;
    let ingested = ingest_labeled(path, &YearRange::default())?;
    if !ingested.rejections.is_empty() {
        bail!(
            "{}: {} malformed labeled records (first: line {}: {})",
            path.display(),
            ingested.rejections.len(),
            ingested.rejections[0].line,
            ingested.rejections[0].reason
        );
    }
    Ok(ingested.records)
}

const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

fn load_splits(dir: &Path) -> anyhow::Result<Split<LabeledRecord>> {
    let mut parts = SPLIT_NAMES
        .iter()
        .map(|name| load_labeled(&dir.join(format!("{name}.jsonl"))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let test = parts.pop().expect("three splits");
    let val = parts.pop().expect("three splits");
    let train = parts.pop().expect("three splits");
    Ok(Split { train, val, test })
}

fn class_balance(records: &[LabeledRecord], task: Task) -> (usize, usize) {
    let high = records.iter().filter(|r| r.class(task) == 1).count();
    (records.len() - high, high)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest {
            input,
            output,
            rejections,
        } => {
            require(&input, "synth")?;
            let out = ingest(&input, &YearRange::default())?;
            write_jsonl(&output, &out.records)?;
            eprintln!("accepted {} records, rejected {}", out.records.len(), out.rejections.len());
            for r in out.rejections.iter().take(10) {
                eprintln!("  line {}: {}", r.line, r.reason);
            }
            if let Some(p) = rejections {
                write_json(Some(&p), &out.rejections)?;
            }
            if out.records.is_empty() {
                bail!("no valid records in {}", input.display());
            }
        }
        Command::Label {
            corpus,
            journals,
            output,
            d,
            cits_m,
        } => {
            require(&corpus, "ingest")?;
            require(&journals, "synth")?;
            let records = ingest(&corpus, &YearRange::default())?;
            let journals = read_journals(&journals)?;
            let out = label_corpus(
                &records.records,
                &journals,
                d.unwrap_or(cfg.aif.d),
                cits_m.or(cfg.aif.cits_m),
            )?;
            write_jsonl(&output, &out.records)?;
            for r in &out.rejections {
                eprintln!("rejected line {} ({}): {}", r.line, r.id.as_deref().unwrap_or("?"), r.reason);
            }
            for task in [Task::JournalImpact, Task::ArticleImpact] {
                let (others, high) = class_balance(&out.records, task);
                println!(
                    "{}: others {others}, high_impact {high}",
                    serde_json::to_value(task)?.as_str().unwrap_or_default()
                );
            }
            println!("cits_m = {}", out.params.cits_m);
        }
        Command::Split {
            corpus,
            out_dir,
            task,
            seed,
        } => {
            let records = {
                require(&corpus, "label")?;
                ingest_labeled(&corpus, &YearRange::default())?.records
            };
            let task = task_or(&cfg, task);
            let mut spec = cfg.split;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let parts = split(&records, |r| r.class(task), &spec)?;
            create_dir(&out_dir)?;
            for (name, part) in SPLIT_NAMES.iter().zip([&parts.train, &parts.val, &parts.test]) {
                write_jsonl(&out_dir.join(format!("{name}.jsonl")), part)?;
                write_manifest(&out_dir.join(format!("{name}.ids")), part)?;
                let (others, high) = class_balance(part, task);
                println!("{name}: {} records (others {others}, high_impact {high})", part.len());
            }
        }
        Command::Train {
            splits,
            checkpoint,
            overrides,
        } => {
            let cfg = apply_overrides(cfg, &overrides)?;
            let data = load_splits(&splits)?;
            let dir = checkpoint_dir(&checkpoint);
            let mut manifests = Vec::new();
            for k in 0..cfg.train.num_runs {
                let mut run_cfg = cfg.clone();
                run_cfg.train.seed = cfg.train.seed.wrapping_add(k as u64);
                let trained = train(&data, &run_cfg)?;
                if k == 0 {
                    trained.save(&dir)?;
                    let headline = trained.manifest.reports.get("test").or(trained.manifest.reports.get("val"));
                    write_json(Some(&dir.join("metrics.json")), &headline)?;
                } else {
                    write_run_manifest(&dir.join(format!("manifest_seed{}.json", run_cfg.train.seed)), &trained.manifest)?;
                }
                manifests.push(trained.manifest);
            }
            let summary = summarize(manifests);
            if cfg.train.num_runs > 1 {
                write_json(Some(&dir.join("repeated.json")), &summary)?;
            }
            write_json(None, &summary.test.unwrap_or(summary.val))?;
            eprintln!("checkpoint written to {}", dir.display());
        }
        Command::Evaluate {
            checkpoint,
            split,
            task,
            output,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let task = task.map(Task::from).unwrap_or(model.config.train.task);
            let records = load_labeled(&split)?;
            let report = model.evaluate(&records, task)?;
            write_json(output.as_deref(), &report)?;
        }
        Command::Baselines { splits, out_dir, task } => {
            let data = load_splits(&splits)?;
            let task = task_or(&cfg, task);
            let train_articles: Vec<_> = data.train.iter().map(|r| r.record.clone()).collect();
            let vocab = build_vocab(&train_articles, cfg.baselines.vocab_size)?;
            let normalizer = Normalizer::fit(&train_articles)?;
            let train_set = Dataset::from_records(&data.train, &vocab, &normalizer, task)?;
            let eval_records = if data.test.is_empty() { &data.val } else { &data.test };
            let eval_set = Dataset::from_records(eval_records, &vocab, &normalizer, task)?;
            create_dir(&out_dir)?;
            for kind in BaselineKind::ALL {
                let fitted = Baseline::new(kind, &cfg.baselines).fit(&train_set)?;
                let report = fitted.evaluate(&eval_set)?;
                write_json(Some(&out_dir.join(format!("{}.json", kind.as_str()))), &report)?;
                println!("{:<6} accuracy {:.4}", kind.as_str(), report.accuracy);
            }
        }
        Command::Predict { checkpoint, article } => {
            let model = load_checkpoint(&checkpoint)?;
            let text = std::fs::read_to_string(&article).with_context(|| format!("reading {}", article.display()))?;
            let record = parse_article(&text, &YearRange::default())?;
            let prediction = model.predict(&record)?;
            println!("{}", serde_json::to_string(&prediction)?);
        }
        Command::ExportEmbeddings {
            checkpoint,
            split,
            output,
            n_per_class,
            task,
            seed,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let task = task.map(Task::from).unwrap_or(model.config.train.task);
            let records = load_labeled(&split)?;
            let rows = export_embeddings(&model, &records, task, n_per_class, seed.unwrap_or(model.config.train.seed))?;
            write_embeddings_csv(&output, &rows)?;
            eprintln!("wrote {} rows to {}", rows.len(), output.display());
        }
        Command::Analyze { analysis } => match analysis {
            Analysis::Stability {
                histories,
                threshold,
                output,
            } => {
                require(&histories, "synth --histories N")?;
                let report = stability_report(&read_histories_csv(&histories)?, threshold)?;
                #[derive(Serialize)]
                struct Out {
                    #[serde(flatten)]
                    report: imac_core::bibliometrics::StabilityReport,
                    flip_fraction: f64,
                    threshold: u64,
                }
                write_json(
                    output.as_deref(),
                    &Out {
                        flip_fraction: report.flip_fraction(),
                        report,
                        threshold,
                    },
                )?;
            }
            Analysis::Correlations { corpus, method, output } => {
                require(&corpus, "label")?;
                let records = ingest_labeled(&corpus, &YearRange::default())?.records;
                let kind = match method {
                    MethodArg::Pearson => CorrelationKind::Pearson,
                    MethodArg::Spearman => CorrelationKind::Spearman,
                };
                write_json(output.as_deref(), &correlation_matrix(&records, kind)?)?;
            }
        },
        Command::Synth {
            out_dir,
            n,
            seed,
            histories,
        } => {
            create_dir(&out_dir)?;
            let (articles, journals) = synthetic::generate(n, seed);
            write_jsonl(&out_dir.join("articles.jsonl"), &articles)?;
            write_jsonl(&out_dir.join("journals.jsonl"), &journals)?;
            if let Some(h) = histories {
                let path = out_dir.join("histories.csv");
                let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
                use std::io::Write;
                writeln!(w, "article_id,cits_4y,cits_8y")?;
                for r in synthetic::generate_histories(h, seed) {
                    writeln!(w, "{},{},{}", r.article_id, r.cits_4y, r.cits_8y)?;
                }
                w.flush()?;
            }
            println!("wrote {n} articles to {}", out_dir.display());
        }
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<TrainedModel> {
    let dir = checkpoint_dir(path);
    require(&dir, "train")?;
    Ok(TrainedModel::load(&dir)?)
}

fn apply_overrides(mut cfg: ImacConfig, o: &TrainOverrides) -> anyhow::Result<ImacConfig> {
    if let Some(v) = o.variant {
        cfg = cfg.with_variant(match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoFusion => Variant::NoFusion,
            VariantArg::NoSupcon => Variant::NoSupcon,
        });
    }
    let t = &mut cfg.train;
    if let Some(v) = o.epochs {
        t.epochs = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.lr {
        t.optimizer.learning_rate = v;
    }
    if let Some(v) = o.seed {
        t.seed = v;
    }
    if let Some(v) = o.task {
        t.task = v.into();
    }
    if let Some(v) = o.runs {
        t.num_runs = v;
    }
    if let Some(v) = o.dim {
        cfg.model.encoder.d = v;
    }
    if let Some(v) = o.alpha {
        cfg.loss.alpha = v;
    }
    if let Some(v) = o.tau {
        cfg.loss.tau = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
