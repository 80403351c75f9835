use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser as ClapParser, Subcommand};
use race::commands::{self, DatasetSource, PredictInput};
use race::config::{Overrides, RunConfig, CACHE_ENV};
use race::dataset_dir::{stats_table, DatasetDir};
use race::hooks::Parser;
use race::trees::TreeCache;
use race::RaceError;
use race_core::dataset::Partition;
use race_core::synth::SynthConfig;
use race_core::train::{EncoderMode, SplitMode};

/// Rhetorical-structure graph detector for human, LLM and mixed-authorship text.
#[derive(ClapParser, Debug)]
#[command(name = "race", version)]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splits and training (replaces the configured seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// stratified | group | lodo:<domain>
    #[arg(long, global = true)]
    split: Option<SplitMode>,
    /// real | mock
    #[arg(long, global = true)]
    encoder: Option<EncoderMode>,
    /// FPR cap for the headline TPR and checkpoint selection.
    #[arg(long, global = true)]
    fpr_cap: Option<f64>,
    /// Cache root (overrides $RACE_CACHE_DIR and the config file).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct TreesArg {
    /// Tree cache file [default: <cache root>/trees.jsonl]
    #[arg(long)]
    trees: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse documents into the tree cache, skipping those already cached.
    ParseCache {
        /// Raw records: a .json/.jsonl file or a directory of them.
        #[arg(long)]
        input: PathBuf,
        /// Tree cache file [default: <cache root>/trees.jsonl]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label, split and summarise a corpus into a dataset directory.
    BuildDataset {
        /// HART-style raw records (file or directory).
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        raw: Option<PathBuf>,
        /// Already labelled records, e.g. from `race synth`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed and evaluate on the test split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        trees: TreesArg,
        /// Run directory for checkpoints and reports.
        #[arg(long)]
        run: PathBuf,
    },
    /// Evaluate a checkpoint on one partition of a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        trees: TreesArg,
        /// train | val | test
        #[arg(long, default_value = "test", value_parser = parse_partition)]
        partition: Partition,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-document class probabilities and predicted label.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw documents to parse and score instead of cached trees.
        #[arg(long, conflicts_with_all = ["trees", "ids"])]
        input: Option<PathBuf>,
        #[command(flatten)]
        trees: TreesArg,
        /// Restrict to these cached document ids.
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<String>>,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Relation-frequency Z profiles and cross-class similarity.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        trees: TreesArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus with planted relation signatures.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SynthConfig::default().docs_per_class)]
        docs_per_class: usize,
        #[arg(long, default_value_t = SynthConfig::default().purity)]
        purity: f64,
    },
}

fn parse_partition(s: &str) -> Result<Partition, String> {
    Partition::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown partition {s:?}"))
}

/// A checkpoint inside a run directory carries the run's config with it.
fn config_beside(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint.ancestors().skip(1).take(2).map(|d| d.join("config.toml")).find(|p| p.is_file())
}

fn tree_cache(arg: &TreesArg, cfg: &RunConfig) -> TreeCache {
    TreeCache::new(arg.trees.clone().unwrap_or_else(|| cfg.default_tree_cache()))
}

fn run(cli: Cli) -> Result<String, RaceError> {
    let flags = Overrides {
        seed: cli.seed,
        split: cli.split,
        encoder: cli.encoder,
        fpr_cap: cli.fpr_cap,
        cache_dir: cli.cache_dir.clone(),
    };
    let env_cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let config_file = match (&cli.config, &cli.command) {
        (Some(p), _) => Some(p.clone()),
        (None, Command::Evaluate { checkpoint, .. } | Command::Predict { checkpoint, .. }) => config_beside(checkpoint),
        _ => None,
    };
    let cfg = RunConfig::resolve(config_file.as_deref(), &flags, env_cache)?;

    Ok(match &cli.command {
        Command::ParseCache { input, out } => {
            let cache = TreeCache::new(out.clone().unwrap_or_else(|| cfg.default_tree_cache()));
            let s = commands::parse_cache(input, &cache, &Parser::from_command(&cfg.parser.command))?;
            format!(
                "{} documents: {} parsed, {} already cached, {} failed\ntree cache {}\n",
                s.total,
                s.parsed,
                s.skipped,
                s.failed,
                cache.path().display()
            )
        }
        Command::BuildDataset { raw, corpus, out } => {
            let source = match (raw, corpus) {
                (Some(r), _) => DatasetSource::Raw(r.clone()),
                (None, Some(c)) => DatasetSource::Corpus(c.clone()),
                (None, None) => unreachable!("clap requires one source"),
            };
            let s = commands::build_dataset(&source, &DatasetDir::new(out), &cfg)?;
            format!("{} records, {} excluded, split {}\n{}", s.records, s.excluded, cfg.train.split, stats_table(&s.stats))
        }
        Command::Train { data, trees, run } => {
            let s = commands::train_run(&cfg, &DatasetDir::new(data), &tree_cache(trees, &cfg), run)?;
            commands::train_summary_text(&s)
        }
        Command::Evaluate { checkpoint, data, trees, partition, out } => {
            commands::evaluate_run(&cfg, checkpoint, &DatasetDir::new(data), *partition, &tree_cache(trees, &cfg), out)?;
            let p = out.join("summary.txt");
            std::fs::read_to_string(&p).map_err(|source| RaceError::Io { path: p, source })?
        }
        Command::Predict { checkpoint, input, trees, ids, out } => {
            let source = match input {
                Some(p) => PredictInput::Documents(p),
                None => PredictInput::Cache { trees: &tree_cache(trees, &cfg), ids: ids.clone() },
            };
            let preds = commands::predict_docs(&cfg, checkpoint, source, out)?;
            let mut s = format!("{} predictions written to {}\n", preds.len(), out.display());
            for p in preds.iter().take(10) {
                s += &format!("  {} -> {}\n", p.doc_id, p.label.name());
            }
            s
        }
        Command::Analyze { data, trees, out } => {
            let a = commands::analyze(&DatasetDir::new(data), &tree_cache(trees, &cfg), out)?;
            commands::analysis_summary_text(&a)
        }
        Command::Synth { out, docs_per_class, purity } => {
            let sc = SynthConfig { docs_per_class: *docs_per_class, purity: *purity, seed: cfg.data.seed, ..SynthConfig::default() };
            let n = commands::synth(&sc, out)?;
            format!("{n} synthetic documents in {}\n", out.display())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
