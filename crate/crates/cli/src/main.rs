//! Command-line pipeline: stats, score, internal, external, merge,
//! evaluate, split, synth, report. No CLI-only logic; every subcommand is a
//! thin composition of library calls, so pipelines built here match the
//! same composition through the API. Outputs are byte-identical across
//! reruns with identical inputs and parameters.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "sgtransfer",
    version,
    about = "Scene-graph corpus relabeling and evaluation"
)]
struct Cli {
    /// Worker threads for the parallel stages (0 = one per core). Outputs
    /// are independent of this setting.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

/// Vocab files shared by every dataset-touching subcommand.
#[derive(Args, Clone)]
struct VocabArgs {
    /// Object class names, one per line.
    #[arg(long)]
    objects: PathBuf,
    /// Predicate class names, one per line.
    #[arg(long)]
    predicates: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Profile {
    /// 50-predicate benchmark defaults: k_I=70, k_E=100, head exclusion 15.
    Vg50,
    /// Large-vocabulary defaults: k_I=90, k_E=100, no head exclusion.
    Vg1800,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Coverage {
    /// Annotated ordered pairs only.
    Annotated,
    /// Unannotated overlapping pairs only.
    Na,
    /// Both.
    All,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DumpFormat {
    Jsonl,
    Binary,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Family {
    Recall,
    Accuracy,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus summary counters.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Emit the summary as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Fit the frequency baseline and dump score vectors.
    Score {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Dataset the baseline is fit on (defaults to --dataset).
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        na_prior: Option<f64>,
        #[arg(long, value_enum, default_value_t = Coverage::All)]
        coverage: Coverage,
        #[arg(long, value_enum, default_value_t = DumpFormat::Jsonl)]
        format: DumpFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an internal-transfer plan.
    Internal {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Score dump covering every annotated pair.
        #[arg(long)]
        scores: PathBuf,
        /// Percentage of each target's candidates to transfer.
        #[arg(long)]
        k_i: Option<f64>,
        /// Use the adaptive threshold with this spread multiplier instead of
        /// a fixed percentage.
        #[arg(long, conflicts_with = "k_i")]
        adaptive: Option<f64>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        /// Write per-class-pair aggregated-score CSVs into this directory.
        #[arg(long)]
        export_confusion: Option<PathBuf>,
        /// Restrict the confusion export to one "subject,object" class pair.
        #[arg(long, requires = "export_confusion")]
        pair: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an external-transfer plan over NA pairs.
    External {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Score dump covering every overlapping unannotated pair.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        k_e: Option<f64>,
        #[arg(long)]
        head_exclude: Option<usize>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        /// Write an additions-per-predicate summary TSV here.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge plans into an enhanced dataset.
    Merge {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        #[arg(long)]
        internal: Option<PathBuf>,
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a metric family over a test dataset.
    Evaluate {
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Score dump covering the test pairs.
        #[arg(long, required_unless_present = "fit_train")]
        scores: Option<PathBuf>,
        /// Fit a frequency baseline on this dataset instead of reading a dump.
        #[arg(long)]
        fit_train: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        na_prior: Option<f64>,
        #[arg(long, value_enum)]
        family: Family,
        /// Comma-separated K list (defaults: recall 20,50,100; accuracy 1,5,10).
        #[arg(long)]
        ks: Option<String>,
        /// Rank every predicate of every pair instead of one per pair.
        #[arg(long)]
        no_graph_constraint: bool,
        /// Write <prefix>.summary.tsv, <prefix>.per_predicate.tsv and
        /// <prefix>.json.
        #[arg(long)]
        report_prefix: Option<PathBuf>,
    },
    /// Build train/val/test splits with per-predicate minima.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        val_images: Option<usize>,
        #[arg(long)]
        min_test: Option<u64>,
        #[arg(long)]
        min_train: Option<u64>,
        /// Newline-delimited predicate names to remove outright.
        #[arg(long)]
        blocklist: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic long-tail/ambiguity corpus plus truth sidecar.
    Synth {
        #[arg(long, default_value_t = 120)]
        images: usize,
        #[arg(long, default_value_t = 12)]
        object_classes: usize,
        #[arg(long, default_value_t = 30)]
        predicates: usize,
        #[arg(long, default_value_t = 1.5)]
        zipf: f64,
        #[arg(long, default_value_t = 5)]
        generals: usize,
        #[arg(long, default_value_t = 3)]
        children_per_general: usize,
        #[arg(long, default_value_t = 0.5)]
        ambiguity_prob: f64,
        #[arg(long, default_value_t = 0.3)]
        deletion_prob: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Analysis reports over datasets and plans.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Rank-binned predicate distribution change between two datasets.
    Distribution {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transferred (general, informative) predicate pairs by move count.
    Pairs {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<sgtransfer::Error>() {
        Some(sgtransfer::Error::Io { .. }) => "io",
        Some(sgtransfer::Error::Parse { .. }) => "parse",
        Some(sgtransfer::Error::Vocab(_)) => "vocab",
        Some(sgtransfer::Error::Box(_)) => "box",
        Some(sgtransfer::Error::Invariant { .. }) => "invariant",
        Some(sgtransfer::Error::Score(_)) => "score",
        Some(sgtransfer::Error::Plan(_)) => "plan",
        Some(sgtransfer::Error::Eval(_)) => "eval",
        Some(sgtransfer::Error::Split(_)) => "split",
        Some(sgtransfer::Error::Config(_)) => "config",
        None => "cli",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // Ignore the error if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": format!("{err:#}"),
                "kind": error_kind(&err),
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
