use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};
use signet_core::datasets::{DataError, SyntheticVariant};
use signet_core::evaluation::{
    evaluate_test_set, explanation_auc, extract_explanation, Averaging, EvalError, ExplanationRule,
    Level,
};
use signet_core::model::ModelError;
use signet_core::objective::NegativeMode;
use signet_core::runner::{
    format_explanations, format_scores, load_config, read_graph_dir, run_experiment, write_atomic,
    write_synthetic_dataset, FailureKind, RunError,
};
use signet_core::training::{load_checkpoint, CheckpointError};

#[derive(Parser)]
#[command(
    name = "signet",
    version,
    about = "Explainable graph-level anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Base seed; repeat r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        /// Run repeats on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Write a synthetic benchmark as `<out>/train` and `<out>/test` in TU layout.
    Generate {
        #[arg(long)]
        variant: SyntheticVariant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        n_train: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
        #[arg(long, default_value_t = 0.1)]
        anomaly_ratio: f64,
    },
    /// Score a TU-layout test set with a trained checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        scoring: Scoring,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Explain every graph of a TU-layout test set with its top-k nodes and edges.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        topk: usize,
        #[command(flatten)]
        scoring: Scoring,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct Scoring {
    #[arg(long, default_value_t = 0.2)]
    temperature: f64,
    /// `same_view` or `cross_view`.
    #[arg(long, default_value = "same_view", value_parser = parse_mode)]
    negative_mode: NegativeMode,
}

fn parse_mode(s: &str) -> Result<NegativeMode, String> {
    match s {
        "same_view" | "same-view" => Ok(NegativeMode::SameView),
        "cross_view" | "cross-view" => Ok(NegativeMode::CrossView),
        other => Err(format!("unknown negative mode {other:?}")),
    }
}

struct Failure {
    kind: FailureKind,
    message: String,
}

impl Failure {
    fn code(&self) -> u8 {
        match self.kind {
            FailureKind::Config => 2,
            FailureKind::Data => 3,
            FailureKind::Divergence => 4,
            FailureKind::Metric => 5,
            FailureKind::Io | FailureKind::Other => 1,
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        RunError::from(e).into()
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let kind = match e {
            CheckpointError::Io { .. } => FailureKind::Io,
            _ => FailureKind::Data,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let message = e.to_string();
        let kind = match e {
            EvalError::Model(ModelError::Dimension { .. } | ModelError::Graph(_)) => {
                FailureKind::Data
            }
            other => RunError::from(other).kind(),
        };
        Self { kind, message }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => Ok(write_atomic(path, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            out,
            repeats,
            seed,
            parallel,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.parallel |= parallel;
            let report = run_experiment(&cfg)?;
            for (name, s) in &report.aggregate {
                println!("{name}: {:.4} ± {:.4} (n={})", s.mean, s.std, s.count);
            }
            let failed = report.failed_repeats();
            if !failed.is_empty() {
                println!("FAILED repeats: {failed:?}");
            }
            println!("report: {}", cfg.out.join("report.json").display());
        }
        Command::Generate {
            variant,
            out,
            seed,
            n_train,
            n_test,
            anomaly_ratio,
        } => {
            let (train, test) =
                write_synthetic_dataset(variant, n_train, n_test, anomaly_ratio, seed, &out)?;
            println!("{}\n{}", train.display(), test.display());
        }
        Command::Score {
            checkpoint,
            data,
            scoring,
            out,
        } => {
            let state = load_checkpoint(&checkpoint)?;
            let (_, graphs) = read_graph_dir(&data)?;
            let (table, _) = evaluate_test_set(
                &state.model,
                &graphs,
                scoring.temperature,
                scoring.negative_mode,
            )?;
            match table.auc() {
                Ok(auc) => info!("AD-AUC {auc:.4}"),
                Err(e) => warn!("AD-AUC unavailable: {e}"),
            }
            emit(out.as_deref(), &format_scores(&table))?;
        }
        Command::Explain {
            checkpoint,
            data,
            topk,
            scoring,
            out,
        } => {
            let state = load_checkpoint(&checkpoint)?;
            let (_, graphs) = read_graph_dir(&data)?;
            let (_, outputs) = evaluate_test_set(
                &state.model,
                &graphs,
                scoring.temperature,
                scoring.negative_mode,
            )?;
            let results = outputs
                .iter()
                .enumerate()
                .map(|(i, o)| extract_explanation(i, o, ExplanationRule::TopK(topk)))
                .collect::<Result<Vec<_>, _>>()?;
            if graphs.iter().all(|g| g.gt_node_mask.is_some()) {
                for (level, name) in [(Level::Node, "NX-AUC"), (Level::Edge, "EX-AUC")] {
                    if let Ok(v) = explanation_auc(&results, &graphs, level, Averaging::Micro) {
                        info!("{name} {v:.4}");
                    }
                }
            }
            emit(out.as_deref(), &format_explanations(&results))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code())
        }
    }
}
