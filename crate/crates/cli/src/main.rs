//! `insert`: preprocess logs, train, evaluate, run ablations and serve
//! recommendations from the command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numeric failure, 5 artifact mismatch.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use insert_core::Error;

use crate::commands::{EvalArgs, RecommendArgs};
use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "insert", version, about = "Session recommender with similar-session retrieval")]
struct Cli {
    /// Worker threads; 1 gives the fully sequential mode.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Run configuration sources shared by every subcommand.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat TOML file of run settings.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one setting, e.g. `--set embed_dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sessionize, filter and split a raw interaction log.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Statistics JSON; defaults next to the dataset.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print corpus statistics beside the published benchmark figures.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Train one variant, writing checkpoints and a log to `--out`.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>/last.ckpt`.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Rank every target of a split and report Recall@K / MRR@K.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: Option<String>,
        /// Only sessions of at most five items.
        #[arg(long)]
        short_only: bool,
        /// `all` positions or only the `last` item.
        #[arg(long)]
        targets: Option<String>,
        /// Comma-separated cutoffs.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Replace both prior vectors by zeros.
        #[arg(long)]
        zero_prior: bool,
        /// Report JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// One CSV row per (bucket, K).
        #[arg(long)]
        emit_csv: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train and evaluate every variant with identical settings.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Top-k next items for a user's current session.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        user: String,
        /// Context items in order, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        items: Vec<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Score unknown users from the session alone.
        #[arg(long)]
        cold_start: bool,
    },
}

fn resolve(args: &ConfigArgs, mut flags: Vec<(&'static str, toml::Value)>) -> Result<RunConfig, Error> {
    if let Some(seed) = args.seed {
        flags.push(("seed", toml::Value::Integer(seed as i64)));
    }
    RunConfig::resolve(args.config.as_deref(), &args.sets, flags)
}

fn string(v: &str) -> toml::Value {
    toml::Value::String(v.to_string())
}

fn int(v: usize) -> toml::Value {
    toml::Value::Integer(v as i64)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Preprocess {
            input,
            out,
            stats,
            config,
        } => {
            let cfg = resolve(&config, vec![])?;
            commands::preprocess_cmd(&input, &out, stats.as_deref(), &cfg)
        }
        Command::Stats { dataset, json } => commands::stats_cmd(&dataset, json),
        Command::Train {
            dataset,
            out,
            resume,
            variant,
            max_epochs,
            config,
        } => {
            let mut flags = vec![];
            if let Some(v) = variant {
                flags.push(("variant", string(&v.parse::<insert_core::model::Variant>()?.to_string())));
            }
            if let Some(e) = max_epochs {
                flags.push(("max_epochs", int(e)));
            }
            let cfg = resolve(&config, flags)?;
            commands::train_cmd(&dataset, &out, resume, &cfg)
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            split,
            short_only,
            targets,
            ks,
            zero_prior,
            out,
            emit_csv,
            config,
        } => {
            let mut flags = vec![];
            if let Some(s) = split {
                flags.push(("split", string(&s.parse::<insert_core::data::Split>()?.to_string())));
            }
            if short_only {
                flags.push(("short_only", toml::Value::Boolean(true)));
            }
            if let Some(t) = targets {
                flags.push(("targets", string(&t)));
            }
            if let Some(ks) = ks {
                flags.push(("ks", toml::Value::Array(ks.into_iter().map(int).collect())));
            }
            let cfg = resolve(&config, flags)?;
            let args = EvalArgs {
                checkpoint: &checkpoint,
                dataset: &dataset,
                out: out.as_deref(),
                csv: emit_csv.as_deref(),
                zero_prior,
            };
            commands::evaluate_cmd(&args, &cfg)
        }
        Command::Ablate {
            dataset,
            out,
            max_epochs,
            split,
            config,
        } => {
            let mut flags = vec![];
            if let Some(e) = max_epochs {
                flags.push(("max_epochs", int(e)));
            }
            if let Some(s) = split {
                flags.push(("split", string(&s.parse::<insert_core::data::Split>()?.to_string())));
            }
            let cfg = resolve(&config, flags)?;
            commands::ablate_cmd(&dataset, &out, &cfg)
        }
        Command::Recommend {
            checkpoint,
            dataset,
            user,
            items,
            k,
            cold_start,
        } => commands::recommend_cmd(&RecommendArgs {
            checkpoint: &checkpoint,
            dataset: &dataset,
            user: &user,
            items: &items,
            k,
            cold_start,
        }),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Argument(_) | Error::Usage(_) | Error::Lookup { .. } => 2,
        Error::Parse { .. } | Error::EmptyDataset(_) | Error::Io { .. } | Error::Format { .. } => 3,
        Error::Numeric { .. } => 4,
        Error::ArtifactMismatch(_) => 5,
        Error::Dimension { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
