//! `socialtrust` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on data errors, 2 on usage errors.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use socialtrust::closeness::BinningScheme;
use socialtrust::simnet::SpanDistribution;
use socialtrust::{Combinator, RatingKind};

#[derive(Debug, Parser)]
#[command(name = "socialtrust", version, about = "Trust predictions from phone communication logs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Output format for tabular results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RatingArg {
    Closeness,
    TrustInfo,
    TrustBest,
}

impl From<RatingArg> for RatingKind {
    fn from(r: RatingArg) -> Self {
        match r {
            RatingArg::Closeness => RatingKind::Closeness,
            RatingArg::TrustInfo => RatingKind::TrustInfo,
            RatingArg::TrustBest => RatingKind::TrustBest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ErrorModeArg {
    Underestimation,
    Disagreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpanArg {
    Lognormal,
    Normal,
}

impl From<SpanArg> for SpanDistribution {
    fn from(s: SpanArg) -> Self {
        match s {
            SpanArg::Lognormal => SpanDistribution::ShiftedLogNormal,
            SpanArg::Normal => SpanDistribution::TruncatedNormal,
        }
    }
}

fn parse_cutoffs(s: &str) -> Result<(u64, u64), String> {
    let (low, high) = s.split_once(',').ok_or("expected low,high")?;
    let low = low.trim().parse().map_err(|_| format!("bad low cutoff {low:?}"))?;
    let high = high.trim().parse().map_err(|_| format!("bad high cutoff {high:?}"))?;
    if low > high {
        return Err(format!("low cutoff {low} exceeds high cutoff {high}"));
    }
    Ok((low, high))
}

fn parse_level(s: &str) -> Result<u8, String> {
    match s.parse::<u8>() {
        Ok(v @ 1..=5) => Ok(v),
        _ => Err(format!("trust level must be 1..=5, got {s:?}")),
    }
}

fn parse_probability(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(p) if (0.0..=1.0).contains(&p) => Ok(p),
        _ => Err(format!("expected a probability in [0, 1], got {s:?}")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, deduplicate and filter survey-result documents into a JSONL log file.
    Ingest {
        /// Documents or directories of `.yaml`/`.yml` documents.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// `default` or a JSON file with filter thresholds.
        #[arg(long, default_value = "default")]
        policy: String,
        /// Kept logs, one JSON object per line. Standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exclusion report CSV. Defaults to `<out>.excluded.csv`.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Fail on the first invalid document instead of reporting it.
        #[arg(long)]
        strict: bool,
    },
    /// Per-partner indicator table.
    Features {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantile table of the partners rated at a reference level.
    Calibrate {
        /// Feature table with a `rating_trust_info` column.
        #[arg(long, required_unless_present = "logs", conflicts_with = "logs")]
        features: Option<PathBuf>,
        /// JSONL logs; needed for ratings other than trust_info.
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long, value_parser = parse_level, default_value = "1")]
        level: u8,
        #[arg(long, value_enum, default_value_t = RatingArg::TrustInfo)]
        rating: RatingArg,
        /// Average per-participant quantiles instead of pooling partners.
        #[arg(long)]
        per_participant: bool,
        /// Table as JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the human-readable table here.
        #[arg(long)]
        text: Option<PathBuf>,
    },
    /// Apply a calibrated table to a feature table.
    Predict {
        /// Table JSON, or `reference` for the built-in survey table.
        #[arg(long)]
        table: String,
        #[arg(long)]
        features: PathBuf,
        /// `or`, or `and:<var>,<var>`.
        #[arg(long, default_value = "or")]
        combinator: Combinator,
        /// Only favorites can be predicted as trusted.
        #[arg(long)]
        favorites_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rating correlations and per-class rating histograms.
    Stats {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        spearman: bool,
        /// Rating used for the class histograms.
        #[arg(long, value_enum, default_value_t = RatingArg::TrustInfo)]
        rating: RatingArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Mean error of the activity classifier against binned ratings.
    Compare {
        #[arg(long)]
        logs: PathBuf,
        /// Rating binning: A or B.
        #[arg(long, default_value = "A")]
        scheme: BinningScheme,
        /// Count messages as activity, not only calls.
        #[arg(long)]
        include_messages: bool,
        /// Activity cutoffs `low,high`.
        #[arg(long, value_parser = parse_cutoffs)]
        cutoffs: (u64, u64),
        #[arg(long, value_enum, default_value_t = ErrorModeArg::Underestimation)]
        mode: ErrorModeArg,
        /// Pool all partners instead of averaging per participant.
        #[arg(long)]
        pooled: bool,
        #[arg(long, value_enum, default_value_t = RatingArg::Closeness)]
        rating: RatingArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run pairwise trust establishment over a synthetic population.
    Simulate {
        /// Population size.
        #[arg(long, default_value_t = 50)]
        devices: usize,
        /// `mesh`, `random:N`, or a file of `devA,devB` lines.
        #[arg(long, default_value = "mesh")]
        pairs: String,
        /// Per-message drop probability.
        #[arg(long, value_parser = parse_probability, default_value = "0")]
        loss: f64,
        /// Retransmissions per message before a pair times out.
        #[arg(long, default_value_t = 3)]
        max_retries: u32,
        /// Strength of the link between interaction volume and latent trust.
        #[arg(long, value_parser = parse_probability, default_value = "0.8")]
        coupling: f64,
        /// Family for the log-span draw.
        #[arg(long, value_enum, default_value_t = SpanArg::Lognormal)]
        span_distribution: SpanArg,
        /// Mean log span in days.
        #[arg(long, default_value_t = 90.0)]
        span_days: f64,
        /// Per-pair report. Standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Aggregate statistics as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

/// A problem with the invocation discovered after argument parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).init();

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if err.is::<UsageError>() => {
            eprintln!("error: {err}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
