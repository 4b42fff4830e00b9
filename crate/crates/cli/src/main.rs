use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use morphmap::config::ExperimentConfig;
use morphmap::map::VariantAggregation;
use morphmap::pipeline::{Pipeline, Stage};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const THREADS_ENV: &str = "MORPHMAP_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "morphmap",
    version,
    about = "Multi-recognizer morph attack potential toolkit"
)]
struct Cli {
    /// Worker threads (falls back to MORPHMAP_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,

    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Aggregate {
    PerVariant,
    Best,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the synthetic cohort into cohort.latent.btsf.
    GenCohort(Common),
    /// Extract templates of every sample under every recognizer.
    Extract(Common),
    /// Select morph pairs by non-mated similarity.
    Pairs(Common),
    /// Build morph templates for the selected pairs.
    Morph(Common),
    /// Compute mated, non-mated and morph scores.
    Score(Common),
    /// Thresholds at the target FMR.
    Calibrate(Common),
    /// MAP matrix at the calibrated thresholds.
    Map {
        #[command(flatten)]
        common: Common,
        /// How morph variants of one pair are counted.
        #[arg(long, value_enum)]
        aggregate_variants: Option<Aggregate>,
    },
    /// Threshold sweep with the tracked MAP cell.
    Sweep(Common),
    /// Stochastic variant study of one pair.
    Variants(Common),
    /// Combine stage artifacts into report.json.
    Report(Common),
    /// Run every stage from one config.
    RunAll(Common),
}

enum Failure {
    Usage(String),
    Data(String),
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        _ => Ok(None),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    if !common.config.is_file() {
        return Err(Failure::Usage(format!(
            "config file {} not found",
            common.config.display()
        )));
    }
    let mut cfg = ExperimentConfig::load(&common.config)
        .map_err(|e| Failure::Usage(format!("{}: {e}", common.config.display())))?;
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Data(e.to_string()))?;
    }

    let (common, stage, aggregate) = match &cli.command {
        Command::GenCohort(c) => (c, Some(Stage::GenCohort), None),
        Command::Extract(c) => (c, Some(Stage::Extract), None),
        Command::Pairs(c) => (c, Some(Stage::Pairs), None),
        Command::Morph(c) => (c, Some(Stage::Morph), None),
        Command::Score(c) => (c, Some(Stage::Score), None),
        Command::Calibrate(c) => (c, Some(Stage::Calibrate), None),
        Command::Map {
            common,
            aggregate_variants,
        } => (common, Some(Stage::Map), *aggregate_variants),
        Command::Sweep(c) => (c, Some(Stage::Sweep), None),
        Command::Variants(c) => (c, Some(Stage::Variants), None),
        Command::Report(c) => (c, Some(Stage::Report), None),
        Command::RunAll(c) => (c, None, None),
    };
    let cfg = load_config(common)?;
    let mut pipeline = Pipeline::new(cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(a) = aggregate {
        pipeline.set_aggregation(match a {
            Aggregate::PerVariant => VariantAggregation::PerVariant,
            Aggregate::Best => VariantAggregation::Best,
        });
    }
    let written = match stage {
        Some(s) => pipeline.run(s),
        None => pipeline.run_all(),
    }
    .map_err(|e| Failure::Data(e.to_string()))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("morphmap: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("morphmap: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
