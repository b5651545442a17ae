//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use twomirror_core::ann;
use twomirror_core::dataset::{calibrate_aperture, collect_random, filter_complete, split_train_test, TARGET_BLOCKED_FRACTION};

use crate::bench::{self, ComparisonReport, Format};
use crate::config::{ExperimentConfig, StrategySelector};
use crate::error::{CliError, CliResult};
use crate::files;
use crate::numfmt::to_json;

#[derive(Debug, Parser)]
#[command(name = "twomirror", version, about = "Two-mirror beam alignment simulator and strategy benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config JSON; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aperture radius that blocks the target fraction of random samples.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = TARGET_BLOCKED_FRACTION)]
        target: f64,
        #[arg(long, default_value_t = 400_000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random control settings and their readings as dataset CSV.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Defaults to the config's `ann.samples`.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fits the reverse-model network and writes model JSON and loss CSV.
    TrainAnn {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; collected from the configured plant when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Artifact directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs strategies and writes their reports and per-step artifacts.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<String>,
        /// Artifact directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Runs strategies side by side and emits the comparison report.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<String>,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
    },
}

fn load(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit_to(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match out {
        Some(path) => files::write_text(path, text),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Internal(format!("stdout: {e}"))),
    }
}

#[derive(Serialize)]
struct TrainSummary {
    records: usize,
    complete: usize,
    train_size: usize,
    test_size: usize,
    train_r2: Vec<f64>,
    train_r2_mean: f64,
    test_r2: Option<Vec<f64>>,
    test_r2_mean: Option<f64>,
    final_mse: Option<f64>,
}

fn train_ann(cfg: &ExperimentConfig, data: Option<&Path>, out: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    let ann_cfg = cfg.ann_config();
    let dataset = match data {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| CliError::read(path, e))?;
            files::read_dataset(f)?
        }
        None => collect_random(&mut bench::build_plant(cfg)?, ann_cfg.samples, cfg.seed)?,
    };
    let complete = filter_complete(&dataset);
    let (train, test) = split_train_test(&complete, ann_cfg.train_fraction, cfg.seed)?;
    let training = ann::train(&train, &ann_cfg.train, cfg.seed)?;
    let train_r2 = ann::r_squared(&training.model, &train)?;
    let test_r2 = ann::r_squared(&training.model, &test).ok();
    let summary = TrainSummary {
        records: dataset.len(),
        complete: complete.len(),
        train_size: train.len(),
        test_size: test.len(),
        train_r2: train_r2.per_output.clone(),
        train_r2_mean: train_r2.mean,
        test_r2_mean: test_r2.as_ref().map(|r| r.mean),
        test_r2: test_r2.map(|r| r.per_output),
        final_mse: training.loss_trace.last().copied(),
    };
    let summary = to_json(&summary);
    if let Some(dir) = out {
        files::write_text(&dir.join("model.json"), &files::model_json(&training.model))?;
        files::write_text(&dir.join("loss.csv"), &files::loss_csv(&training.loss_trace))?;
        files::write_text(&dir.join("summary.json"), &summary)?;
        if data.is_none() {
            files::write_text(&dir.join("dataset.csv"), &files::dataset_csv(&dataset))?;
        }
    }
    emit_to(None, &summary, stdout)
}

fn execute(command: Command, stdout: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Calibrate { common, target, samples, out } => {
            let cfg = load(&common)?;
            let cal = calibrate_aperture(&cfg.geometry()?, target, samples, cfg.seed)?;
            emit_to(out.as_deref(), &to_json(&cal), stdout)
        }
        Command::Collect { common, samples, out } => {
            let cfg = load(&common)?;
            let n = samples.unwrap_or(cfg.ann.samples);
            let d = collect_random(&mut bench::build_plant(&cfg)?, n, cfg.seed)?;
            emit_to(out.as_deref(), &files::dataset_csv(&d), stdout)
        }
        Command::TrainAnn { common, data, out } => {
            let cfg = load(&common)?;
            let out = out.or_else(|| cfg.out_dir.clone());
            train_ann(&cfg, data.as_deref(), out.as_deref(), stdout)
        }
        Command::Align { common, strategy, out, format } => {
            let (cfg, format) = (load(&common)?, Format::parse(&format)?);
            let selector = strategy.as_deref().map(StrategySelector::parse).transpose()?.unwrap_or(cfg.strategy);
            let runs = bench::run_all(&cfg, &selector.strategies())?;
            let report = ComparisonReport::new(&cfg, &runs);
            let out = out.or_else(|| cfg.out_dir.clone());
            match out {
                Some(dir) => {
                    bench::write_artifacts(&dir, &runs)?;
                    let name = format!("report.{}", format.extension());
                    files::write_text(&dir.join(name), &bench::emit(&report, format))
                }
                None => emit_to(None, &bench::emit(&report, format), stdout),
            }
        }
        Command::Bench { common, strategy, out, format } => {
            let (cfg, format) = (load(&common)?, Format::parse(&format)?);
            let selector = strategy.as_deref().map(StrategySelector::parse).transpose()?.unwrap_or(cfg.strategy);
            let runs = bench::run_all(&cfg, &selector.strategies())?;
            let report = ComparisonReport::new(&cfg, &runs);
            emit_to(out.as_deref(), &bench::emit(&report, format), stdout)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let text = e.render().to_string();
            if informational {
                let _ = stdout.write_all(text.as_bytes());
                return 0;
            }
            let _ = stderr.write_all(text.as_bytes());
            return 1;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "twomirror: {e}");
            e.exit_code()
        }
    }
}
