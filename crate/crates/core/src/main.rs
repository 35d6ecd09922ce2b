use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rebalance::harness::{self, ExperimentConfig, OutputFormat};
use rebalance::losses::LossKind;
use rebalance::nn::{finite_diff_check, ModelConfig};
use rebalance::synth::{self, ArtifactType, DatasetSpec};
use rebalance::{metrics, Error, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "rebalance", version, about = "Imbalanced severity grading experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        artifact: ArtifactType,
        /// Per-severity scan counts; defaults to the artifact's standard distribution.
        #[arg(long, value_parser = parse_counts)]
        counts: Option<[usize; 3]>,
        #[arg(long, default_value_t = synth::DEFAULT_SIZE)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON config; fields not given take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from a named preset instead of the defaults.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the final validation predictions as CSV.
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Train every configuration of a grid and tabulate the results.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Compute the metric report for a prediction file.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "ce")]
        loss: LossKind,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
}

fn parse_counts(text: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|p: Vec<usize>| format!("expected 3 counts, got {}", p.len()))
}

fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            artifact,
            counts,
            size,
            seed,
            out,
        } => {
            let mut spec = DatasetSpec::for_artifact(artifact, seed);
            spec.size = size;
            if let Some(c) = counts {
                spec.counts = c;
            }
            let samples = synth::generate_dataset(&spec)?;
            synth::write_dataset(&out, &spec, &samples)?;
            println!("wrote {} scans to {}", samples.len(), out.display());
        }
        Command::Train {
            data,
            config,
            preset,
            out,
            pred,
        } => {
            let mut cfg = match (config, preset) {
                (Some(path), _) => ExperimentConfig::load(&path)?,
                (None, Some(name)) => ExperimentConfig::preset(&name)?,
                (None, None) => ExperimentConfig::default(),
            };
            cfg.data = Some(data);
            let result = harness::train(&cfg)?;
            write_json(&out, &result)?;
            if let Some(path) = pred {
                metrics::write_predictions(&path, &result.val_true, &result.val_pred)?;
            }
            let m = &result.final_validation;
            println!(
                "{}: macro f1 {:.3}, weighted f1 {:.3}, mean {:.3} ({:.1}s)",
                cfg.method(),
                m.macro_avg.f1,
                m.weighted.f1,
                m.mean_of_15,
                result.wall_clock_seconds
            );
        }
        Command::Sweep {
            data,
            grid,
            out,
            json,
            parallel,
        } => {
            let configs = harness::load_grid(&grid)?;
            let (_, dataset) = synth::read_dataset(&data)?;
            let rows = harness::sweep(&configs, &dataset, parallel)?;
            harness::emit_results(&rows, &out, OutputFormat::Csv)?;
            if let Some(path) = json {
                harness::emit_results(&rows, &path, OutputFormat::Json)?;
            }
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            for (i, row) in rows.iter().enumerate() {
                if let Some(e) = &row.error {
                    eprintln!("row {i} failed: {e}");
                }
            }
            println!("{} runs, {} failed", rows.len(), failed);
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Metrics { pred, out } => {
            let (y_true, y_pred) = metrics::read_predictions(&pred)?;
            let report = metrics::report(&y_true, &y_pred)?;
            write_json(&out, &report)?;
            println!("mean {:.3}", report.mean_of_15);
        }
        Command::Gradcheck { seed, loss, eps } => {
            let report = finite_diff_check(&ModelConfig::tiny(seed), loss, seed, eps)?;
            println!(
                "{} seed {}: max relative error {:.3e} at {}[{}] ({} checked, {} skipped)",
                loss.name(),
                seed,
                report.max_rel_error,
                report.worst.0,
                report.worst.1,
                report.checked,
                report.skipped
            );
            if report.max_rel_error.is_nan() || report.max_rel_error >= GRADCHECK_TOLERANCE {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
