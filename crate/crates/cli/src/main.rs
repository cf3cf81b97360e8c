use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cqvae::{Result, TrainConfig};
use cqvae_cli::*;

/// Coordinate-quantized VAE experiments: data generation, training,
/// sampling and evaluation.
#[derive(Parser, Debug)]
#[command(name = "cqvae", version = VERSION)]
struct Cli {
    /// TOML configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set lr=3e-4`. Repeatable;
    /// wins over the configuration file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Also report mean ground-truth variation per ambiguity level.
        #[arg(long)]
        ambiguity_sweep: bool,
    },
    /// Train a CQ-VAE.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Continue from a checkpoint up to the configured epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the image auto-encoder variant.
    Cqae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
    },
    /// Draw samples from a checkpoint, from random codes or conditioned on an image.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Raw little-endian f32 image at the checkpoint resolution.
        #[arg(long, conflicts_with_all = ["data", "id"])]
        image: Option<PathBuf>,
        /// Dataset directory holding the record named by `--id`.
        #[arg(long, requires = "id")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        id: Option<String>,
    },
    /// Evaluate uncertainty and accuracy on the test split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, required_unless_present = "seeds")]
        checkpoint: Option<PathBuf>,
        /// Train and evaluate this many seeds instead of one checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        seeds: Option<usize>,
        /// Images that get ground-truth and model heatmaps.
        #[arg(long, default_value_t = 4)]
        heatmaps: usize,
    },
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let base = match &cli.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    base.with_overrides(&cli.overrides)
}

fn print_row(row: &str) {
    println!("{row}");
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Generate { out, ambiguity_sweep } => {
            let s = cmd_generate(&config, out, *ambiguity_sweep)?;
            println!("wrote {}: {} train ({} augmented), {} test", out.display(), s.train, s.augmented, s.test);
            if *ambiguity_sweep {
                println!("ambiguity  scenes  mean_var_gt");
                for row in &s.sweep {
                    println!("{:>9}  {:>6}  {:.6}", row.ambiguity, row.scenes, row.mean_var_gt);
                }
            }
        }
        Command::Train { data, run, resume } => {
            println!("{}", cqvae::models::train::TrainLog::CSV_HEADER);
            cmd_train(&config, data, run, resume.as_deref(), print_row)?;
            println!("checkpoint: {}", run.join(CHECKPOINT_FILE).display());
        }
        Command::Cqae { data, run } => {
            println!("{}", cqvae::models::train::CqAeEpoch::CSV_HEADER);
            cmd_cqae(&config, data, run, print_row)?;
            println!("checkpoint: {}", run.join(CHECKPOINT_FILE).display());
        }
        Command::Sample { checkpoint, out, count, seed, image, data, id } => {
            let source = match (image, data, id) {
                (Some(path), _, _) => SampleSource::ImageFile(path.clone()),
                (None, Some(data), Some(id)) => SampleSource::Record { data: data.clone(), id: id.clone() },
                _ => SampleSource::Random,
            };
            let n = cmd_sample(checkpoint, &source, *count, *seed, out)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Evaluate { data, out, checkpoint, seeds, heatmaps } => match (checkpoint, seeds) {
            (_, Some(k)) => {
                let rows = cmd_ensemble(&config, data, out, *k, *heatmaps, |_| {})?;
                println!("evaluated {} images over {k} seeds; see {}", rows.len(), out.join("ensemble.csv").display());
            }
            (Some(ck), None) => {
                let report = cmd_evaluate(ck, data, out, *heatmaps)?;
                for (id, err) in &report.failures {
                    eprintln!("warning: {id}: {err}");
                }
                println!("{}", cqvae::metrics::report::summary_json(&report));
            }
            (None, None) => unreachable!("clap requires --checkpoint or --seeds"),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
