#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use collabscore::config::generate_config_from_document;
use collabscore::stats::{histogram, write_histogram, write_histogram_csv, RunScores};
use collabscore::{generate, run_experiment, run_pipeline, BucketBy, Dataset, Error, ExperimentConfig, PipelineConfig};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "collabscore", version, about = "Collaborative scoring from vouches and pairwise comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and its ground truth.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the scoring pipeline on a dataset directory.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a seeded parameter sweep and write the correlation table.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides n_seeds of the config.
        #[arg(long)]
        n_seeds: Option<usize>,
        /// Overrides the base seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Histogram of displayed scores from a run output directory.
    Stats {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_parser = parse_bucket)]
        by: BucketBy,
        #[arg(long, default_value_t = 100.0)]
        score_max: f64,
        /// Writes to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_bucket(s: &str) -> Result<BucketBy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_json(path: &Path) -> collabscore::Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn execute(command: Command) -> collabscore::Result<()> {
    match command {
        Command::Generate { config, out, seed } => {
            let mut gen_config = generate_config_from_document(&read_json(&config)?)?;
            if let Some(seed) = seed {
                gen_config.seed = seed;
            }
            let generated = generate(&gen_config)?;
            generated.write_dir(&out)?;
            log::info!(
                "{} users, {} comparisons written to {}",
                generated.dataset.users.len(),
                generated.dataset.comparisons.len(),
                out.display()
            );
        }
        Command::Run { data, config, out } => {
            let pipeline = PipelineConfig::from_document(&read_json(&config)?)?;
            let dataset = Dataset::read_dir(&data, pipeline.preference_learning.comparison_max)?;
            let output = run_pipeline(&dataset, &pipeline)?;
            output.write_dir(&out)?;
            log::info!("{} entities scored", output.scores.entities.len());
        }
        Command::Experiment {
            config,
            out,
            n_seeds,
            seed,
        } => {
            let mut exp = ExperimentConfig::from_value(&read_json(&config)?)?;
            if let Some(n) = n_seeds {
                exp.n_seeds = n;
            }
            if let Some(seed) = seed {
                exp.seed = seed;
            }
            let start = Instant::now();
            let result = run_experiment(&exp)?;
            result.write_csv(&out)?;
            log::info!("{} cells in {:.1?}", result.cells.len(), start.elapsed());
        }
        Command::Stats {
            scores,
            by,
            score_max,
            out,
        } => {
            if !(score_max > 0.0) {
                return Err(Error::config("score_max must be positive"));
            }
            let rows = histogram(&RunScores::read_dir(&scores)?, by, score_max);
            match out {
                Some(path) => write_histogram_csv(&rows, &path)?,
                None => write_histogram(&rows, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
