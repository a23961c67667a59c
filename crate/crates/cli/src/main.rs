use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use fednoil::config::parse_config_with_overrides;
use fednoil::runner::{run, RunManifest};
use fednoil::{ExperimentConfig, ScheduleKind, Variant};

#[derive(Parser)]
#[command(name = "fednoil", version, about = "Federated learning with noisy labels: experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (variant, seed) pair and print the comparison table.
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set noise.mode=low`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Comma-separated seeds; defaults to `trials` seeds from `seed`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Comma-separated variants: fednoil, fedavg, uniform_client, uniform_data, no_ssl.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Run trials concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Parse and validate a config, printing the resolved values.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the local-epoch count for every round.
    ScheduleTable {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config_with_overrides(&text, overrides).with_context(|| format!("in {}", path.display()))
}

fn main() -> ExitCode {
    match try_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn try_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            out,
            seeds,
            variants,
            parallel,
        } => {
            let cfg = load(&config, &overrides)?;
            let mut manifest = RunManifest::new(cfg, out);
            manifest.config_path = Some(config);
            manifest.parallel = parallel;
            if !seeds.is_empty() {
                manifest.seeds = seeds;
            }
            if !variants.is_empty() {
                manifest.variants = variants
                    .iter()
                    .map(|v| v.parse::<Variant>())
                    .collect::<fednoil::Result<_>>()?;
            }
            let table = run(&manifest)?;
            print!("{table}");
            Ok(if table.any_failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Validate { config, overrides } => {
            print!("{}", load(&config, &overrides)?.echo());
            Ok(ExitCode::SUCCESS)
        }
        Command::ScheduleTable { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let s = &cfg.schedule;
            match s.kind {
                ScheduleKind::Cosine => println!("# cosine psi1={}", s.psi1),
                ScheduleKind::Logarithm => println!("# logarithm psi2={}", s.psi2),
                ScheduleKind::Constant => println!("# constant"),
            }
            println!("round,epochs");
            for (i, t) in s.table().iter().enumerate() {
                println!("{},{t}", i + 1);
            }
            println!("# total {}", s.total_epochs());
            Ok(ExitCode::SUCCESS)
        }
    }
}
