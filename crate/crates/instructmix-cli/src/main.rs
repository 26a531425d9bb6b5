//! Command-line driver for the instruction-tuning data and evaluation
//! pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use instructmix_core::config::PipelineConfig;
use instructmix_core::pipeline::{self, Command as PipelineCommand};
use instructmix_core::registry::Cluster;

#[derive(Parser)]
#[command(
    name = "instructmix",
    about = "Build instruction-tuning mixtures and evaluate held-out task clusters",
    version
)]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, default_value = "instructmix.toml")]
    config: PathBuf,

    /// Override the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's held-out cluster.
    #[arg(long, global = true)]
    heldout: Option<String>,

    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Validate and cap raw datasets, carving dev splits.
    Ingest,
    /// Write the cluster-holdout split plan.
    SplitPlan,
    /// Compute mixture weights and materialize the training stream.
    BuildMixture,
    /// Render the stream through instruction templates.
    Render,
    /// Pack rendered examples into fixed-budget token buffers.
    Pack,
    /// Score held-out datasets with the reference scorer.
    Evaluate,
    /// Audit held-out datasets for pretraining-corpus overlap.
    Contaminate,
    /// Summarize the registry and ingested data.
    Stats,
}

impl CliCommand {
    fn pipeline_command(&self) -> PipelineCommand {
        match self {
            CliCommand::Ingest => PipelineCommand::Ingest,
            CliCommand::SplitPlan => PipelineCommand::SplitPlan,
            CliCommand::BuildMixture => PipelineCommand::BuildMixture,
            CliCommand::Render => PipelineCommand::Render,
            CliCommand::Pack => PipelineCommand::Pack,
            CliCommand::Evaluate => PipelineCommand::Evaluate,
            CliCommand::Contaminate => PipelineCommand::Contaminate,
            CliCommand::Stats => PipelineCommand::Stats,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let mut config = match PipelineConfig::load(&cli.config) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(heldout) = &cli.heldout {
        match Cluster::parse(heldout) {
            Ok(cluster) => config.heldout_cluster = Some(cluster),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    }

    let command = cli.command.pipeline_command();
    match pipeline::run(command, &config) {
        Ok(()) => {
            log::info!("{} complete; artifacts under {}", command, config.output_root.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
