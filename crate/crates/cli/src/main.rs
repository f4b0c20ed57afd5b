use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use modir::commands::{self, Common};

#[derive(Parser)]
#[command(name = "modir", about = "Train and steer a directive-conditioned motion generator")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize labeled demonstrations and write a dataset file.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint and `<out>.history.csv`.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Preset name, overriding the config file.
        #[arg(long)]
        preset: Option<String>,
        /// Drop the directive loss (γ = 0).
        #[arg(long)]
        baseline: bool,
    },
    /// Directive error and success rate of every latent dim; writes into the `--out` directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also run the blending-scheme comparison.
        #[arg(long)]
        ablation: bool,
    },
    /// Blending-scheme comparison with a mid-run latent switch.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the engine live over WebSocket; `--out` records the event log.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-serve a recorded event log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut common = Common::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Synth { out } => {
            commands::synth(&common, &out)?;
        }
        Command::Train {
            dataset,
            out,
            preset,
            baseline,
        } => {
            if let Some(p) = preset {
                common.config.train.preset = p;
            }
            common.config.train.baseline |= baseline;
            commands::train_cmd(&common, &dataset, &out)?;
        }
        Command::Eval {
            checkpoint,
            out,
            ablation,
        } => {
            commands::eval_cmd(&common, &checkpoint, &out, ablation)?;
        }
        Command::Ablate { checkpoint, out } => {
            commands::ablate_cmd(&common, &checkpoint, &out)?;
        }
        Command::Serve { checkpoint, port, out } => {
            commands::serve_cmd(&common, &checkpoint, port, out)?.join()?;
        }
        Command::Replay { log, port } => {
            commands::replay_cmd(&common, &log, port)?.join()?;
        }
    }
    Ok(())
}
