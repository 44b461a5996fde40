use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iher::envs::Task;
use iher::harness::{
    load_checkpoint, save_checkpoint, write_metrics_csv, Algo, TrainConfig, Trainer, CHECKPOINT_FILE, CONFIG_FILE,
    METRICS_FILE,
};

#[derive(Parser)]
#[command(name = "iher", version, about = "Imaginary hindsight experience replay trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        algo: Option<Algo>,
        #[arg(long)]
        ablation: Option<String>,
        /// Output directory for metrics.csv, config.txt and checkpoint.bin.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Evaluate the policy stored in a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Seed for the evaluation episodes (defaults to the run's seed).
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> iher::Result<()> {
    match cli.command {
        Command::Train {
            config,
            task,
            seed,
            algo,
            ablation,
            out,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = TrainConfig::parse_with_task(&text, task)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(algo) = algo {
                cfg.algo = algo;
            }
            if let Some(ablation) = ablation {
                cfg.ablation = ablation.parse()?;
            }
            let mut trainer = Trainer::new(cfg)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join(CONFIG_FILE), trainer.config().to_text())?;
            eprintln!(
                "training {} ({}, ablation {}) seed {} for {} epochs -> {}",
                trainer.config().task,
                trainer.config().algo,
                trainer.config().ablation,
                trainer.config().seed,
                trainer.config().epochs,
                out.display()
            );
            while !trainer.is_finished() {
                let row = trainer.run_epoch()?;
                write_metrics_csv(&out.join(METRICS_FILE), trainer.history())?;
                eprintln!(
                    "epoch {:>3}  real steps {:>7}  success {:.3}  p_imag {:.3}  intrinsic {:.4}  model loss {:.4}",
                    row.epoch,
                    row.real_steps_total,
                    row.eval_success_rate,
                    row.p_imag,
                    row.mean_intrinsic_reward,
                    row.model_loss
                );
            }
            save_checkpoint(&trainer, &out.join(CHECKPOINT_FILE))?;
            Ok(())
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let trainer = load_checkpoint(&checkpoint)?;
            let cfg = trainer.config();
            let rate = iher::harness::evaluate(
                trainer.policy(),
                cfg.task,
                &cfg.env_params(),
                episodes,
                seed.unwrap_or(cfg.seed),
            )?;
            println!(
                "task {} epochs {} episodes {} success_rate {}",
                cfg.task,
                trainer.epochs_done(),
                episodes,
                rate
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
