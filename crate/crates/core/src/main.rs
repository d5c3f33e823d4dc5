use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hyperstep::config::ExperimentConfig;
use hyperstep::pipeline;
use hyperstep::Result;

/// Learn per-step denoising hyperparameter schedules and compare them
/// against grid-search baselines.
#[derive(Parser)]
#[command(name = "hyperstep", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, short, global = true, default_value = "configs/toy.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task file.
    GenTasks {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 1: imitate the prior; writes the prior checkpoint.
    Pretrain {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 2: PPO fine-tuning; writes the policy checkpoint and metrics.
    Train {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Run a policy on one task and report its schedule and reward.
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Brute-force and random search over global configurations.
    Search {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Comparison table; writes `<out>.csv` and `<out>.json`.
    Compare {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline into one directory.
    Run {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(&cli.config)?;
    match cli.command {
        Command::GenTasks { count, seed, out } => {
            pipeline::gen_tasks(&cfg, count, seed, &out)?;
            eprintln!("wrote {count} tasks to {}", out.display());
        }
        Command::Pretrain { tasks, out } => {
            pipeline::pretrain(&cfg, &tasks, &out)?;
            eprintln!("wrote prior checkpoint {}", out.display());
        }
        Command::Train {
            tasks,
            init,
            out,
            metrics,
        } => {
            let (_, rows) = pipeline::train(&cfg, &tasks, &init, &out, &metrics)?;
            let tail = &rows[rows.len().saturating_sub(100)..];
            if !tail.is_empty() {
                let mean = tail.iter().map(|r| r.reward_total).sum::<f64>() / tail.len() as f64;
                eprintln!("trained {} episodes, mean reward of the last {}: {mean:.4}", rows.len(), tail.len());
            }
        }
        Command::Edit {
            checkpoint,
            tasks,
            index,
            out,
        } => {
            let r = pipeline::edit(&cfg, &checkpoint, &tasks, index, &out)?;
            println!(
                "task {}: inversion step {}, reward {:.4} (edit {:.4}, background {:.4}), {} evaluations",
                r.task_seed, r.inversion_step, r.reward.total, r.reward.r_edit, r.reward.r_noedit, r.nfe_count
            );
        }
        Command::Search { tasks, out } => {
            let r = pipeline::search(&cfg, &tasks, &out)?;
            println!("searched {} tasks over {} configurations, {} evaluations", r.rows.len(), r.grid_size, r.total_nfe);
        }
        Command::Compare {
            checkpoint,
            tasks,
            out,
        } => {
            let t = pipeline::compare_cmd(&cfg, &checkpoint, &tasks, &out)?;
            print_summary(&t);
        }
        Command::Run { out_dir } => {
            let (_, t) = pipeline::run_all(&cfg, &out_dir)?;
            print_summary(&t);
        }
    }
    Ok(())
}

fn print_summary(t: &hyperstep::search::ComparisonTable) {
    let a = &t.aggregate;
    let trials: Vec<String> = t
        .trials
        .iter()
        .zip(&a.trials)
        .map(|(k, c)| format!("best-of-{k} {:.4}", c.reward))
        .collect();
    println!(
        "default {:.4} | {} | policy {:.4} | optimal {:.4} | near-optimal share {:.2}",
        a.default.reward,
        trials.join(" | "),
        a.policy.reward,
        a.optimal.reward,
        t.near_optimal_share
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
