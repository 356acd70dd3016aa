use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use alrl_core::checkpoint;
use alrl_harness::config::ExperimentConfig;
use alrl_harness::curve::ComparisonTable;
use alrl_harness::diagnose::diagnose_q_correlation;
use alrl_harness::emit;
use alrl_harness::eval::{evaluate_agent, run_baselines, Baseline};
use alrl_harness::runner::load_data;
use alrl_harness::train::train_agent;

/// Reinforcement-learning-driven active learning: train a DDQN sampling
/// agent, evaluate it against uncertainty-sampling baselines and inspect the
/// learned Q-function.
#[derive(Parser)]
#[command(name = "alrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and store best/final checkpoints, the replay buffer
    /// and the training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Play greedy evaluation games with a checkpoint and emit F1 curves.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Override the config's evaluationRuns.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write an SVG plot.
        #[arg(long)]
        plot: bool,
    },
    /// Evaluate the classical baselines and emit curves plus the
    /// fixed-checkpoint comparison table.
    Baselines {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of random,bvssb1,bvssb2.
        #[arg(long, default_value = "random,bvssb1,bvssb2")]
        strategies: String,
        #[arg(long)]
        plot: bool,
    },
    /// Sweep entropy/margin features against the checkpoint's Q-values using
    /// the state statistics of a stored replay buffer.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        buffer: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base-state redraws per feature.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Grid points per sweep.
        #[arg(long, default_value_t = 41)]
        grid: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Eval { checkpoint, config, runs, out, plot } => {
            cmd_eval(&checkpoint, &config, runs, &out, plot)
        }
        Command::Baselines { config, out, strategies, plot } => {
            cmd_baselines(&config, &out, &strategies, plot)
        }
        Command::Diagnose { checkpoint, buffer, out, reps, grid, seed } => {
            cmd_diagnose(&checkpoint, &buffer, &out, reps, grid, seed)
        }
    }
}

fn cmd_train(config_path: &PathBuf, out: &PathBuf) -> Result<()> {
    let config = ExperimentConfig::from_file(config_path)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let data = load_data(&config)?;
    println!(
        "training: {} interactions, state dim {}, {} actions",
        config.min_training_interactions,
        config.env_config().state_dim(),
        config.env_config().action_space()
    );
    let outputs = train_agent(&config, &data)?;
    checkpoint::save_agent(&out.join("best_agent.ckpt"), &outputs.best_agent, &outputs.best_meta)
        .map_err(|e| anyhow!("{e}"))?;
    checkpoint::save_agent(&out.join("final_agent.ckpt"), &outputs.final_agent, &outputs.final_meta)
        .map_err(|e| anyhow!("{e}"))?;
    checkpoint::save_buffer(&out.join("replay_buffer.bin"), &outputs.buffer)
        .map_err(|e| anyhow!("{e}"))?;
    emit::write_training_log(&out.join("training_log.csv"), &outputs.log)?;
    emit::write_trace_csv(&out.join("episode_trace.csv"), &outputs.traces)?;
    let games = outputs.log.last().map(|r| r.game + 1).unwrap_or(0);
    println!(
        "done: {} games, best eval score {:.4}, artifacts in {}",
        games,
        outputs.best_score,
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    checkpoint_path: &PathBuf,
    config_path: &PathBuf,
    runs: Option<usize>,
    out: &PathBuf,
    plot: bool,
) -> Result<()> {
    let mut config = ExperimentConfig::from_file(config_path)?;
    if let Some(runs) = runs {
        config.evaluation_runs = runs;
    }
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let data = load_data(&config)?;
    let agent = checkpoint::load_agent(checkpoint_path)
        .map_err(|e| anyhow!("{e}"))?
        .into_agent()
        .map_err(|e| anyhow!("{e}"))?;
    let curve = evaluate_agent(&agent, &config, &data)?;
    let truncated = curve.runs.iter().filter(|r| r.truncated).count();
    if truncated > 0 {
        println!(
            "warning: {truncated} of {} runs truncated at the interaction cap",
            curve.runs.len()
        );
    }
    emit::write_runs_csv(&out.join("ddqn_runs.csv"), &curve)?;
    emit::write_mean_csv(&out.join("ddqn_mean.csv"), &curve)?;
    if plot {
        emit::write_curves_svg(&out.join("ddqn_curve.svg"), &[curve.clone()], "DDQN evaluation")?;
    }
    println!(
        "evaluated {} runs: smoothed F1 {:.4} at budget {}",
        curve.runs.len(),
        curve.final_value(),
        config.budget
    );
    Ok(())
}

fn cmd_baselines(config_path: &PathBuf, out: &PathBuf, strategies: &str, plot: bool) -> Result<()> {
    let config = ExperimentConfig::from_file(config_path)?;
    std::fs::create_dir_all(out)?;
    let baselines = strategies
        .split(',')
        .map(|s| Baseline::parse(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let data = load_data(&config)?;
    let curves = run_baselines(&baselines, &config, &data)?;
    for curve in &curves {
        emit::write_runs_csv(&out.join(format!("{}_runs.csv", curve.strategy)), curve)?;
        emit::write_mean_csv(&out.join(format!("{}_mean.csv", curve.strategy)), curve)?;
    }
    let table = ComparisonTable::build(&curves, &config.checkpoints);
    emit::write_table_csv(&out.join("table.csv"), &table)?;
    std::fs::write(out.join("table.txt"), table.to_text())?;
    if plot {
        emit::write_curves_svg(&out.join("baselines.svg"), &curves, "Baseline comparison")?;
    }
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_diagnose(
    checkpoint_path: &PathBuf,
    buffer_path: &PathBuf,
    out: &PathBuf,
    reps: usize,
    grid: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let agent = checkpoint::load_agent(checkpoint_path)
        .map_err(|e| anyhow!("{e}"))?
        .into_agent()
        .map_err(|e| anyhow!("{e}"))?;
    let buffer = checkpoint::load_buffer(buffer_path).map_err(|e| anyhow!("{e}"))?;
    let points = diagnose_q_correlation(&agent, &buffer, reps, grid, seed)?;
    emit::write_diagnostics_csv(&out.join("q_correlation.csv"), &points)?;
    println!(
        "wrote {} sweep points to {}",
        points.len(),
        out.join("q_correlation.csv").display()
    );
    Ok(())
}
