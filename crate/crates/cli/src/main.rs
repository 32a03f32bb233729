//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use muzero_cli::ablate::run_ablation;
use muzero_cli::config::{load_config, ExperimentConfig};
use muzero_cli::runner::{load_params, run_experiment};
use muzero_core::data::{dataset_stats, generate_behavior_dataset, read_dataset, PolicySpec};
use muzero_core::env::{EnvDescriptor, EnvKind};
use muzero_core::error::{Error, Result};
use muzero_core::eval::{evaluate, mean_return, EvalMode};
use muzero_core::search::SearchConfig;

#[derive(Parser)]
#[command(
    name = "muzero",
    about = "Train, evaluate and ablate a small model-based agent on toy environments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file and/or key=value overrides.
    Train(TrainArgs),
    /// Roll a behavior policy and write an episode dataset.
    Generate(GenerateArgs),
    /// Evaluate a saved checkpoint.
    Evaluate(EvaluateArgs),
    /// Train every loss mode on one dataset and score every eval mode.
    Ablate(TrainArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set max_steps=5000.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints, metrics and the echoed config.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Args)]
struct EnvArgs {
    /// Environment: catch or pointmass.
    #[arg(long, default_value = "catch")]
    env: String,
    #[arg(long, default_value_t = 5)]
    width: usize,
    #[arg(long, default_value_t = 10)]
    height: usize,
    /// Episode length for pointmass.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Probability a step repeats the previous action.
    #[arg(long, default_value_t = 0.0)]
    sticky: f64,
}

impl EnvArgs {
    fn descriptor(&self) -> Result<EnvDescriptor> {
        let kind = match self.env.as_str() {
            "catch" => EnvKind::Catch { width: self.width, height: self.height },
            "pointmass" => EnvKind::PointMass { episode_steps: self.steps },
            other => {
                return Err(Error::Config(format!(
                    "unknown env {other:?} (expected \"catch\" or \"pointmass\")"
                )))
            }
        };
        Ok(EnvDescriptor { kind, sticky_prob: self.sticky })
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Behavior policy: random, epsilon_oracle, pd or checkpoint.
    #[arg(long)]
    policy: String,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.8)]
    kp: f64,
    #[arg(long, default_value_t = 1.2)]
    kd: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Checkpoint to drive when --policy checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// How a checkpoint policy picks actions.
    #[arg(long, default_value = "policy_sample")]
    mode: String,
    #[arg(long, default_value_t = 16)]
    sims: usize,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "mcts")]
    mode: String,
    #[arg(long, default_value_t = 300)]
    episodes: usize,
    #[arg(long, default_value_t = 16)]
    sims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_eval_mode(name: &str) -> Result<EvalMode> {
    match name {
        "policy_sample" => Ok(EvalMode::PolicySample),
        "max_value" => Ok(EvalMode::MaxValue),
        "mcts" => Ok(EvalMode::Mcts),
        other => Err(Error::Config(format!(
            "unknown eval mode {other:?} (expected policy_sample, max_value or mcts)"
        ))),
    }
}

fn load_experiment(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(args.config.as_deref(), &args.set)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let resolved = load_experiment(args)?.resolve()?;
    let report = run_experiment(&resolved, &args.out)?;
    println!(
        "trained {} steps ({} env frames, {} episodes acted), final loss {:.6}",
        report.steps, report.env_frames, report.episodes_acted, report.final_loss
    );
    println!(
        "eval mean {:.4} over {} episodes; checkpoint {}",
        report.eval_mean,
        report.eval_returns.len(),
        report.checkpoint_path.display()
    );
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let desc = args.env.descriptor()?;
    let policy = match args.policy.as_str() {
        "random" => PolicySpec::Random,
        "epsilon_oracle" => PolicySpec::EpsilonOracle { epsilon: args.epsilon },
        "pd" => PolicySpec::PdController { kp: args.kp, kd: args.kd, noise: args.noise },
        "checkpoint" => {
            let path = args.checkpoint.as_ref().ok_or_else(|| {
                Error::Config("--policy checkpoint needs --checkpoint".into())
            })?;
            PolicySpec::Checkpoint {
                path: path.to_string_lossy().into_owned(),
                mode: parse_eval_mode(&args.mode)?,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown policy {other:?} (expected random, epsilon_oracle, pd or checkpoint)"
            )))
        }
    };
    let discount = match desc.kind {
        EnvKind::Catch { .. } => 0.997,
        EnvKind::PointMass { .. } => 0.99,
    };
    let search = SearchConfig::new(args.sims, discount);
    let header =
        generate_behavior_dataset(&desc, &policy, args.episodes, args.seed, &search, &args.out)?;
    let (_, trajectories) = read_dataset(&args.out)?;
    let stats = dataset_stats(&trajectories)?;
    println!("wrote {} ({})", args.out.display(), header.generator);
    println!("{stats}");
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let desc = args.env.descriptor()?;
    let params = load_params(&args.checkpoint)?;
    let discount = match desc.kind {
        EnvKind::Catch { .. } => 0.997,
        EnvKind::PointMass { .. } => 0.99,
    };
    let search = SearchConfig::new(args.sims, discount);
    let mode = parse_eval_mode(&args.mode)?;
    let returns = evaluate(&params, &desc, args.episodes, mode, &search, args.seed)?;
    let mean = mean_return(&returns);
    let min = returns.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "mean {:.4} min {:.4} max {:.4} over {} episodes ({})",
        mean,
        min,
        max,
        returns.len(),
        args.mode
    );
    Ok(())
}

fn cmd_ablate(args: &TrainArgs) -> Result<()> {
    let cfg = load_experiment(args)?;
    let cells = run_ablation(&cfg, &args.out)?;
    println!("loss_mode        eval_mode      mean_return");
    for cell in &cells {
        println!(
            "{:<16} {:<14} {:.4}",
            format!("{:?}", cell.loss_mode),
            format!("{:?}", cell.eval_mode),
            cell.mean_return
        );
    }
    println!("grid written to {}", args.out.join("ablation.csv").display());
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(&args),
        Command::Generate(args) => cmd_generate(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Ablate(args) => cmd_ablate(&args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
