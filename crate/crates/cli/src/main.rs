//! Command-line front end: train policies, roll out episodes, evaluate log
//! directories, and sweep team sizes against communication baselines.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use coop_transport::checkpoint::Checkpoint;
use coop_transport::config::{CommMode, Config, EvalConfig, TaskConfig};
use coop_transport::env::{run_episode, Policy, RandomPolicy, ZeroPolicy};
use coop_transport::episode::load_log_dir;
use coop_transport::maddpg::{actor_policies, train};
use coop_transport::metrics::{evaluate_logs, write_metrics_csv, write_summary_json, Summary};
use coop_transport::rng::derive_seed;

#[derive(Parser)]
#[command(
    name = "coop-transport",
    about = "Distributed cooperative payload transport: training, rollouts, and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train actors and critics for one communication mode.
    Train(TrainArgs),
    /// Run episodes and write one JSONL log per trial.
    Rollout(RolloutArgs),
    /// Compute metrics over a directory of episode logs.
    Evaluate(EvaluateArgs),
    /// Roll out and evaluate a checkpoint across team sizes and modes.
    Sweep(SweepArgs),
}

fn parse_comm_mode(s: &str) -> Result<CommMode, String> {
    s.parse().map_err(|_| {
        format!(
            "unknown communication mode '{s}', expected one of {}",
            CommMode::ALL.map(|m| m.to_string()).join(", ")
        )
    })
}

#[derive(Args)]
struct TrainArgs {
    /// TOML configuration (task + training + evaluation sections).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_comm_mode, default_value = "ours")]
    comm_mode: CommMode,
    /// Run directory for curves, checkpoints, and the config echo.
    #[arg(long)]
    out: PathBuf,
    /// Override the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the episode count from the config.
    #[arg(long)]
    episodes: Option<usize>,
    /// Continue from an earlier checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_comm_mode, default_value = "ours")]
    comm_mode: CommMode,
    /// Trained policies; omit to use --policy instead.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Untrained baseline when no checkpoint is given: "zero" or "random".
    #[arg(long, default_value = "random")]
    policy: String,
    #[arg(long)]
    out: PathBuf,
    /// Episodes to run; defaults to the config's evaluation trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; each trial derives its own stream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the team size from the config.
    #[arg(long)]
    agents: Option<usize>,
    /// Gaussian action noise during rollout (0 = deterministic policy).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of episode_*.jsonl logs.
    logs: PathBuf,
    /// Where to write metrics.csv and summary.json; defaults to the log
    /// directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional config supplying evaluation thresholds.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Team sizes to execute, e.g. 3,4,5,6,7,8.
    #[arg(long, value_delimiter = ',', required = true)]
    agents: Vec<usize>,
    /// Communication modes to cross with the team sizes.
    #[arg(long, value_parser = parse_comm_mode, value_delimiter = ',', default_values = ["full", "ours", "nocom"])]
    comm_mode: Vec<CommMode>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Rollout(args) => run_rollout(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Sweep(args) => run_sweep(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn load_config(path: &Path) -> anyhow::Result<Config> {
    let config = Config::load(path)
        .with_context(|| format!("loading configuration {}", path.display()))?;
    Ok(config)
}

fn run_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(episodes) = args.episodes {
        config.train.episodes = episodes;
    }
    let outcome = train(
        &config.task,
        &config.train,
        args.comm_mode,
        &args.out,
        args.resume.as_deref(),
    )?;
    log::info!(
        "trained {} episodes, checkpoint {}",
        outcome.episodes_completed,
        outcome.checkpoint.display()
    );
    println!("checkpoint: {}", outcome.checkpoint.display());
    println!("curve: {}", outcome.curve.display());
    Ok(())
}

fn build_policies(
    checkpoint: Option<&Checkpoint>,
    fallback: &str,
    agents: usize,
    noise: f64,
    seed: u64,
) -> anyhow::Result<Vec<Box<dyn Policy>>> {
    if let Some(ckpt) = checkpoint {
        return Ok(actor_policies(ckpt, agents, noise, seed)?);
    }
    let policies: Vec<Box<dyn Policy>> = match fallback {
        "zero" => (0..agents)
            .map(|_| Box::new(ZeroPolicy) as Box<dyn Policy>)
            .collect(),
        "random" => (0..agents)
            .map(|i| Box::new(RandomPolicy::new(seed, i as u64)) as Box<dyn Policy>)
            .collect(),
        other => bail!("unknown fallback policy '{other}', expected zero or random"),
    };
    Ok(policies)
}

fn rollout_once(
    task: &TaskConfig,
    comm_mode: CommMode,
    checkpoint: Option<&Checkpoint>,
    fallback: &str,
    noise: f64,
    trials: usize,
    base_seed: u64,
    out: &Path,
) -> anyhow::Result<usize> {
    std::fs::create_dir_all(out)?;
    for trial in 0..trials {
        let seed = derive_seed(base_seed, "trial", trial as u64);
        let mut policies = build_policies(checkpoint, fallback, task.agents, noise, seed)?;
        let log = run_episode(task, &mut policies, comm_mode, seed)
            .with_context(|| format!("trial {trial} under {comm_mode}"))?;
        log.save(&out.join(format!("episode_{trial:05}.jsonl")))?;
    }
    Ok(trials)
}

fn run_rollout(args: RolloutArgs) -> anyhow::Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(agents) = args.agents {
        config.task.agents = agents;
        config.task.validate()?;
    }
    let trials = args.trials.unwrap_or(config.eval.trials);
    let seed = args.seed.unwrap_or(config.eval.seed);
    let checkpoint = match &args.checkpoint {
        Some(path) => Some(
            Checkpoint::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?,
        ),
        None => None,
    };
    let count = rollout_once(
        &config.task,
        args.comm_mode,
        checkpoint.as_ref(),
        &args.policy,
        args.noise,
        trials,
        seed,
        &args.out,
    )?;
    println!("wrote {count} episode logs to {}", args.out.display());
    Ok(())
}

fn evaluate_dir(logs_dir: &Path, out: &Path, eval: &EvalConfig) -> anyhow::Result<Summary> {
    let logs = load_log_dir(logs_dir)
        .with_context(|| format!("reading logs from {}", logs_dir.display()))?;
    let (metrics, summary) = evaluate_logs(&logs, eval)?;
    std::fs::create_dir_all(out)?;
    write_metrics_csv(out.join("metrics.csv"), &metrics)?;
    write_summary_json(out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let eval = match &args.config {
        Some(path) => load_config(path)?.eval,
        None => EvalConfig::default(),
    };
    let out = args.out.clone().unwrap_or_else(|| args.logs.clone());
    let summary = evaluate_dir(&args.logs, &out, &eval)?;
    println!(
        "trials {}: error {:.4} +/- {:.4}, cost {:.1}, band time {:.2} s, connectivity {:.3}",
        summary.trials,
        summary.control_error.mean,
        summary.control_error.std,
        summary.communication_cost.mean,
        summary.transport_time.mean,
        summary.connectivity_ratio.mean
    );
    Ok(())
}

fn run_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let config = load_config(&args.config)?;
    let trials = args.trials.unwrap_or(config.eval.trials);
    let base_seed = args.seed.unwrap_or(config.eval.seed);
    let checkpoint = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    std::fs::create_dir_all(&args.out)?;

    let mut rows = vec![
        [
            "agents",
            "comm_mode",
            "trials",
            "control_error_mean",
            "control_error_std",
            "communication_cost_mean",
            "communication_cost_std",
            "transport_time_mean",
            "transport_time_std",
            "connectivity_ratio_mean",
            "connectivity_ratio_std",
            "band_reached_rate",
            "yaw_success_rate",
        ]
        .map(String::from)
        .join(","),
    ];

    for &agents in &args.agents {
        let mut task = config.task.clone();
        task.agents = agents;
        task.validate()?;
        for &mode in &args.comm_mode {
            let cell = args.out.join(format!("n{agents}_{mode}"));
            let seed = derive_seed(base_seed, &format!("sweep-{mode}"), agents as u64);
            rollout_once(&task, mode, Some(&checkpoint), "zero", 0.0, trials, seed, &cell)?;
            let summary = evaluate_dir(&cell, &cell, &config.eval)?;
            rows.push(
                [
                    agents.to_string(),
                    mode.to_string(),
                    trials.to_string(),
                    format!("{:.9}", summary.control_error.mean),
                    format!("{:.9}", summary.control_error.std),
                    format!("{:.9}", summary.communication_cost.mean),
                    format!("{:.9}", summary.communication_cost.std),
                    format!("{:.9}", summary.transport_time.mean),
                    format!("{:.9}", summary.transport_time.std),
                    format!("{:.9}", summary.connectivity_ratio.mean),
                    format!("{:.9}", summary.connectivity_ratio.std),
                    format!("{:.9}", summary.band_reached_rate),
                    format!("{:.9}", summary.yaw_success_rate),
                ]
                .join(","),
            );
            log::info!("swept N={agents} {mode}: E={:.4}", summary.control_error.mean);
        }
    }
    let table_path = args.out.join("sweep.csv");
    std::fs::write(&table_path, rows.join("\n") + "\n")?;
    println!("sweep table: {}", table_path.display());
    Ok(())
}
