//! `packsim`: run, train, evaluate and replay controllers of the dual-belt
//! packaging machine simulator.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Instant;

use packsim::config::Config;
use packsim::controllers::{run_episode, BaselineController, ConstantController, Controller};
use packsim::env::nominal_speed;
use packsim::ppo::train::{eval_scenario_seed, train};
use packsim::ppo::{Checkpoint, PolicyController};
use packsim::report::{episode_report, save_speed_trace, RunReport};
use packsim::scenario::{export_inflow_csv, generate_scenario, load_inflow_csv, Scenario};

#[derive(Parser)]
#[command(name = "packsim", version, about = "Dual-belt packaging machine simulator")]
struct Cli {
    /// Configuration file (TOML); defaults plus PACKSIM_* overrides otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes under one controller and report the results.
    Run(RunArgs),
    /// Train the policy with PPO and write checkpoints.
    Train(TrainArgs),
    /// Compare all controllers on the same held-out scenarios.
    Eval(EvalArgs),
    /// Re-run one episode and dump its full event log and speed trace.
    Replay(ReplayArgs),
    /// Write a scenario to an inflow CSV file.
    ExportScenario(ExportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerKind {
    Constant,
    Baseline,
    Rl,
}

impl ControllerKind {
    fn name(self) -> &'static str {
        match self {
            ControllerKind::Constant => "constant",
            ControllerKind::Baseline => "baseline",
            ControllerKind::Rl => "rl",
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "baseline")]
    controller: ControllerKind,
    /// Policy checkpoint, required for the rl controller.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Scenario source: `random:<seed>` or `csv:<path>`.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Where reports and speed traces go; stdout only when omitted.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Base seed used when --scenario is omitted.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Where checkpoints and the training log go.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the configured training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Warm-start from an existing checkpoint instead of fresh weights.
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Policy checkpoint; without it only constant and baseline run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of held-out scenarios.
    #[arg(long, default_value_t = 7)]
    episodes: usize,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Base seed of the held-out scenario set.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, value_enum, default_value = "baseline")]
    controller: ControllerKind,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Scenario source: `random:<seed>` or `csv:<path>`.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Scenario source: `random:<seed>` or `csv:<path>`.
    #[arg(long)]
    scenario: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default_with_env()?,
    })
}

/// Parse `random:<seed>` / `csv:<path>`; random seeds advance per episode.
fn resolve_scenario(spec: &str, episode: usize, cfg: &Config) -> Result<(Scenario, String)> {
    if let Some(seed) = spec.strip_prefix("random:") {
        let seed: u64 = seed.parse().context("random:<seed> takes an integer")?;
        let seed = seed.wrapping_add(episode as u64);
        let scenario = generate_scenario(&cfg.scenario, seed, &cfg.machine);
        return Ok((scenario, format!("random:{seed}")));
    }
    if let Some(path) = spec.strip_prefix("csv:") {
        let file = std::fs::File::open(path).with_context(|| format!("opening {path}"))?;
        let scenario = load_inflow_csv(BufReader::new(file), &cfg.machine)?;
        return Ok((scenario, format!("csv:{path}")));
    }
    bail!("scenario must be `random:<seed>` or `csv:<path>`, got `{spec}`")
}

fn build_controller(
    kind: ControllerKind,
    checkpoint: &Option<PathBuf>,
    cfg: &Config,
) -> Result<Box<dyn Controller>> {
    Ok(match kind {
        ControllerKind::Constant => {
            Box::new(ConstantController::new(nominal_speed(cfg), &cfg.machine)?)
        }
        ControllerKind::Baseline => Box::new(BaselineController::new(cfg)),
        ControllerKind::Rl => {
            let path = checkpoint
                .as_ref()
                .context("--checkpoint is required with --controller rl")?;
            let ck = Checkpoint::load(path)?;
            if ck.config_digest != cfg.digest() {
                eprintln!(
                    "warning: checkpoint was trained under a different configuration ({} vs {})",
                    ck.config_digest,
                    cfg.digest()
                );
            }
            Box::new(PolicyController::from_checkpoint(&ck, cfg)?)
        }
    })
}

fn cmd_run(cfg: &Config, args: &RunArgs) -> Result<()> {
    let started = Instant::now();
    let initial = nominal_speed(cfg);
    let spec = args
        .scenario
        .clone()
        .unwrap_or_else(|| format!("random:{}", args.seed));
    let mut episodes = Vec::with_capacity(args.episodes);
    for ep in 0..args.episodes {
        let (scenario, label) = resolve_scenario(&spec, ep, cfg)?;
        let mut controller = build_controller(args.controller, &args.checkpoint, cfg)?;
        let sim = run_episode(cfg, scenario, initial, controller.as_mut())?;
        episodes.push(episode_report(
            &sim,
            &cfg.reward,
            args.controller.name(),
            &label,
            initial,
        )?);
        if let Some(dir) = &args.out_dir {
            std::fs::create_dir_all(dir)?;
            save_speed_trace(&sim, &dir.join(format!("speed_trace_{ep:03}.csv")))?;
        }
    }
    let report = RunReport { episodes };
    print!("{}", report.render_table());
    if let Some(dir) = &args.out_dir {
        report.save_json(&dir.join("report.json"))?;
    }
    eprintln!("elapsed: {:.1} ms", started.elapsed().as_secs_f64() * 1e3);
    Ok(())
}

fn cmd_train(cfg: &Config, args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let log_path = args.out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let mut progress = |stat: &packsim::ppo::train::IterStats| {
        use std::io::Write;
        eprintln!(
            "iter {:>4}  lr {:.2e}  return {}  eval {}",
            stat.iteration,
            stat.lr,
            stat.mean_return
                .map_or("      -".into(), |r| format!("{r:>7.2}")),
            stat.eval_return
                .map_or("      -".into(), |r| format!("{r:>7.2}")),
        );
        let _ = writeln!(log, "{}", serde_json::to_string(stat).unwrap());
    };
    let init = match &args.init_checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config_digest != cfg.digest() {
                eprintln!(
                    "warning: initial checkpoint was trained under a different configuration"
                );
            }
            Some(ck.net)
        }
        None => None,
    };
    train(&cfg, init, Some(&args.out_dir), Some(&mut progress))?;
    eprintln!(
        "trained {} iterations in {:.1} s; checkpoints in {}",
        cfg.train.iterations,
        started.elapsed().as_secs_f64(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &Config, args: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let initial = nominal_speed(cfg);
    let seeds: Vec<u64> = (0..args.episodes)
        .map(|i| eval_scenario_seed(args.seed, i))
        .collect();
    let mut kinds = vec![ControllerKind::Constant, ControllerKind::Baseline];
    if args.checkpoint.is_some() {
        kinds.push(ControllerKind::Rl);
    }
    let mut episodes = Vec::new();
    for kind in kinds {
        for &seed in &seeds {
            let scenario = generate_scenario(&cfg.scenario, seed, &cfg.machine);
            let mut controller = build_controller(kind, &args.checkpoint, cfg)?;
            let sim = run_episode(cfg, scenario, initial, controller.as_mut())?;
            episodes.push(episode_report(
                &sim,
                &cfg.reward,
                kind.name(),
                &format!("random:{seed}"),
                initial,
            )?);
        }
    }
    let report = RunReport { episodes };
    print!("{}", report.render_table());
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        report.save_json(&dir.join("eval_report.json"))?;
    }
    eprintln!("elapsed: {:.1} ms", started.elapsed().as_secs_f64() * 1e3);
    Ok(())
}

fn cmd_replay(cfg: &Config, args: &ReplayArgs) -> Result<()> {
    use std::io::Write;
    let initial = nominal_speed(cfg);
    let (scenario, label) = resolve_scenario(&args.scenario, 0, cfg)?;
    let mut controller = build_controller(args.controller, &args.checkpoint, cfg)?;
    let sim = run_episode(cfg, scenario, initial, controller.as_mut())?;
    std::fs::create_dir_all(&args.out_dir)?;
    let events_path = args.out_dir.join("events.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&events_path)?);
    for event in &sim.events.entries {
        writeln!(out, "{}", serde_json::to_string(event)?)?;
    }
    out.flush()?;
    save_speed_trace(&sim, &args.out_dir.join("speed_trace.csv"))?;
    let report = RunReport {
        episodes: vec![episode_report(
            &sim,
            &cfg.reward,
            args.controller.name(),
            &label,
            initial,
        )?],
    };
    report.save_json(&args.out_dir.join("report.json"))?;
    print!("{}", report.render_table());
    eprintln!(
        "{} events -> {}",
        sim.events.entries.len(),
        events_path.display()
    );
    Ok(())
}

fn cmd_export(cfg: &Config, args: &ExportArgs) -> Result<()> {
    let (scenario, label) = resolve_scenario(&args.scenario, 0, cfg)?;
    let file = std::fs::File::create(&args.out)?;
    export_inflow_csv(&scenario, &cfg.machine, std::io::BufWriter::new(file))?;
    eprintln!(
        "{label}: {} arrivals over {:.0} s -> {}",
        scenario.products.len(),
        scenario.length,
        args.out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.config)?;
    match &cli.command {
        Command::Run(args) => cmd_run(&cfg, args),
        Command::Train(args) => cmd_train(&cfg, args),
        Command::Eval(args) => cmd_eval(&cfg, args),
        Command::Replay(args) => cmd_replay(&cfg, args),
        Command::ExportScenario(args) => cmd_export(&cfg, args),
    }
}
