//! `e2da`: dataset generation, training, evaluation, and scenario sweeps for
//! the MEC offloading simulator.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments, 3 I/O failure,
//! 4 runtime fault.

mod artifacts;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mec_offload::bandit::{Agent, AgentCheckpoint, RewardParams};
use mec_offload::baselines::Oracle;
use mec_offload::config::{AgentSharing, ExperimentConfig, Mode};
use mec_offload::experiment::{
    generate_dataset, resolve_reward_params, run_phase, scenario, summarize, AgentPool, AgentSummary, Dataset,
    MetricsSeries, Phase, Policy, Ratio, SweepAxis,
};

use artifacts::OutputDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Config,
    Io,
    Runtime,
}

impl Failure {
    fn code(self) -> u8 {
        match self {
            Failure::Config => 2,
            Failure::Io => 3,
            Failure::Runtime => 4,
        }
    }
}

#[derive(Debug)]
struct CliError {
    kind: Failure,
    error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<mec_offload::Error> for CliError {
    fn from(e: mec_offload::Error) -> Self {
        let kind = match e {
            mec_offload::Error::Config { .. } => Failure::Config,
            _ => Failure::Runtime,
        };
        CliError { kind, error: e.into() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

trait Classify<T> {
    fn or_fail(self, kind: Failure) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn or_fail(self, kind: Failure) -> CliResult<T> {
        self.map_err(|e| CliError { kind, error: e.into() })
    }
}

fn config_error(msg: impl fmt::Display) -> CliError {
    CliError {
        kind: Failure::Config,
        error: anyhow!("{msg}"),
    }
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "e2da",
    version,
    about = "MEC task offloading simulator and E2DA bandit trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the logging policy and record every task's outcome under all actions.
    GenerateDataset(GenerateArgs),
    /// Train an agent and write per-episode metrics and a model checkpoint.
    Train(TrainArgs),
    /// Evaluate a frozen agent or an oracle baseline.
    Evaluate(EvaluateArgs),
    /// Evaluate a baseline under rescaled workloads and report pairwise ratios.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; every field has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-level seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Number of records (overrides `run.dataset_tasks`).
    #[arg(long)]
    tasks: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Dataset,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrainAgent {
    E2da,
    Random,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "e2da")]
    agent: TrainAgent,
    /// Replay a dataset or drive the simulator (defaults to `run.mode`).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// dataset.csv for dataset mode.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// model.json to continue training from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalAgent {
    E2da,
    Eel,
    Ee,
    R,
    Random,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    agent: EvalAgent,
    /// model.json, required for `e2da`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    Intensity,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepAgent {
    Eel,
    Ee,
    R,
    Random,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    vary: AxisArg,
    /// Comma-separated means: cycles/bit for intensity, bits for size.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Policy evaluated in every scenario.
    #[arg(long, value_enum, default_value = "ee")]
    agent: SweepAgent,
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// model.json: one checkpoint per agent plus the pool layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    n_actions: usize,
    agent_sharing: AgentSharing,
    reward: RewardParams,
    agents: Vec<AgentCheckpoint>,
}

impl ModelFile {
    fn from_pool(pool: &AgentPool, n_actions: usize) -> Self {
        ModelFile {
            n_actions,
            agent_sharing: pool.sharing,
            reward: pool.reward_params(),
            agents: pool.agents.iter().map(Agent::checkpoint).collect(),
        }
    }

    fn into_pool(self, cfg: &ExperimentConfig) -> CliResult<AgentPool> {
        if self.n_actions != cfg.n_actions() {
            return Err(config_error(format!(
                "model has {} actions but the config describes {}",
                self.n_actions,
                cfg.n_actions()
            )));
        }
        let expected = match self.agent_sharing {
            AgentSharing::PerUser => cfg.n_users as usize,
            AgentSharing::Shared => 1,
        };
        if self.agents.len() != expected {
            return Err(config_error(format!(
                "model holds {} agents, expected {expected}",
                self.agents.len()
            )));
        }
        let agents = self
            .agents
            .iter()
            .map(Agent::from_checkpoint)
            .collect::<mec_offload::Result<Vec<_>>>()
            .map_err(|e| config_error(format!("invalid model: {e}")))?;
        Ok(AgentPool {
            agents,
            sharing: self.agent_sharing,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct SummaryFile {
    command: &'static str,
    agent: String,
    mode: Mode,
    penalty: f64,
    efficiency_scale: f64,
    agents: Vec<AgentSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    ratios: Vec<Ratio>,
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| anyhow!("reading {}: {e}", path.display()))
        .or_fail(Failure::Io)
}

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_json(&read_text(path)?)?,
        None => ExperimentConfig::default().resolved()?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_dataset(path: &Path, cfg: &ExperimentConfig) -> CliResult<Dataset> {
    let ds = Dataset::from_csv(&read_text(path)?).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    if ds.n_actions != cfg.n_actions() {
        return Err(config_error(format!(
            "{} records {} actions but the config describes {}",
            path.display(),
            ds.n_actions,
            cfg.n_actions()
        )));
    }
    if ds.is_empty() {
        return Err(config_error(format!("{} holds no records", path.display())));
    }
    Ok(ds)
}

fn load_model(path: &Path, cfg: &ExperimentConfig) -> CliResult<AgentPool> {
    let model: ModelFile =
        serde_json::from_str(&read_text(path)?).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    model.into_pool(cfg)
}

/// Resolves the run mode and loads the dataset it needs.
fn select_mode(
    cfg: &mut ExperimentConfig,
    mode: Option<ModeArg>,
    dataset: Option<&Path>,
) -> CliResult<Option<Dataset>> {
    if let Some(m) = mode {
        cfg.run.mode = match m {
            ModeArg::Dataset => Mode::Dataset,
            ModeArg::Live => Mode::Live,
        };
    }
    match cfg.run.mode {
        Mode::Dataset => {
            let path = dataset.ok_or_else(|| config_error("dataset mode needs --dataset PATH"))?;
            load_dataset(path, cfg).map(Some)
        }
        Mode::Live => Ok(None),
    }
}

fn arguments(pairs: &[(&str, Option<String>)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
}

fn path_arg(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Dataset => "dataset",
        Mode::Live => "live",
    }
}

/// Writes whatever rows finished before a fault, then reports the fault.
fn finish_phase(result: mec_offload::Result<()>, series: &MetricsSeries, out: &mut OutputDir) -> CliResult<()> {
    if let Err(e) = result {
        out.write("metrics.csv", series.to_csv().as_bytes())
            .or_fail(Failure::Io)?;
        return Err(CliError {
            kind: Failure::Runtime,
            error: anyhow!(
                "{e} ({} episodes completed; partial metrics.csv written)",
                series.rows.len()
            ),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn generate(args: GenerateArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.tasks {
        if n == 0 {
            return Err(config_error("--tasks must be >= 1"));
        }
        cfg.run.dataset_tasks = n;
    }
    let mut out = OutputDir::create(&args.common.out).or_fail(Failure::Io)?;
    let ds = generate_dataset(&cfg, cfg.seed, cfg.run.dataset_tasks)?;
    out.write("dataset.csv", ds.to_csv().as_bytes()).or_fail(Failure::Io)?;
    out.finish(
        "generate-dataset",
        arguments(&[
            ("config", path_arg(&args.common.config)),
            ("tasks", args.tasks.map(|n| n.to_string())),
        ]),
        &cfg,
    )
    .or_fail(Failure::Io)
}

fn train(args: TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    let ds = select_mode(&mut cfg, args.mode, args.dataset.as_deref())?;
    let mut out = OutputDir::create(&args.common.out).or_fail(Failure::Io)?;
    let mut series = MetricsSeries::default();
    match args.agent {
        TrainAgent::E2da => {
            let mut pool = match &args.resume {
                Some(path) => load_model(path, &cfg)?,
                None => {
                    let reward = resolve_reward_params(&cfg, ds.as_ref())?;
                    AgentPool::new(&cfg, reward, cfg.seed)?
                }
            };
            let reward = pool.reward_params();
            let first = pool.episodes_completed();
            let result = run_phase(
                &cfg,
                &mut Policy::E2da {
                    pool: &mut pool,
                    learn: true,
                },
                &reward,
                ds.as_ref(),
                Phase::Train,
                first,
                cfg.run.n_train_episodes,
                &mut series,
            );
            finish_phase(result, &series, &mut out)?;
            out.write("metrics.csv", series.to_csv().as_bytes())
                .or_fail(Failure::Io)?;
            out.write_json("model.json", &ModelFile::from_pool(&pool, cfg.n_actions()))
                .or_fail(Failure::Io)?;
        }
        TrainAgent::Random => {
            if args.resume.is_some() {
                return Err(config_error("--resume applies to the e2da agent only"));
            }
            let reward = resolve_reward_params(&cfg, ds.as_ref())?;
            let mut policy = Policy::random(cfg.seed);
            let n = cfg.run.n_train_episodes;
            let result = run_phase(&cfg, &mut policy, &reward, ds.as_ref(), Phase::Train, 0, n, &mut series);
            finish_phase(result, &series, &mut out)?;
            out.write("metrics.csv", series.to_csv().as_bytes())
                .or_fail(Failure::Io)?;
        }
    }
    out.finish(
        "train",
        arguments(&[
            ("config", path_arg(&args.common.config)),
            ("agent", Some(format!("{:?}", args.agent).to_lowercase())),
            ("mode", Some(mode_name(cfg.run.mode).to_string())),
            ("dataset", path_arg(&args.dataset)),
            ("resume", path_arg(&args.resume)),
        ]),
        &cfg,
    )
    .or_fail(Failure::Io)
}

fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    let ds = select_mode(&mut cfg, args.mode, args.dataset.as_deref())?;
    let label = format!("{:?}", args.agent).to_lowercase();
    let mut pool = match (args.agent, &args.model) {
        (EvalAgent::E2da, Some(path)) => Some(load_model(path, &cfg)?),
        (EvalAgent::E2da, None) => return Err(config_error("evaluating e2da needs --model PATH")),
        _ => None,
    };
    let reward = match &pool {
        Some(p) => p.reward_params(),
        None => resolve_reward_params(&cfg, ds.as_ref())?,
    };
    let mut policy = match (args.agent, pool.as_mut()) {
        (EvalAgent::E2da, Some(pool)) => Policy::E2da { pool, learn: false },
        (EvalAgent::Eel, _) => Policy::Oracle(Oracle::Eel),
        (EvalAgent::Ee, _) => Policy::Oracle(Oracle::Ee),
        (EvalAgent::R, _) => Policy::Oracle(Oracle::R),
        _ => Policy::random(cfg.seed),
    };
    let mut out = OutputDir::create(&args.common.out).or_fail(Failure::Io)?;
    let mut series = MetricsSeries::default();
    let n = cfg.run.n_test_episodes;
    let result = run_phase(&cfg, &mut policy, &reward, ds.as_ref(), Phase::Test, 0, n, &mut series);
    finish_phase(result, &series, &mut out)?;
    out.write("metrics.csv", series.to_csv().as_bytes())
        .or_fail(Failure::Io)?;
    let summary = summarize(&[(label.clone(), &series)])?;
    out.write_json(
        "summary.json",
        &SummaryFile {
            command: "evaluate",
            agent: label.clone(),
            mode: cfg.run.mode,
            penalty: reward.penalty,
            efficiency_scale: reward.efficiency_scale,
            agents: summary.agents,
            ratios: summary.ratios,
        },
    )
    .or_fail(Failure::Io)?;
    out.finish(
        "evaluate",
        arguments(&[
            ("config", path_arg(&args.common.config)),
            ("agent", Some(label)),
            ("mode", Some(mode_name(cfg.run.mode).to_string())),
            ("dataset", path_arg(&args.dataset)),
            ("model", path_arg(&args.model)),
        ]),
        &cfg,
    )
    .or_fail(Failure::Io)
}

fn sweep(args: SweepArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    cfg.run.mode = Mode::Live;
    let axis = match args.vary {
        AxisArg::Intensity => SweepAxis::Intensity,
        AxisArg::Size => SweepAxis::Size,
    };
    if let Some(v) = args.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(config_error(format!("--values entries must be positive, got {v}")));
    }
    let axis_name = format!("{:?}", args.vary).to_lowercase();
    let agent_name = format!("{:?}", args.agent).to_lowercase();

    // One thread per scenario.
    let results: Vec<mec_offload::Result<(MetricsSeries, RewardParams)>> = std::thread::scope(|s| {
        let handles: Vec<_> = args
            .values
            .iter()
            .map(|&value| {
                let c = scenario(&cfg, axis, value);
                s.spawn(move || {
                    c.validate()?;
                    let reward = resolve_reward_params(&c, None)?;
                    let mut policy = match args.agent {
                        SweepAgent::Eel => Policy::Oracle(Oracle::Eel),
                        SweepAgent::Ee => Policy::Oracle(Oracle::Ee),
                        SweepAgent::R => Policy::Oracle(Oracle::R),
                        SweepAgent::Random => Policy::random(c.seed),
                    };
                    let mut series = MetricsSeries::default();
                    run_phase(
                        &c,
                        &mut policy,
                        &reward,
                        None,
                        Phase::Test,
                        0,
                        c.run.n_test_episodes,
                        &mut series,
                    )?;
                    Ok((series, reward))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    });

    let mut out = OutputDir::create(&args.common.out).or_fail(Failure::Io)?;
    let mut labelled = Vec::new();
    for (value, result) in args.values.iter().zip(results) {
        let (series, _) = result?;
        let label = format!("{axis_name}={value}");
        out.write(&format!("metrics_{axis_name}_{value}.csv"), series.to_csv().as_bytes())
            .or_fail(Failure::Io)?;
        labelled.push((label, series));
    }
    let refs: Vec<(String, &MetricsSeries)> = labelled.iter().map(|(l, s)| (l.clone(), s)).collect();
    let summary = summarize(&refs)?;
    let reward = resolve_reward_params(&cfg, None)?;
    out.write_json(
        "summary.json",
        &SummaryFile {
            command: "sweep",
            agent: agent_name.clone(),
            mode: Mode::Live,
            penalty: reward.penalty,
            efficiency_scale: reward.efficiency_scale,
            agents: summary.agents,
            ratios: summary.ratios,
        },
    )
    .or_fail(Failure::Io)?;
    let values: Vec<String> = args.values.iter().map(f64::to_string).collect();
    out.finish(
        "sweep",
        arguments(&[
            ("config", path_arg(&args.common.config)),
            ("vary", Some(axis_name)),
            ("values", Some(values.join(","))),
            ("agent", Some(agent_name)),
        ]),
        &cfg,
    )
    .or_fail(Failure::Io)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Failure::Config.code())
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenerateDataset(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.code())
        }
    }
}
