//! Dataset generation, training and evaluation loops, and metric series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{compute_reward, Agent, RewardParams};
use crate::baselines::{Oracle, ProjectionSet};
use crate::config::{AgentSharing, ExperimentConfig, LoggingPolicy};
use crate::error::{Error, Result};
use crate::netsim::{Action, Simulator, TaskOutcome};
use crate::rng::{derive_seed, episode_rng, substream, SimRng, Stream};
use crate::workload::{normalize_context, Context, Task, TaskSource, WorkloadConfig};

/// Seed tags for the independent simulations of one run.
const LIVE_TRAIN_TAG: u64 = 0x0074_7261_696e;
const LIVE_EVAL_TAG: u64 = 0x6576_616c;
const CALIBRATION_TAG: u64 = 0x0063_616c_6962;

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// One task with its outcome under every action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub task: Task,
    /// Indexed by action `0..=C`.
    pub outcomes: Vec<TaskOutcome>,
}

impl DatasetRecord {
    pub fn projection_set(&self) -> ProjectionSet {
        ProjectionSet {
            task_id: self.task.id,
            outcomes: self.outcomes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub n_actions: usize,
    pub records: Vec<DatasetRecord>,
}

const OUTCOME_FIELDS: [&str; 13] = [
    "d1_s",
    "d2_s",
    "d3_s",
    "d4_s",
    "t_exec_s",
    "t_up_s",
    "t_down_s",
    "T_s",
    "e_cpu_J",
    "e_tx_J",
    "e_rx_J",
    "e_total_J",
    "met",
];

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn csv_header(n_actions: usize) -> String {
        let mut h = String::from("task_id,user_id,arrival_s,size_bits,intensity_cpb,deadline_s");
        for a in 0..n_actions {
            for f in OUTCOME_FIELDS {
                let _ = write!(h, ",a{a}_{f}");
            }
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header(self.n_actions);
        out.push('\n');
        for r in &self.records {
            let t = &r.task;
            let _ = write!(
                out,
                "{},{},{:?},{:?},{:?},{:?}",
                t.id, t.user_id, t.arrival_time, t.size, t.intensity, t.deadline
            );
            for o in &r.outcomes {
                let _ = write!(
                    out,
                    ",{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                    o.d1,
                    o.d2,
                    o.d3,
                    o.d4,
                    o.t_exec,
                    o.t_up,
                    o.t_down,
                    o.response,
                    o.e_cpu,
                    o.e_tx,
                    o.e_rx,
                    o.e_total,
                    u8::from(o.met_deadline)
                );
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::domain("empty dataset file"))?;
        let cols = header.split(',').count();
        if cols < 6 || (cols - 6) % OUTCOME_FIELDS.len() != 0 {
            return Err(Error::domain(format!("unexpected dataset header with {cols} columns")));
        }
        let n_actions = (cols - 6) / OUTCOME_FIELDS.len();
        if header != Self::csv_header(n_actions) {
            return Err(Error::domain("dataset header does not match the expected schema"));
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::domain(format!("dataset line {}: {what}", lineno + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(bad("wrong column count"));
            }
            let num = |i: usize| fields[i].parse::<f64>().map_err(|_| bad("bad number"));
            let task = Task {
                id: fields[0].parse().map_err(|_| bad("bad task id"))?,
                user_id: fields[1].parse().map_err(|_| bad("bad user id"))?,
                arrival_time: num(2)?,
                size: num(3)?,
                intensity: num(4)?,
                deadline: num(5)?,
            };
            let mut outcomes = Vec::with_capacity(n_actions);
            for a in 0..n_actions {
                let b = 6 + a * OUTCOME_FIELDS.len();
                outcomes.push(TaskOutcome {
                    task,
                    action: a,
                    d1: num(b)?,
                    d2: num(b + 1)?,
                    d3: num(b + 2)?,
                    d4: num(b + 3)?,
                    t_exec: num(b + 4)?,
                    t_up: num(b + 5)?,
                    t_down: num(b + 6)?,
                    response: num(b + 7)?,
                    e_cpu: num(b + 8)?,
                    e_tx: num(b + 9)?,
                    e_rx: num(b + 10)?,
                    e_total: num(b + 11)?,
                    met_deadline: match fields[b + 12] {
                        "1" => true,
                        "0" => false,
                        _ => return Err(bad("met flag must be 0 or 1")),
                    },
                });
            }
            records.push(DatasetRecord { task, outcomes });
        }
        Ok(Dataset { n_actions, records })
    }

    /// Raw efficiencies `S / (T E)` of every recorded (task, action) pair.
    pub fn efficiencies(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.outcomes.iter().map(TaskOutcome::efficiency))
            .filter(|e| e.is_finite())
            .collect()
    }
}

/// Nearest-rank quantile, `q ∈ (0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Chooses the action executed while generating a dataset.
fn logging_action(policy: LoggingPolicy, ps: &ProjectionSet, rng: &mut SimRng) -> Action {
    match policy {
        LoggingPolicy::Uniform => rng.gen_range(0..ps.n_actions()),
        LoggingPolicy::Local => 0,
        other => other.oracle().expect("oracle logging policy").choose(ps),
    }
}

/// Runs the live simulator under the logging policy and records every
/// arriving task's projected outcome for all actions.
pub fn generate_dataset(cfg: &ExperimentConfig, seed: u64, n_tasks: usize) -> Result<Dataset> {
    generate_with_realized(cfg, seed, n_tasks).map(|(ds, _)| ds)
}

/// As [`generate_dataset`], also returning the realized outcomes of the executed actions.
pub fn generate_with_realized(
    cfg: &ExperimentConfig,
    seed: u64,
    n_tasks: usize,
) -> Result<(Dataset, Vec<TaskOutcome>)> {
    let mut source = TaskSource::new(seed, cfg.n_users, cfg.workload.clone())?;
    let mut sim = Simulator::new(cfg.sim_config(), seed)?;
    let mut log_rng = substream(seed, Stream::Logging);
    let mut records = Vec::with_capacity(n_tasks);
    let mut realized = Vec::new();
    for _ in 0..n_tasks {
        let task = source.next_task()?;
        realized.extend(sim.advance_to(task.arrival_time)?);
        let pending = sim.arrive(task)?;
        let outcomes = sim.snapshot(&pending).project_all(&task)?;
        let record = DatasetRecord { task, outcomes };
        let action = logging_action(cfg.run.logging_policy, &record.projection_set(), &mut log_rng);
        records.push(record);
        sim.submit(pending, action)?;
    }
    realized.extend(sim.drain()?);
    Ok((
        Dataset {
            n_actions: cfg.n_actions(),
            records,
        },
        realized,
    ))
}

/// Efficiency scale from the configured quantile of `ds`'s efficiencies.
pub fn calibrate_efficiency_scale(ds: &Dataset, q: f64) -> Result<f64> {
    let scale = quantile(&ds.efficiencies(), q)
        .ok_or_else(|| Error::domain("cannot calibrate the efficiency scale on an empty dataset"))?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::domain(format!(
            "calibrated efficiency scale {scale} is not positive"
        )));
    }
    Ok(scale)
}

/// Fixed scale from the config, else calibrated on `ds` (or on a fresh
/// uniform-logging simulation when no dataset is given).
pub fn resolve_reward_params(cfg: &ExperimentConfig, ds: Option<&Dataset>) -> Result<RewardParams> {
    if let Some(s) = cfg.reward.efficiency_scale {
        return Ok(cfg.reward_params(s));
    }
    let q = cfg.reward.calibration_quantile;
    let scale = match ds {
        Some(ds) => calibrate_efficiency_scale(ds, q)?,
        None => {
            let mut cal = cfg.clone();
            cal.run.logging_policy = LoggingPolicy::Uniform;
            let seed = derive_seed(cfg.seed, CALIBRATION_TAG);
            let ds = generate_dataset(&cal, seed, cfg.reward.calibration_tasks)?;
            calibrate_efficiency_scale(&ds, q)?
        }
    };
    Ok(cfg.reward_params(scale))
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub phase: Phase,
    /// Accumulated reward.
    pub reward: f64,
    pub deadline_frac: f64,
    /// Accumulated energy, joules.
    pub energy: f64,
    /// Accumulated response time, seconds.
    pub response: f64,
    pub tasks: usize,
    pub met: usize,
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    reward: f64,
    energy: f64,
    response: f64,
    tasks: usize,
    met: usize,
}

impl Accumulator {
    fn add(&mut self, o: &TaskOutcome, r: f64) {
        self.reward += r;
        self.energy += o.e_total;
        self.response += o.response;
        self.tasks += 1;
        self.met += usize::from(o.met_deadline);
    }

    fn finish(&self, episode: u64, phase: Phase) -> EpisodeMetrics {
        EpisodeMetrics {
            episode,
            phase,
            reward: self.reward,
            deadline_frac: if self.tasks == 0 {
                0.0
            } else {
                self.met as f64 / self.tasks as f64
            },
            energy: self.energy,
            response: self.response,
            tasks: self.tasks,
            met: self.met,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub rows: Vec<EpisodeMetrics>,
}

pub const METRICS_CSV_HEADER: &str = "episode,phase,reward,deadline_frac,energy_J,response_s";

impl MetricsSeries {
    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.reward).collect()
    }

    pub fn deadline_fracs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.deadline_frac).collect()
    }

    pub fn of_phase(&self, phase: Phase) -> MetricsSeries {
        MetricsSeries {
            rows: self.rows.iter().filter(|r| r.phase == phase).copied().collect(),
        }
    }

    pub fn extend(&mut self, other: MetricsSeries) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?}",
                r.episode,
                r.phase.as_str(),
                r.reward,
                r.deadline_frac,
                r.energy,
                r.response
            );
        }
        out
    }
}

/// Trailing mean over `min(window, i + 1)` points.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::domain("moving average window must be >= 1"));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        let n = (i + 1).min(window);
        // Re-sum the window exactly every 1024 samples.
        if i % 1024 == 0 {
            sum = series[i + 1 - n..=i].iter().sum();
        }
        out.push(sum / n as f64);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// A pool of E2DA agents, one per user or one shared.
#[derive(Debug, Clone)]
pub struct AgentPool {
    pub agents: Vec<Agent>,
    pub sharing: AgentSharing,
}

impl AgentPool {
    pub fn new(cfg: &ExperimentConfig, reward: RewardParams, seed: u64) -> Result<Self> {
        let agents = (0..cfg.n_agents())
            .map(|i| Agent::new(cfg.agent.clone(), reward, cfg.n_actions(), seed, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(AgentPool {
            agents,
            sharing: cfg.run.agent_sharing,
        })
    }

    pub fn index_for(&self, user: u32) -> usize {
        match self.sharing {
            AgentSharing::PerUser => user as usize % self.agents.len(),
            AgentSharing::Shared => 0,
        }
    }

    pub fn episodes_completed(&self) -> u64 {
        self.agents.first().map_or(0, |a| a.episodes_completed)
    }

    pub fn reward_params(&self) -> RewardParams {
        *self.agents[0].reward_params()
    }
}

/// Decision rule used by the run loops.
pub enum Policy<'a> {
    /// E2DA agents; `learn` enables exploration and training.
    E2da {
        pool: &'a mut AgentPool,
        learn: bool,
    },
    /// Uniform random actions.
    Random(Box<SimRng>),
    Oracle(Oracle),
    /// The same action for every task.
    Fixed(Action),
}

impl Policy<'_> {
    pub fn random(seed: u64) -> Policy<'static> {
        Policy::Random(Box::new(substream(seed, Stream::RandomPolicy)))
    }

    fn needs_projections(&self) -> bool {
        matches!(self, Policy::Oracle(_))
    }

    fn choose(
        &mut self,
        task: &Task,
        x: &Context,
        ps: Option<&ProjectionSet>,
        n_actions: usize,
        episode: u64,
    ) -> Action {
        match self {
            Policy::E2da { pool, learn } => {
                let i = pool.index_for(task.user_id);
                let agent = &mut pool.agents[i];
                let eps = if *learn {
                    agent.config().epsilon_at(episode)
                } else {
                    0.0
                };
                agent.act(x, eps)
            }
            Policy::Random(rng) => rng.gen_range(0..n_actions),
            Policy::Oracle(o) => o.choose(ps.expect("oracle policies receive projections")),
            Policy::Fixed(a) => *a,
        }
    }

    fn learn(&mut self, task: &Task, x: Context, action: Action, reward: f64) -> Result<()> {
        if let Policy::E2da { pool, learn: true } = self {
            let i = pool.index_for(task.user_id);
            pool.agents[i].observe(x, action, reward)?;
        }
        Ok(())
    }

    fn end_episode(&mut self) {
        if let Policy::E2da { pool, learn: true } = self {
            for a in &mut pool.agents {
                a.episodes_completed += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset replay
// ---------------------------------------------------------------------------

/// Replays `n_episodes` episodes of `tasks_per_episode` uniformly drawn records,
/// appending one row to `out` per finished episode.
///
/// Episode `e` (numbered from `first_episode`) draws its records from its own
/// keystream block, so resumed runs see the same records as uninterrupted ones.
#[allow(clippy::too_many_arguments)]
pub fn run_dataset(
    ds: &Dataset,
    workload: &WorkloadConfig,
    policy: &mut Policy<'_>,
    reward: &RewardParams,
    phase: Phase,
    seed: u64,
    first_episode: u64,
    n_episodes: u64,
    tasks_per_episode: usize,
    out: &mut MetricsSeries,
) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::domain("dataset is empty"));
    }
    let stream = match phase {
        Phase::Train => Stream::TrainEpisodes,
        Phase::Test => Stream::EvalEpisodes,
    };
    for episode in first_episode..first_episode + n_episodes {
        let mut rng = episode_rng(seed, stream, episode);
        let mut acc = Accumulator::default();
        for _ in 0..tasks_per_episode {
            let rec = &ds.records[rng.gen_range(0..ds.len())];
            let x = normalize_context(&rec.task, workload)?;
            let ps = policy.needs_projections().then(|| rec.projection_set());
            let a = policy.choose(&rec.task, &x, ps.as_ref(), ds.n_actions, episode);
            let outcome = &rec.outcomes[a];
            let r = compute_reward(outcome, reward)?;
            policy.learn(&rec.task, x, a, r)?;
            acc.add(outcome, r);
        }
        policy.end_episode();
        out.rows.push(acc.finish(episode, phase));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Live simulation
// ---------------------------------------------------------------------------

/// Drives the simulator for `n_episodes * tasks_per_episode` arrivals.
///
/// Rewards are only known when a task completes, so learning happens at
/// completion events. Each task's metrics are attributed to the episode in
/// which it arrived. On failure, rows of the episodes already closed are
/// still appended to `out`.
#[allow(clippy::too_many_arguments)]
pub fn run_live(
    cfg: &ExperimentConfig,
    policy: &mut Policy<'_>,
    reward: &RewardParams,
    phase: Phase,
    sim_seed: u64,
    first_episode: u64,
    n_episodes: u64,
    tasks_per_episode: usize,
    out: &mut MetricsSeries,
) -> Result<()> {
    let mut accs = vec![Accumulator::default(); n_episodes as usize];
    let mut episodes_closed = 0usize;
    let result = live_loop(
        cfg,
        policy,
        reward,
        sim_seed,
        first_episode,
        tasks_per_episode,
        &mut accs,
        &mut episodes_closed,
    );
    let n_rows = if result.is_ok() { accs.len() } else { episodes_closed };
    out.rows.extend(
        accs.iter()
            .take(n_rows)
            .enumerate()
            .map(|(i, a)| a.finish(first_episode + i as u64, phase)),
    );
    result
}

#[allow(clippy::too_many_arguments)]
fn live_loop(
    cfg: &ExperimentConfig,
    policy: &mut Policy<'_>,
    reward: &RewardParams,
    sim_seed: u64,
    first_episode: u64,
    tasks_per_episode: usize,
    accs: &mut [Accumulator],
    episodes_closed: &mut usize,
) -> Result<()> {
    let mut source = TaskSource::new(sim_seed, cfg.n_users, cfg.workload.clone())?;
    let mut sim = Simulator::new(cfg.sim_config(), sim_seed)?;
    let n_actions = cfg.n_actions();
    let n_episodes = accs.len();
    let mut pending_ctx: BTreeMap<u64, (usize, Context)> = BTreeMap::new();

    let settle = |outcomes: Vec<TaskOutcome>,
                  policy: &mut Policy<'_>,
                  accs: &mut [Accumulator],
                  pending_ctx: &mut BTreeMap<u64, (usize, Context)>|
     -> Result<()> {
        for o in outcomes {
            let (ep, x) = pending_ctx
                .remove(&o.task.id)
                .ok_or_else(|| Error::Internal(format!("unknown completed task {}", o.task.id)))?;
            let r = compute_reward(&o, reward)?;
            policy.learn(&o.task, x, o.action, r)?;
            accs[ep].add(&o, r);
        }
        Ok(())
    };

    for i in 0..n_episodes * tasks_per_episode {
        let ep = i / tasks_per_episode;
        // Episode boundaries advance the exploration schedule.
        while *episodes_closed < ep {
            policy.end_episode();
            *episodes_closed += 1;
        }
        let task = source.next_task()?;
        let done = sim.advance_to(task.arrival_time)?;
        settle(done, policy, accs, &mut pending_ctx)?;
        let pending = sim.arrive(task)?;
        let x = normalize_context(&task, &cfg.workload)?;
        let ps = if policy.needs_projections() {
            Some(ProjectionSet::new(sim.snapshot(&pending).project_all(&task)?)?)
        } else {
            None
        };
        let a = policy.choose(&task, &x, ps.as_ref(), n_actions, first_episode + ep as u64);
        pending_ctx.insert(task.id, (ep, x));
        sim.submit(pending, a)?;
    }
    let done = sim.drain()?;
    settle(done, policy, accs, &mut pending_ctx)?;
    while *episodes_closed < n_episodes {
        policy.end_episode();
        *episodes_closed += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

/// Runs `n_episodes` episodes of `policy` in dataset mode when `ds` is given,
/// else live, appending rows to `out` as episodes finish.
///
/// Live simulations are seeded per (phase, first episode), so a resumed
/// training run continues on a fresh arrival stream.
#[allow(clippy::too_many_arguments)]
pub fn run_phase(
    cfg: &ExperimentConfig,
    policy: &mut Policy<'_>,
    reward: &RewardParams,
    ds: Option<&Dataset>,
    phase: Phase,
    first_episode: u64,
    n_episodes: u64,
    out: &mut MetricsSeries,
) -> Result<()> {
    let tpe = cfg.run.tasks_per_episode;
    match ds {
        Some(ds) => run_dataset(
            ds,
            &cfg.workload,
            policy,
            reward,
            phase,
            cfg.seed,
            first_episode,
            n_episodes,
            tpe,
            out,
        ),
        None => {
            let tag = match phase {
                Phase::Train => LIVE_TRAIN_TAG,
                Phase::Test => LIVE_EVAL_TAG,
            };
            let sim_seed = derive_seed(derive_seed(cfg.seed, tag), first_episode);
            run_live(
                cfg,
                policy,
                reward,
                phase,
                sim_seed,
                first_episode,
                n_episodes,
                tpe,
                out,
            )
        }
    }
}

/// Trains `pool` for `cfg.run.n_train_episodes` more episodes.
pub fn run_training(cfg: &ExperimentConfig, pool: &mut AgentPool, ds: Option<&Dataset>) -> Result<MetricsSeries> {
    let reward = pool.reward_params();
    let first = pool.episodes_completed();
    let mut out = MetricsSeries::default();
    let mut policy = Policy::E2da { pool, learn: true };
    run_phase(
        cfg,
        &mut policy,
        &reward,
        ds,
        Phase::Train,
        first,
        cfg.run.n_train_episodes,
        &mut out,
    )?;
    Ok(out)
}

/// Evaluates `policy` frozen (no exploration, no updates) for `cfg.run.n_test_episodes` episodes.
pub fn run_evaluation(
    cfg: &ExperimentConfig,
    policy: &mut Policy<'_>,
    reward: &RewardParams,
    ds: Option<&Dataset>,
) -> Result<MetricsSeries> {
    if let Policy::E2da { learn, .. } = policy {
        *learn = false;
    }
    let mut out = MetricsSeries::default();
    run_phase(
        cfg,
        policy,
        reward,
        ds,
        Phase::Test,
        0,
        cfg.run.n_test_episodes,
        &mut out,
    )?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub label: String,
    pub episodes: usize,
    pub tasks: usize,
    pub mean_episode_reward: f64,
    pub deadline_fraction: f64,
    pub mean_task_energy_j: f64,
    pub mean_task_response_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: String,
    pub denominator: String,
    pub reward_ratio: f64,
    pub deadline_ratio: f64,
    pub energy_ratio: f64,
    pub response_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub agents: Vec<AgentSummary>,
    /// For every pair `i < j`: metric of `j` over metric of `i`.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ratios: Vec<Ratio>,
}

/// Test-phase means per labelled series (all rows when a series has no test rows).
pub fn summarize(series: &[(String, &MetricsSeries)]) -> Result<Summary> {
    let mut agents = Vec::new();
    for (label, s) in series {
        let test = s.of_phase(Phase::Test);
        let rows = if test.rows.is_empty() { &s.rows } else { &test.rows };
        if rows.is_empty() {
            return Err(Error::domain(format!("series `{label}` is empty")));
        }
        let tasks: usize = rows.iter().map(|r| r.tasks).sum();
        let met: usize = rows.iter().map(|r| r.met).sum();
        let per_task = |f: fn(&EpisodeMetrics) -> f64| rows.iter().map(f).sum::<f64>() / tasks.max(1) as f64;
        agents.push(AgentSummary {
            label: label.clone(),
            episodes: rows.len(),
            tasks,
            mean_episode_reward: rows.iter().map(|r| r.reward).sum::<f64>() / rows.len() as f64,
            deadline_fraction: met as f64 / tasks.max(1) as f64,
            mean_task_energy_j: per_task(|r| r.energy),
            mean_task_response_s: per_task(|r| r.response),
        });
    }
    let mut ratios = Vec::new();
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            let (a, b) = (&agents[i], &agents[j]);
            ratios.push(Ratio {
                numerator: b.label.clone(),
                denominator: a.label.clone(),
                reward_ratio: b.mean_episode_reward / a.mean_episode_reward,
                deadline_ratio: b.deadline_fraction / a.deadline_fraction,
                energy_ratio: b.mean_task_energy_j / a.mean_task_energy_j,
                response_ratio: b.mean_task_response_s / a.mean_task_response_s,
            });
        }
    }
    Ok(Summary { agents, ratios })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Intensity,
    Size,
}

/// Copy of `cfg` whose chosen feature distribution is rescaled to `mean`.
///
/// Context bounds are left untouched; out-of-range features clamp.
pub fn scenario(cfg: &ExperimentConfig, axis: SweepAxis, mean: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Intensity => c.workload.intensity_cpb = c.workload.intensity_cpb.scaled_to_mean(mean),
        SweepAxis::Size => c.workload.size_bits = c.workload.size_bits.scaled_to_mean(mean),
    }
    c
}
