//! Discrete-event simulator of the multi-user, multi-channel MEC system.
//!
//! Pipeline of one task:
//!
//! ```text
//! local:    local FIFO --(d1)--> user CPU (t_exec) --> done
//! offload:  uplink FIFO (user, c) --(d2)--> shared uplink (bs, c) (t_up)
//!           --> edge VM FIFO --(d3)--> VM (t_exec)
//!           --> downlink FIFO (user, c) --(d4)--> shared downlink (bs, c) (t_down) --> done
//! ```
//!
//! Each shared link is an egalitarian processor-sharing server: with `n`
//! active transmissions, a flow with gain `g` progresses at `g * R / n`.
//! Rates are recomputed whenever a flow starts or finishes.
//!
//! Stage durations are accumulated per task and the reported response time
//! is their sum, so the decomposition identity holds by construction; it also
//! agrees with the clock difference (completion - arrival) up to rounding of
//! the absolute clock.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, SimRng, Stream};
use crate::workload::{DistributionSpec, Task};

/// 0 computes locally; `c` in `1..=C` offloads on channel `c`.
pub type Action = usize;

/// Residual below which a flow counts as fully transmitted, in bits.
const RESIDUAL_EPS_BITS: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Closed-form timing and energy
// ---------------------------------------------------------------------------

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be > 0, got {v}")))
    }
}

fn require_non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be >= 0, got {v}")))
    }
}

/// Seconds for a CPU at `freq` cycles/s to process `size` bits at `intensity` cycles/bit.
pub fn exec_time(size: f64, intensity: f64, freq: f64) -> Result<f64> {
    require_positive("size", size)?;
    require_positive("intensity", intensity)?;
    require_positive("frequency", freq)?;
    Ok(size * intensity / freq)
}

/// Dynamic CPU energy `kappa * S * I * f^2`, joules.
pub fn cpu_energy(size: f64, intensity: f64, freq: f64, kappa: f64) -> Result<f64> {
    require_positive("size", size)?;
    require_positive("intensity", intensity)?;
    require_positive("frequency", freq)?;
    require_positive("kappa", kappa)?;
    Ok(kappa * size * intensity * freq * freq)
}

/// Transmitter energy over `duration` seconds at `power` watts.
pub fn tx_energy(duration: f64, power: f64) -> Result<f64> {
    require_non_negative("duration", duration)?;
    require_non_negative("power", power)?;
    Ok(duration * power)
}

/// Receiver energy over `duration` seconds at `power` watts.
pub fn rx_energy(duration: f64, power: f64) -> Result<f64> {
    tx_energy(duration, power)
}

/// Per-flow rate on a processor-shared channel.
pub fn fair_share_rate(nominal_rate: f64, gain: f64, n_active: usize) -> Result<f64> {
    if n_active == 0 {
        return Err(Error::Internal("fair share with no active transmitters".into()));
    }
    if !(gain > 0.0 && gain <= 1.0) {
        return Err(Error::domain(format!("gain must lie in (0, 1], got {gain}")));
    }
    Ok(share(nominal_rate, gain, n_active))
}

#[inline]
fn share(nominal_rate: f64, gain: f64, n_active: usize) -> f64 {
    gain * nominal_rate / n_active as f64
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Informational carrier label.
    #[serde(default)]
    pub carrier_mhz: Option<f64>,
    pub uplink_rate_bps: f64,
    pub downlink_rate_bps: f64,
    pub tx_power_w: f64,
    pub rx_power_w: f64,
    /// Unitless gain factor in (0, 1], drawn once per task.
    pub gain: DistributionSpec,
}

impl ChannelConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{field}.{name}"), "must be > 0"))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{field}.{name}"), "must be >= 0"))
            }
        };
        pos("uplink_rate_bps", self.uplink_rate_bps)?;
        pos("downlink_rate_bps", self.downlink_rate_bps)?;
        nonneg("tx_power_w", self.tx_power_w)?;
        nonneg("rx_power_w", self.rx_power_w)?;
        let gain_field = format!("{field}.gain");
        self.gain.validate(&gain_field)?;
        let (lo, hi) = self.gain.support();
        if !(lo > 0.0 && hi <= 1.0) || matches!(self.gain, DistributionSpec::Exponential { .. }) {
            return Err(Error::config(gain_field, "gain support must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// The three default carriers (700, 1500, 2600 MHz).
pub fn default_channels() -> Vec<ChannelConfig> {
    let carriers = [700.0, 1500.0, 2600.0];
    let rates = [10e6, 30e6, 75e6];
    let tx = [0.8, 1.0, 1.2];
    let rx = [0.4, 0.5, 0.6];
    (0..3)
        .map(|i| ChannelConfig {
            carrier_mhz: Some(carriers[i]),
            uplink_rate_bps: rates[i],
            downlink_rate_bps: rates[i],
            tx_power_w: tx[i],
            rx_power_w: rx[i],
            gain: DistributionSpec::Uniform { min: 0.6, max: 1.0 },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub n_users: u32,
    pub n_base_stations: u32,
    pub user_cpu_hz: f64,
    pub edge_vm_hz: f64,
    /// Effective switched capacitance, J·s²/cycle³.
    pub kappa: f64,
    /// Result size as a fraction of the task size.
    pub result_size_ratio: f64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            n_users: 5,
            n_base_stations: 3,
            user_cpu_hz: 1e9,
            edge_vm_hz: 4e9,
            kappa: 1e-27,
            result_size_ratio: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub nodes: NodeConfig,
    pub channels: Vec<ChannelConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            nodes: NodeConfig::default(),
            channels: default_channels(),
        }
    }
}

impl SimConfig {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_actions(&self) -> usize {
        self.channels.len() + 1
    }

    /// Static association: user `k` attaches to base station `k mod N`.
    pub fn base_station_of(&self, user: u32) -> usize {
        (user % self.nodes.n_base_stations) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.nodes;
        if n.n_users < 1 {
            return Err(Error::config("n_users", "must be >= 1"));
        }
        if n.n_base_stations < 1 {
            return Err(Error::config("n_base_stations", "must be >= 1"));
        }
        if self.channels.is_empty() {
            return Err(Error::config("n_channels", "must be >= 1"));
        }
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, "must be > 0"))
            }
        };
        pos("network.user_cpu_hz", n.user_cpu_hz)?;
        pos("network.edge_vm_hz", n.edge_vm_hz)?;
        pos("network.kappa", n.kappa)?;
        if !(n.result_size_ratio.is_finite() && n.result_size_ratio >= 0.0) {
            return Err(Error::config("network.result_size_ratio", "must be >= 0"));
        }
        for (i, ch) in self.channels.iter().enumerate() {
            ch.validate(&format!("network.channels[{i}]"))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

/// Realized (or projected) timing and energy of one task under one action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: Task,
    pub action: Action,
    /// Local CPU queue wait.
    pub d1: f64,
    /// Uplink queue wait.
    pub d2: f64,
    /// Edge VM queue wait.
    pub d3: f64,
    /// Downlink queue wait.
    pub d4: f64,
    pub t_exec: f64,
    pub t_up: f64,
    pub t_down: f64,
    pub response: f64,
    pub e_cpu: f64,
    pub e_tx: f64,
    pub e_rx: f64,
    pub e_total: f64,
    pub met_deadline: bool,
}

impl TaskOutcome {
    pub fn local(task: Task, d1: f64, t_exec: f64, e_cpu: f64) -> Self {
        let response = d1 + t_exec;
        TaskOutcome {
            task,
            action: 0,
            d1,
            d2: 0.0,
            d3: 0.0,
            d4: 0.0,
            t_exec,
            t_up: 0.0,
            t_down: 0.0,
            response,
            e_cpu,
            e_tx: 0.0,
            e_rx: 0.0,
            e_total: e_cpu,
            met_deadline: response <= task.deadline,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn offload(
        task: Task,
        channel: Action,
        d2: f64,
        t_up: f64,
        d3: f64,
        t_exec: f64,
        d4: f64,
        t_down: f64,
        e_tx: f64,
        e_rx: f64,
    ) -> Self {
        let response = d2 + t_up + d3 + t_exec + d4 + t_down;
        TaskOutcome {
            task,
            action: channel,
            d1: 0.0,
            d2,
            d3,
            d4,
            t_exec,
            t_up,
            t_down,
            response,
            e_cpu: 0.0,
            e_tx,
            e_rx,
            e_total: e_tx + e_rx,
            met_deadline: response <= task.deadline,
        }
    }

    /// Energy efficiency `S / (T * E)` in (bits/s)/J.
    pub fn efficiency(&self) -> f64 {
        self.task.size / (self.response * self.e_total)
    }

    /// Bits per joule `S / E`.
    pub fn bits_per_joule(&self) -> f64 {
        self.task.size / self.e_total
    }

    /// Relative error of the stage-sum identity for this outcome's route.
    pub fn decomposition_error(&self) -> f64 {
        let sum = if self.action == 0 {
            self.d1 + self.t_exec
        } else {
            self.d2 + self.t_up + self.d3 + self.t_exec + self.d4 + self.t_down
        };
        (self.response - sum).abs() / self.response.abs().max(f64::MIN_POSITIVE)
    }

    /// Relative error of `e_total = e_tx + e_cpu + e_rx`.
    pub fn energy_error(&self) -> f64 {
        let sum = self.e_tx + self.e_cpu + self.e_rx;
        (self.e_total - sum).abs() / self.e_total.abs().max(f64::MIN_POSITIVE)
    }
}

/// Column header of the outcome log CSV.
pub const OUTCOME_CSV_HEADER: &str = "task_id,user_id,action,arrival_s,size_bits,intensity_cpb,deadline_s,\
d1_s,d2_s,d3_s,d4_s,t_exec_s,t_up_s,t_down_s,T_s,e_cpu_J,e_tx_J,e_rx_J,e_total_J,met_deadline";

impl TaskOutcome {
    /// One CSV row matching [`OUTCOME_CSV_HEADER`], full-precision decimals.
    pub fn csv_row(&self) -> String {
        let t = &self.task;
        format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            t.id,
            t.user_id,
            self.action,
            t.arrival_time,
            t.size,
            t.intensity,
            t.deadline,
            self.d1,
            self.d2,
            self.d3,
            self.d4,
            self.t_exec,
            self.t_up,
            self.t_down,
            self.response,
            self.e_cpu,
            self.e_tx,
            self.e_rx,
            self.e_total,
            u8::from(self.met_deadline),
        )
    }
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    LocalExecDone { user: u32 },
    UplinkDone { bs: usize, channel: usize, version: u64 },
    EdgeExecDone { user: u32 },
    DownlinkDone { bs: usize, channel: usize, version: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: f64,
    pub sequence: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest (time, sequence).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

// ---------------------------------------------------------------------------
// Shared links
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Flow {
    task: u64,
    gain: f64,
    residual: f64,
    rate: f64,
    /// Transmission time accumulated over completed rate segments.
    elapsed: f64,
}

#[derive(Debug, Clone)]
struct Link {
    nominal: f64,
    flows: Vec<Flow>,
    last_update: f64,
    version: u64,
}

impl Link {
    fn new(nominal: f64) -> Self {
        Link {
            nominal,
            flows: Vec::new(),
            last_update: 0.0,
            version: 0,
        }
    }

    fn settle(&mut self, now: f64) {
        let dt = now - self.last_update;
        if dt > 0.0 {
            for f in &mut self.flows {
                f.residual = (f.residual - f.rate * dt).max(0.0);
                f.elapsed += dt;
            }
        }
        self.last_update = now;
    }

    fn reassign(&mut self) {
        let n = self.flows.len();
        for f in &mut self.flows {
            f.rate = share(self.nominal, f.gain, n);
        }
        self.version += 1;
    }

    fn min_remaining(&self) -> Option<f64> {
        self.flows
            .iter()
            .map(|f| f.residual / f.rate)
            .min_by(|a, b| a.total_cmp(b))
    }

    fn add(&mut self, now: f64, task: u64, bits: f64, gain: f64) {
        self.settle(now);
        self.flows.push(Flow {
            task,
            gain,
            residual: bits,
            rate: 0.0,
            elapsed: 0.0,
        });
        self.reassign();
    }

    /// Completes every flow that finishes at `now`; returns (task, duration) in flow order.
    fn finish(&mut self, now: f64) -> Vec<(u64, f64)> {
        let Some(min_rem) = self.min_remaining() else {
            return Vec::new();
        };
        let cutoff = min_rem * (1.0 + 1e-12) + 1e-15;
        let dt = now - self.last_update;
        let mut done = Vec::new();
        let mut kept = Vec::with_capacity(self.flows.len());
        for mut f in self.flows.drain(..) {
            let rem = f.residual / f.rate;
            if rem <= cutoff || f.residual <= RESIDUAL_EPS_BITS {
                done.push((f.task, f.elapsed + rem));
            } else {
                if dt > 0.0 {
                    f.residual = (f.residual - f.rate * dt).max(0.0);
                    f.elapsed += dt;
                }
                kept.push(f);
            }
        }
        self.flows = kept;
        self.last_update = now;
        self.reassign();
        done
    }

    fn allocated_rate(&self) -> f64 {
        self.flows.iter().map(|f| f.rate).sum()
    }
}

// ---------------------------------------------------------------------------
// Simulator state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct InFlight {
    task: Task,
    action: Action,
    gain: f64,
    /// Clock time the current stage began.
    stage_start: f64,
    d_local: f64,
    d_up: f64,
    d_vm: f64,
    d_down: f64,
    t_exec: f64,
    t_up: f64,
}

#[derive(Debug, Clone, Default)]
struct Lane {
    queue: VecDeque<u64>,
    active: Option<u64>,
}

#[derive(Debug, Clone)]
struct UserState {
    bs: usize,
    local_queue: VecDeque<u64>,
    /// (task, completion time)
    cpu: Option<(u64, f64)>,
    vm_queue: VecDeque<u64>,
    vm: Option<(u64, f64)>,
    uplink: Vec<Lane>,
    downlink: Vec<Lane>,
}

/// A task that has arrived and had its per-channel gains drawn, awaiting an action.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingTask {
    pub task: Task,
    /// `gains[c - 1]` is the gain the task would see on channel `c`.
    pub gains: Vec<f64>,
}

/// Deterministic MEC simulator. Single owner; replications run on separate instances.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: Arc<SimConfig>,
    clock: f64,
    sequence: u64,
    calendar: BinaryHeap<Event>,
    users: Vec<UserState>,
    /// `[bs][channel - 1]`
    up_links: Vec<Vec<Link>>,
    down_links: Vec<Vec<Link>>,
    inflight: BTreeMap<u64, InFlight>,
    gain_rngs: Vec<SimRng>,
    admitted: u64,
    completed: u64,
}

impl Simulator {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.n_channels();
        let users = (0..cfg.nodes.n_users)
            .map(|u| UserState {
                bs: cfg.base_station_of(u),
                local_queue: VecDeque::new(),
                cpu: None,
                vm_queue: VecDeque::new(),
                vm: None,
                uplink: vec![Lane::default(); c],
                downlink: vec![Lane::default(); c],
            })
            .collect();
        let mk_links = |rate: fn(&ChannelConfig) -> f64| {
            (0..cfg.nodes.n_base_stations)
                .map(|_| cfg.channels.iter().map(|ch| Link::new(rate(ch))).collect())
                .collect()
        };
        let up_links = mk_links(|ch| ch.uplink_rate_bps);
        let down_links = mk_links(|ch| ch.downlink_rate_bps);
        let gain_rngs = (0..cfg.nodes.n_users)
            .map(|u| substream(seed, Stream::Gains(u)))
            .collect();
        Ok(Simulator {
            cfg: Arc::new(cfg),
            clock: 0.0,
            sequence: 0,
            calendar: BinaryHeap::new(),
            users,
            up_links,
            down_links,
            inflight: BTreeMap::new(),
            gain_rngs,
            admitted: 0,
            completed: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn admitted(&self) -> u64 {
        self.admitted
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    /// Tasks currently held in any queue or server, counted by scanning them.
    pub fn in_flight(&self) -> u64 {
        let mut n = 0usize;
        for u in &self.users {
            n += u.local_queue.len() + u.vm_queue.len();
            n += usize::from(u.cpu.is_some()) + usize::from(u.vm.is_some());
            for lane in u.uplink.iter().chain(&u.downlink) {
                n += lane.queue.len() + usize::from(lane.active.is_some());
            }
        }
        n as u64
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.calendar.peek().map(|e| e.time)
    }

    /// Sum of instantaneous allocated rates on uplink `(bs, channel)`; `channel` is 1-based.
    pub fn uplink_allocated_rate(&self, bs: usize, channel: usize) -> f64 {
        self.up_links[bs][channel - 1].allocated_rate()
    }

    pub fn uplink_active(&self, bs: usize, channel: usize) -> usize {
        self.up_links[bs][channel - 1].flows.len()
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        let ev = Event {
            time,
            sequence: self.sequence,
            kind,
        };
        self.sequence += 1;
        self.calendar.push(ev);
    }

    /// Draws the task's per-channel gains. Requires `task.arrival_time == clock`.
    pub fn arrive(&mut self, task: Task) -> Result<PendingTask> {
        if task.arrival_time != self.clock {
            return Err(Error::domain(format!(
                "task {} arrives at {} but clock is {}",
                task.id, task.arrival_time, self.clock
            )));
        }
        if !(task.size > 0.0 && task.intensity > 0.0 && task.deadline > 0.0) {
            return Err(Error::domain(format!("task {} has non-positive features", task.id)));
        }
        let user = task.user_id as usize;
        if user >= self.users.len() {
            return Err(Error::domain(format!("unknown user {}", task.user_id)));
        }
        let rng = &mut self.gain_rngs[user];
        let gains = self.cfg.channels.iter().map(|ch| ch.gain.sample(rng)).collect();
        Ok(PendingTask { task, gains })
    }

    /// Enqueues the task on the route chosen by `action`.
    pub fn submit(&mut self, pending: PendingTask, action: Action) -> Result<()> {
        if action > self.cfg.n_channels() {
            return Err(Error::domain(format!(
                "action {action} out of range 0..={}",
                self.cfg.n_channels()
            )));
        }
        let task = pending.task;
        if task.arrival_time != self.clock {
            return Err(Error::domain("submit must happen at the task's arrival instant"));
        }
        let gain = if action == 0 { 1.0 } else { pending.gains[action - 1] };
        let user = task.user_id as usize;
        self.inflight.insert(
            task.id,
            InFlight {
                task,
                action,
                gain,
                stage_start: self.clock,
                d_local: 0.0,
                d_up: 0.0,
                d_vm: 0.0,
                d_down: 0.0,
                t_exec: 0.0,
                t_up: 0.0,
            },
        );
        self.admitted += 1;
        if action == 0 {
            self.users[user].local_queue.push_back(task.id);
            if self.users[user].cpu.is_none() {
                self.start_local(user);
            }
        } else {
            let lane = &mut self.users[user].uplink[action - 1];
            lane.queue.push_back(task.id);
            if lane.active.is_none() {
                self.start_uplink(user, action - 1);
            }
        }
        Ok(())
    }

    fn start_local(&mut self, user: usize) {
        let Some(id) = self.users[user].local_queue.pop_front() else {
            return;
        };
        let now = self.clock;
        let f = self.cfg.nodes.user_cpu_hz;
        let rec = self.inflight.get_mut(&id).expect("queued task is in flight");
        rec.d_local = now - rec.stage_start;
        rec.t_exec = rec.task.cycles() / f;
        rec.stage_start = now;
        let done = now + rec.t_exec;
        self.users[user].cpu = Some((id, done));
        self.schedule(done, EventKind::LocalExecDone { user: user as u32 });
    }

    fn start_uplink(&mut self, user: usize, ch: usize) {
        let Some(id) = self.users[user].uplink[ch].queue.pop_front() else {
            return;
        };
        let now = self.clock;
        let bs = self.users[user].bs;
        let rec = self.inflight.get_mut(&id).expect("queued task is in flight");
        rec.d_up = now - rec.stage_start;
        rec.stage_start = now;
        let (bits, gain) = (rec.task.size, rec.gain);
        self.users[user].uplink[ch].active = Some(id);
        self.up_links[bs][ch].add(now, id, bits, gain);
        self.reschedule_link(bs, ch, true);
    }

    fn start_vm(&mut self, user: usize) {
        let Some(id) = self.users[user].vm_queue.pop_front() else {
            return;
        };
        let now = self.clock;
        let f = self.cfg.nodes.edge_vm_hz;
        let rec = self.inflight.get_mut(&id).expect("queued task is in flight");
        rec.d_vm = now - rec.stage_start;
        rec.t_exec = rec.task.cycles() / f;
        rec.stage_start = now;
        let done = now + rec.t_exec;
        self.users[user].vm = Some((id, done));
        self.schedule(done, EventKind::EdgeExecDone { user: user as u32 });
    }

    /// Returns the outcome immediately when the result has zero size.
    fn start_downlink(&mut self, user: usize, ch: usize) -> Option<TaskOutcome> {
        let id = self.users[user].downlink[ch].queue.pop_front()?;
        let now = self.clock;
        let bs = self.users[user].bs;
        let ratio = self.cfg.nodes.result_size_ratio;
        let rec = self.inflight.get_mut(&id).expect("queued task is in flight");
        rec.d_down = now - rec.stage_start;
        rec.stage_start = now;
        let bits = ratio * rec.task.size;
        let gain = rec.gain;
        if bits <= 0.0 {
            return Some(self.complete(id, 0.0));
        }
        self.users[user].downlink[ch].active = Some(id);
        self.down_links[bs][ch].add(now, id, bits, gain);
        self.reschedule_link(bs, ch, false);
        None
    }

    fn reschedule_link(&mut self, bs: usize, ch: usize, uplink: bool) {
        let link = if uplink {
            &self.up_links[bs][ch]
        } else {
            &self.down_links[bs][ch]
        };
        if let Some(rem) = link.min_remaining() {
            let time = link.last_update + rem;
            let version = link.version;
            let kind = if uplink {
                EventKind::UplinkDone {
                    bs,
                    channel: ch,
                    version,
                }
            } else {
                EventKind::DownlinkDone {
                    bs,
                    channel: ch,
                    version,
                }
            };
            self.schedule(time, kind);
        }
    }

    fn complete(&mut self, id: u64, t_down: f64) -> TaskOutcome {
        let rec = self.inflight.remove(&id).expect("completed task is in flight");
        self.completed += 1;
        let nodes = &self.cfg.nodes;
        if rec.action == 0 {
            let e_cpu = nodes.kappa * rec.task.cycles() * nodes.user_cpu_hz * nodes.user_cpu_hz;
            TaskOutcome::local(rec.task, rec.d_local, rec.t_exec, e_cpu)
        } else {
            let ch = &self.cfg.channels[rec.action - 1];
            TaskOutcome::offload(
                rec.task,
                rec.action,
                rec.d_up,
                rec.t_up,
                rec.d_vm,
                rec.t_exec,
                rec.d_down,
                t_down,
                rec.t_up * ch.tx_power_w,
                t_down * ch.rx_power_w,
            )
        }
    }

    /// Pops and processes the earliest event. Returns the tasks it completed.
    pub fn advance(&mut self) -> Result<Vec<TaskOutcome>> {
        let ev = self.calendar.pop().ok_or(Error::EndOfSimulation)?;
        if ev.time < self.clock {
            return Err(Error::Internal(format!(
                "event at {} precedes clock {}",
                ev.time, self.clock
            )));
        }
        self.clock = ev.time;
        let mut out = Vec::new();
        match ev.kind {
            EventKind::LocalExecDone { user } => {
                let user = user as usize;
                let (id, _) = self.users[user]
                    .cpu
                    .take()
                    .ok_or_else(|| Error::Internal("local completion on idle CPU".into()))?;
                out.push(self.complete(id, 0.0));
                self.start_local(user);
            }
            EventKind::EdgeExecDone { user } => {
                let user = user as usize;
                let (id, _) = self.users[user]
                    .vm
                    .take()
                    .ok_or_else(|| Error::Internal("edge completion on idle VM".into()))?;
                let now = self.clock;
                let rec = self.inflight.get_mut(&id).expect("served task is in flight");
                rec.stage_start = now;
                let ch = rec.action - 1;
                self.users[user].downlink[ch].queue.push_back(id);
                if self.users[user].downlink[ch].active.is_none() {
                    out.extend(self.start_downlink(user, ch));
                }
                self.start_vm(user);
            }
            EventKind::UplinkDone { bs, channel, version } => {
                if self.up_links[bs][channel].version != version {
                    return Ok(out);
                }
                let now = self.clock;
                let finished = self.up_links[bs][channel].finish(now);
                let mut touched = Vec::new();
                for (id, duration) in finished {
                    let rec = self.inflight.get_mut(&id).expect("transmitting task is in flight");
                    rec.t_up = duration;
                    rec.stage_start = now;
                    let user = rec.task.user_id as usize;
                    self.users[user].uplink[channel].active = None;
                    self.users[user].vm_queue.push_back(id);
                    if self.users[user].vm.is_none() {
                        self.start_vm(user);
                    }
                    touched.push(user);
                }
                for user in touched {
                    if self.users[user].uplink[channel].active.is_none() {
                        self.start_uplink(user, channel);
                    }
                }
                self.reschedule_link(bs, channel, true);
            }
            EventKind::DownlinkDone { bs, channel, version } => {
                if self.down_links[bs][channel].version != version {
                    return Ok(out);
                }
                let now = self.clock;
                let finished = self.down_links[bs][channel].finish(now);
                let mut touched = Vec::new();
                for (id, duration) in finished {
                    let user = self.inflight[&id].task.user_id as usize;
                    self.users[user].downlink[channel].active = None;
                    out.push(self.complete(id, duration));
                    touched.push(user);
                }
                for user in touched {
                    if self.users[user].downlink[channel].active.is_none() {
                        out.extend(self.start_downlink(user, channel));
                    }
                }
                self.reschedule_link(bs, channel, false);
            }
        }
        Ok(out)
    }

    /// Processes every event at or before `t`, then moves the clock to `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<Vec<TaskOutcome>> {
        if t < self.clock {
            return Err(Error::domain(format!("cannot rewind clock from {} to {t}", self.clock)));
        }
        let mut out = Vec::new();
        while self.next_event_time().is_some_and(|et| et <= t) {
            out.extend(self.advance()?);
        }
        self.clock = t;
        Ok(out)
    }

    /// Runs until the calendar is empty.
    pub fn drain(&mut self) -> Result<Vec<TaskOutcome>> {
        let mut out = Vec::new();
        while !self.calendar.is_empty() {
            out.extend(self.advance()?);
        }
        Ok(out)
    }

    /// Frozen copy of everything the projection of `pending` needs.
    pub fn snapshot(&self, pending: &PendingTask) -> Snapshot {
        let now = self.clock;
        let user = pending.task.user_id as usize;
        let u = &self.users[user];
        let f_user = self.cfg.nodes.user_cpu_hz;
        let f_vm = self.cfg.nodes.edge_vm_hz;
        let ratio = self.cfg.nodes.result_size_ratio;

        let queued_cycles = |q: &VecDeque<u64>| -> f64 { q.iter().map(|id| self.inflight[id].task.cycles()).sum() };
        let mut local_backlog = queued_cycles(&u.local_queue);
        if let Some((_, done)) = u.cpu {
            local_backlog += (done - now).max(0.0) * f_user;
        }
        let mut vm_backlog = queued_cycles(&u.vm_queue);
        if let Some((_, done)) = u.vm {
            vm_backlog += (done - now).max(0.0) * f_vm;
        }

        let flow_residual = |links: &Vec<Vec<Link>>, ch: usize, id: u64| -> f64 {
            let link = &links[u.bs][ch];
            let dt = now - link.last_update;
            link.flows
                .iter()
                .find(|f| f.task == id)
                .map(|f| (f.residual - f.rate * dt.max(0.0)).max(0.0))
                .unwrap_or(0.0)
        };
        let lane_items = |lane: &Lane, links: &Vec<Vec<Link>>, ch: usize, result: bool| {
            let mut items = Vec::new();
            let size_of = |t: &Task| if result { ratio * t.size } else { t.size };
            if let Some(id) = lane.active {
                let rec = &self.inflight[&id];
                items.push(BacklogItem {
                    id,
                    bits: flow_residual(links, ch, id),
                    gain: rec.gain,
                    cycles: rec.task.cycles(),
                    result_bits: ratio * rec.task.size,
                });
            }
            for id in &lane.queue {
                let rec = &self.inflight[id];
                items.push(BacklogItem {
                    id: *id,
                    bits: size_of(&rec.task),
                    gain: rec.gain,
                    cycles: rec.task.cycles(),
                    result_bits: ratio * rec.task.size,
                });
            }
            items
        };
        let uplink = u
            .uplink
            .iter()
            .enumerate()
            .map(|(ch, lane)| lane_items(lane, &self.up_links, ch, false))
            .collect();
        let downlink = u
            .downlink
            .iter()
            .enumerate()
            .map(|(ch, lane)| lane_items(lane, &self.down_links, ch, true))
            .collect();
        Snapshot {
            cfg: Arc::clone(&self.cfg),
            time: now,
            user: pending.task.user_id,
            local_backlog_cycles: local_backlog,
            vm_backlog_cycles: vm_backlog,
            uplink,
            downlink,
            uplink_active: self.up_links[u.bs].iter().map(|l| l.flows.len()).collect(),
            downlink_active: self.down_links[u.bs].iter().map(|l| l.flows.len()).collect(),
            gains: pending.gains.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Frozen-state projection
// ---------------------------------------------------------------------------

/// One task ahead of the pending task in a lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacklogItem {
    pub id: u64,
    /// Bits still to send (residual for the in-service head).
    pub bits: f64,
    pub gain: f64,
    pub cycles: f64,
    pub result_bits: f64,
}

/// Immutable view of the arriving user's queues and its base station's channels.
#[derive(Debug, Clone)]
pub struct Snapshot {
    cfg: Arc<SimConfig>,
    pub time: f64,
    pub user: u32,
    /// Residual plus queued CPU work on the user's device, cycles.
    pub local_backlog_cycles: f64,
    /// Residual plus queued work on the user's edge VM, cycles.
    pub vm_backlog_cycles: f64,
    /// Per channel, tasks in the user's uplink lane (head first).
    pub uplink: Vec<Vec<BacklogItem>>,
    /// Per channel, results in the user's downlink lane (head first).
    pub downlink: Vec<Vec<BacklogItem>>,
    /// Active transmitters per channel at the user's base station.
    pub uplink_active: Vec<usize>,
    pub downlink_active: Vec<usize>,
    /// Gains the pending task would see, per channel.
    pub gains: Vec<f64>,
}

impl Snapshot {
    pub fn n_actions(&self) -> usize {
        self.cfg.n_actions()
    }

    /// Projected outcome of `task` under `action`, holding channel occupancy
    /// fixed and assuming no further arrivals.
    pub fn project_outcome(&self, task: &Task, action: Action) -> Result<TaskOutcome> {
        let c = self.cfg.n_channels();
        if action > c {
            return Err(Error::domain(format!("action {action} out of range 0..={c}")));
        }
        let nodes = &self.cfg.nodes;
        if action == 0 {
            let d1 = self.local_backlog_cycles / nodes.user_cpu_hz;
            let t_exec = task.cycles() / nodes.user_cpu_hz;
            let e_cpu = nodes.kappa * task.cycles() * nodes.user_cpu_hz * nodes.user_cpu_hz;
            return Ok(TaskOutcome::local(*task, d1, t_exec, e_cpu));
        }
        let ch = action - 1;
        let now = self.time;
        let gain = self.gains[ch];

        // Uplink: every lane of this user drains at its frozen share; the
        // resulting completions feed the single edge VM in time order.
        let n_up = |lane: usize, joining: bool| {
            self.uplink_active[lane] + usize::from(joining && self.uplink[lane].is_empty())
        };
        struct ToVm {
            time: f64,
            order: u64,
            cycles: f64,
            channel: usize,
            result_bits: f64,
            gain: f64,
            ours: bool,
        }
        let mut to_vm = Vec::new();
        let mut d2 = 0.0;
        let mut t_up = 0.0;
        for (lane, items) in self.uplink.iter().enumerate() {
            let joining = lane == ch;
            let n = n_up(lane, joining);
            let mut t = now;
            for it in items {
                t += it.bits / share(self.cfg.channels[lane].uplink_rate_bps, it.gain, n);
                to_vm.push(ToVm {
                    time: t,
                    order: it.id,
                    cycles: it.cycles,
                    channel: lane,
                    result_bits: it.result_bits,
                    gain: it.gain,
                    ours: false,
                });
            }
            if joining {
                d2 = t - now;
                t_up = task.size / share(self.cfg.channels[lane].uplink_rate_bps, gain, n);
                to_vm.push(ToVm {
                    time: now + d2 + t_up,
                    order: u64::MAX,
                    cycles: task.cycles(),
                    channel: lane,
                    result_bits: nodes.result_size_ratio * task.size,
                    gain,
                    ours: true,
                });
            }
        }
        to_vm.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.order.cmp(&b.order)));

        let mut vm_free = now + self.vm_backlog_cycles / nodes.edge_vm_hz;
        let mut d3 = 0.0;
        let mut t_exec = 0.0;
        let mut our_vm_done = now;
        // (done time, order, result bits, gain, ours) on the chosen channel
        let mut to_dl = Vec::new();
        for job in &to_vm {
            let start = vm_free.max(job.time);
            let exec = job.cycles / nodes.edge_vm_hz;
            let done = start + exec;
            vm_free = done;
            if job.channel == ch {
                to_dl.push((done, job.order, job.result_bits, job.gain, job.ours));
            }
            if job.ours {
                d3 = start - job.time;
                t_exec = exec;
                our_vm_done = done;
                break;
            }
        }

        let dl_rate = self.cfg.channels[ch].downlink_rate_bps;
        let n_dl = self.downlink_active[ch] + usize::from(self.downlink[ch].is_empty());
        let mut dl_free = now;
        for it in &self.downlink[ch] {
            dl_free += it.bits / share(dl_rate, it.gain, n_dl);
        }
        let mut d4 = 0.0;
        let mut t_down = 0.0;
        for (done, _, bits, g, ours) in to_dl {
            let start = dl_free.max(done);
            let dur = if bits > 0.0 {
                bits / share(dl_rate, g, n_dl)
            } else {
                0.0
            };
            dl_free = start + dur;
            if ours {
                d4 = start - our_vm_done;
                t_down = dur;
                break;
            }
        }

        let chan = &self.cfg.channels[ch];
        Ok(TaskOutcome::offload(
            *task,
            action,
            d2,
            t_up,
            d3,
            t_exec,
            d4,
            t_down,
            t_up * chan.tx_power_w,
            t_down * chan.rx_power_w,
        ))
    }

    /// Projections for every action `0..=C`.
    pub fn project_all(&self, task: &Task) -> Result<Vec<TaskOutcome>> {
        (0..self.n_actions()).map(|a| self.project_outcome(task, a)).collect()
    }
}
