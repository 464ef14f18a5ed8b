//! Task arrival streams and bandit contexts.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, SimRng, Stream};

/// One computing job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub user_id: u32,
    /// Seconds since simulation start.
    pub arrival_time: f64,
    /// Bits.
    pub size: f64,
    /// CPU cycles per bit.
    pub intensity: f64,
    /// Seconds, relative to arrival.
    pub deadline: f64,
}

impl Task {
    /// Total CPU work in cycles.
    pub fn cycles(&self) -> f64 {
        self.size * self.intensity
    }
}

/// Distribution of a scalar task feature, in the unit of the target field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Uniform { min: f64, max: f64 },
    Constant { value: f64 },
    Exponential { mean: f64 },
}

impl DistributionSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(field, msg));
        match *self {
            DistributionSpec::Uniform { min, max } => {
                if !(min.is_finite() && max.is_finite()) {
                    return bad("uniform bounds must be finite");
                }
                if min > max {
                    return bad("uniform requires min <= max");
                }
            }
            DistributionSpec::Constant { value } => {
                if !value.is_finite() {
                    return bad("constant must be finite");
                }
            }
            DistributionSpec::Exponential { mean } => {
                if !(mean.is_finite() && mean > 0.0) {
                    return bad("exponential mean must be > 0");
                }
            }
        }
        Ok(())
    }

    /// Validates and additionally requires the support to be strictly positive.
    pub fn validate_positive(&self, field: &str) -> Result<()> {
        self.validate(field)?;
        let (lo, _) = self.support();
        if lo <= 0.0 && !matches!(self, DistributionSpec::Exponential { .. }) {
            return Err(Error::config(field, "values must be > 0"));
        }
        Ok(())
    }

    /// Draws one value. Every kind consumes exactly one uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        match *self {
            DistributionSpec::Uniform { min, max } => min + (max - min) * u,
            DistributionSpec::Constant { value } => value,
            DistributionSpec::Exponential { mean } => -(1.0 - u).ln() * mean,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Uniform { min, max } => 0.5 * (min + max),
            DistributionSpec::Constant { value } => value,
            DistributionSpec::Exponential { mean } => mean,
        }
    }

    /// (lower, upper) bound of the support; the exponential's upper bound is infinite.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            DistributionSpec::Uniform { min, max } => (min, max),
            DistributionSpec::Constant { value } => (value, value),
            DistributionSpec::Exponential { .. } => (0.0, f64::INFINITY),
        }
    }

    /// The same shape rescaled so that its mean equals `mean`.
    pub fn scaled_to_mean(&self, mean: f64) -> DistributionSpec {
        let current = self.mean();
        let k = if current == 0.0 { 0.0 } else { mean / current };
        match *self {
            DistributionSpec::Uniform { min, max } if current != 0.0 => DistributionSpec::Uniform {
                min: min * k,
                max: max * k,
            },
            DistributionSpec::Uniform { .. } | DistributionSpec::Constant { .. } => {
                DistributionSpec::Constant { value: mean }
            }
            DistributionSpec::Exponential { .. } => DistributionSpec::Exponential { mean },
        }
    }
}

/// Normalization range for one context feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn new(min: f64, max: f64) -> Self {
        Bounds { min, max }
    }
}

/// Per-feature normalization bounds for (size, intensity, deadline).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextBounds {
    pub size_bits: Bounds,
    pub intensity_cpb: Bounds,
    pub deadline_s: Bounds,
}

impl ContextBounds {
    fn as_array(&self) -> [Bounds; 3] {
        [self.size_bits, self.intensity_cpb, self.deadline_s]
    }

    pub fn validate(&self) -> Result<()> {
        let names = [
            "workload.context_bounds.size_bits",
            "workload.context_bounds.intensity_cpb",
            "workload.context_bounds.deadline_s",
        ];
        for (b, name) in self.as_array().iter().zip(names) {
            if !(b.min.is_finite() && b.max.is_finite()) || b.min >= b.max {
                return Err(Error::config(name, "context bounds require min < max"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Poisson arrival rate per user.
    pub arrival_rate_per_s: f64,
    pub size_bits: DistributionSpec,
    pub intensity_cpb: DistributionSpec,
    pub deadline_s: DistributionSpec,
    pub context_bounds: ContextBounds,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            arrival_rate_per_s: 40.0,
            size_bits: DistributionSpec::Uniform {
                min: 10.0,
                max: 75_000.0,
            },
            intensity_cpb: DistributionSpec::Uniform { min: 10.0, max: 1000.0 },
            deadline_s: DistributionSpec::Uniform { min: 0.010, max: 0.018 },
            context_bounds: ContextBounds {
                size_bits: Bounds::new(10.0, 75_000.0),
                intensity_cpb: Bounds::new(10.0, 1000.0),
                deadline_s: Bounds::new(0.010, 0.018),
            },
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate_per_s.is_finite() && self.arrival_rate_per_s > 0.0) {
            return Err(Error::config("workload.arrival_rate_per_s", "must be > 0"));
        }
        self.size_bits.validate_positive("workload.size_bits")?;
        self.intensity_cpb.validate_positive("workload.intensity_cpb")?;
        self.deadline_s.validate_positive("workload.deadline_s")?;
        self.context_bounds.validate()
    }
}

/// Normalized (size, intensity, deadline) features, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Context(pub [f64; 3]);

/// Exponential gap with mean `1/rate` by inverse CDF of the uniform `u ∈ (0, 1]`.
pub fn interarrival_from_uniform(u: f64, rate: f64) -> f64 {
    -u.ln() / rate
}

/// Draws one Poisson-process gap. Consumes exactly one draw from `rng`.
pub fn sample_interarrival<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::config("arrival_rate_per_s", "must be > 0"));
    }
    // gen() is in [0, 1); flip it so ln never sees zero.
    let u = 1.0 - rng.gen::<f64>();
    Ok(interarrival_from_uniform(u, rate))
}

/// Draws the features of one task arriving at `arrival_time`.
pub fn sample_task<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &WorkloadConfig,
    id: u64,
    user_id: u32,
    arrival_time: f64,
) -> Task {
    let size = cfg.size_bits.sample(rng);
    let intensity = cfg.intensity_cpb.sample(rng);
    let deadline = cfg.deadline_s.sample(rng);
    Task {
        id,
        user_id,
        arrival_time,
        size,
        intensity,
        deadline,
    }
}

pub fn normalize_context(task: &Task, cfg: &WorkloadConfig) -> Result<Context> {
    let bounds = cfg.context_bounds.as_array();
    let raw = [task.size, task.intensity, task.deadline];
    let mut x = [0.0; 3];
    for i in 0..3 {
        let Bounds { min, max } = bounds[i];
        if min >= max {
            return Err(Error::config(
                "workload.context_bounds",
                "degenerate bounds (min >= max)",
            ));
        }
        x[i] = ((raw[i] - min) / (max - min)).clamp(0.0, 1.0);
    }
    Ok(Context(x))
}

/// Inverse of [`normalize_context`] for in-bounds features: (size, intensity, deadline).
pub fn denormalize_context(x: &Context, cfg: &WorkloadConfig) -> [f64; 3] {
    let bounds = cfg.context_bounds.as_array();
    let mut raw = [0.0; 3];
    for i in 0..3 {
        raw[i] = bounds[i].min + x.0[i] * (bounds[i].max - bounds[i].min);
    }
    raw
}

/// Arrival stream of one user, backed by its own RNG substream.
#[derive(Debug, Clone)]
pub struct UserStream {
    user_id: u32,
    rng: SimRng,
    next_arrival: f64,
}

impl UserStream {
    pub fn new(seed: u64, user_id: u32, cfg: &WorkloadConfig) -> Result<Self> {
        let mut rng = substream(seed, Stream::Workload(user_id));
        let first = sample_interarrival(&mut rng, cfg.arrival_rate_per_s)?;
        Ok(UserStream {
            user_id,
            rng,
            next_arrival: first,
        })
    }

    pub fn peek_time(&self) -> f64 {
        self.next_arrival
    }

    /// Emits the pending task and schedules the following arrival.
    pub fn pop(&mut self, cfg: &WorkloadConfig, id: u64) -> Result<Task> {
        let task = sample_task(&mut self.rng, cfg, id, self.user_id, self.next_arrival);
        self.next_arrival += sample_interarrival(&mut self.rng, cfg.arrival_rate_per_s)?;
        Ok(task)
    }
}

#[derive(Debug, Clone)]
struct Pending {
    time: f64,
    user: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed: BinaryHeap is a max-heap and we want the earliest arrival.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.user.cmp(&self.user))
    }
}

/// Merges the per-user streams of K users into one time-ordered task source.
///
/// Ids are assigned globally in arrival order (ties broken by user id), so they
/// are unique and increase with arrival time inside every user's stream.
#[derive(Debug, Clone)]
pub struct TaskSource {
    cfg: WorkloadConfig,
    streams: Vec<UserStream>,
    heap: BinaryHeap<Pending>,
    next_id: u64,
}

impl TaskSource {
    pub fn new(seed: u64, n_users: u32, cfg: WorkloadConfig) -> Result<Self> {
        cfg.validate()?;
        let mut streams = Vec::with_capacity(n_users as usize);
        let mut heap = BinaryHeap::new();
        for user in 0..n_users {
            let s = UserStream::new(seed, user, &cfg)?;
            heap.push(Pending {
                time: s.peek_time(),
                user,
            });
            streams.push(s);
        }
        Ok(TaskSource {
            cfg,
            streams,
            heap,
            next_id: 0,
        })
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.cfg
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|p| p.time)
    }

    pub fn next_task(&mut self) -> Result<Task> {
        let head = self
            .heap
            .pop()
            .ok_or_else(|| Error::Internal("task source has no users".into()))?;
        let stream = &mut self.streams[head.user as usize];
        let task = stream.pop(&self.cfg, self.next_id)?;
        self.next_id += 1;
        self.heap.push(Pending {
            time: stream.peek_time(),
            user: head.user,
        });
        Ok(task)
    }
}
