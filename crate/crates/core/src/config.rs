//! Declarative experiment configuration (JSON, SI units in field names).
//!
//! Every section has defaults, so `{}` is a valid config describing the
//! 5-user, 3-base-station, 3-channel setup.

use serde::{Deserialize, Serialize};

use crate::bandit::{AgentConfig, RewardParams};
use crate::baselines::Oracle;
use crate::error::{Error, Result};
use crate::netsim::{default_channels, ChannelConfig, NodeConfig, SimConfig};
use crate::workload::WorkloadConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub user_cpu_hz: f64,
    pub edge_vm_hz: f64,
    /// Effective switched capacitance, J·s²/cycle³.
    pub kappa: f64,
    pub result_size_ratio: f64,
    /// Defaults to the first `n_channels` of the 700/1500/2600 MHz carriers.
    pub channels: Option<Vec<ChannelConfig>>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NodeConfig::default();
        NetworkSection {
            user_cpu_hz: n.user_cpu_hz,
            edge_vm_hz: n.edge_vm_hz,
            kappa: n.kappa,
            result_size_ratio: n.result_size_ratio,
            channels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub penalty: f64,
    /// Fixed efficiency scale in (bits/s)/J; calibrated from data when absent.
    pub efficiency_scale: Option<f64>,
    /// Quantile of observed efficiencies used as the scale.
    pub calibration_quantile: f64,
    /// Tasks simulated for calibration when no dataset is available.
    pub calibration_tasks: usize,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection {
            penalty: 1.0,
            efficiency_scale: None,
            calibration_quantile: 0.75,
            calibration_tasks: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Replay records (with every action's outcome) from a dataset.
    Dataset,
    /// Drive the simulator directly; rewards arrive when tasks complete.
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoggingPolicy {
    Uniform,
    Local,
    Eel,
    Ee,
    R,
}

impl LoggingPolicy {
    pub fn oracle(self) -> Option<Oracle> {
        match self {
            LoggingPolicy::Eel => Some(Oracle::Eel),
            LoggingPolicy::Ee => Some(Oracle::Ee),
            LoggingPolicy::R => Some(Oracle::R),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentSharing {
    /// One network per user.
    PerUser,
    /// One network shared by all users.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    pub n_train_episodes: u64,
    pub n_test_episodes: u64,
    pub tasks_per_episode: usize,
    pub dataset_tasks: usize,
    pub logging_policy: LoggingPolicy,
    pub agent_sharing: AgentSharing,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            mode: Mode::Dataset,
            n_train_episodes: 1000,
            n_test_episodes: 100,
            tasks_per_episode: 100,
            dataset_tasks: 32_565,
            logging_policy: LoggingPolicy::Uniform,
            agent_sharing: AgentSharing::PerUser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_users: u32,
    pub n_base_stations: u32,
    pub n_channels: u32,
    pub workload: WorkloadConfig,
    pub network: NetworkSection,
    pub agent: AgentConfig,
    pub reward: RewardSection,
    pub run: RunSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            n_users: 5,
            n_base_stations: 3,
            n_channels: 3,
            workload: WorkloadConfig::default(),
            network: NetworkSection::default(),
            agent: AgentConfig::default(),
            reward: RewardSection::default(),
            run: RunSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let cfg = cfg.resolved()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Materializes the default channel list.
    pub fn resolved(mut self) -> Result<Self> {
        if self.network.channels.is_none() {
            let defaults = default_channels();
            let c = self.n_channels as usize;
            if c > defaults.len() {
                return Err(Error::config(
                    "network.channels",
                    format!("n_channels = {c} needs an explicit channel list (3 defaults exist)"),
                ));
            }
            self.network.channels = Some(defaults.into_iter().take(c).collect());
        }
        Ok(self)
    }

    pub fn channels(&self) -> Vec<ChannelConfig> {
        self.network
            .channels
            .clone()
            .unwrap_or_else(|| default_channels().into_iter().take(self.n_channels as usize).collect())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            nodes: NodeConfig {
                n_users: self.n_users,
                n_base_stations: self.n_base_stations,
                user_cpu_hz: self.network.user_cpu_hz,
                edge_vm_hz: self.network.edge_vm_hz,
                kappa: self.network.kappa,
                result_size_ratio: self.network.result_size_ratio,
            },
            channels: self.channels(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_channels as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users < 1 {
            return Err(Error::config("n_users", "must be >= 1"));
        }
        if self.n_base_stations < 1 {
            return Err(Error::config("n_base_stations", "must be >= 1"));
        }
        if self.n_channels < 1 {
            return Err(Error::config("n_channels", "must be >= 1"));
        }
        let channels = self.channels();
        if channels.len() != self.n_channels as usize {
            return Err(Error::config(
                "network.channels",
                format!(
                    "{} channels listed but n_channels = {}",
                    channels.len(),
                    self.n_channels
                ),
            ));
        }
        self.workload.validate()?;
        self.sim_config().validate()?;
        self.agent.validate()?;
        let r = &self.reward;
        if !(r.penalty.is_finite() && r.penalty >= 0.0) {
            return Err(Error::config("reward.penalty", "must be >= 0"));
        }
        if let Some(s) = r.efficiency_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::config("reward.efficiency_scale", "must be > 0"));
            }
        }
        if !(r.calibration_quantile > 0.0 && r.calibration_quantile <= 1.0) {
            return Err(Error::config("reward.calibration_quantile", "must lie in (0, 1]"));
        }
        if r.calibration_tasks == 0 && r.efficiency_scale.is_none() {
            return Err(Error::config(
                "reward.calibration_tasks",
                "must be >= 1 without a fixed efficiency_scale",
            ));
        }
        let run = &self.run;
        if run.tasks_per_episode == 0 {
            return Err(Error::config("run.tasks_per_episode", "must be >= 1"));
        }
        if run.dataset_tasks == 0 {
            return Err(Error::config("run.dataset_tasks", "must be >= 1"));
        }
        Ok(())
    }

    /// Reward parameters once the efficiency scale is known.
    pub fn reward_params(&self, efficiency_scale: f64) -> RewardParams {
        RewardParams {
            penalty: self.reward.penalty,
            efficiency_scale,
        }
    }

    /// Number of distinct agents under the configured sharing mode.
    pub fn n_agents(&self) -> u32 {
        match self.run.agent_sharing {
            AgentSharing::PerUser => self.n_users,
            AgentSharing::Shared => 1,
        }
    }
}
