//! Multi-user, multi-channel mobile edge computing simulator and the E2DA
//! energy-efficient deadline-aware offloading agent.
//!
//! The crate is organised bottom-up:
//!
//! - [`workload`]: task arrival streams, feature distributions, context normalization.
//! - [`netsim`]: the discrete-event simulator (local CPUs, shared uplink/downlink
//!   channels, edge VMs) with timing and energy accounting, plus frozen-state
//!   outcome projection.
//! - [`bandit`]: the MLP reward model, replay buffer and epsilon-greedy agent.
//! - [`baselines`]: the EEL*, EE* and R* oracle policies.
//! - [`experiment`]: dataset generation, training/evaluation loops and metrics.
//! - [`config`]: the JSON experiment configuration and its validation.

pub mod bandit;
pub mod baselines;
pub mod config;
pub mod error;
pub mod experiment;
pub mod netsim;
pub mod rng;
pub mod workload;

pub use error::{Error, Result};
