//! Browser bindings for the offloading simulator.
//!
//! Every exported function returns a JSON string consumed by `www/index.html`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use mec_offload::baselines::{Oracle, ProjectionSet};
use mec_offload::config::{ExperimentConfig, Mode};
use mec_offload::experiment::{
    generate_dataset, moving_average, resolve_reward_params, run_evaluation, run_training, summarize, AgentPool,
    MetricsSeries, Policy,
};
use mec_offload::netsim::Simulator;
use mec_offload::workload::Task;
use mec_offload::Result;

const ACTION_LABELS: [&str; 4] = ["local", "700 MHz", "1500 MHz", "2600 MHz"];

fn to_js(result: Result<Value>) -> std::result::Result<String, JsValue> {
    result
        .map(|v| v.to_string())
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

fn float(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Outcome of one task under every action in an otherwise idle system.
pub fn project(size_bits: f64, intensity_cpb: f64, deadline_s: f64, seed: u64) -> Result<Value> {
    let cfg = ExperimentConfig::default();
    let mut sim = Simulator::new(cfg.sim_config(), seed)?;
    let task = Task {
        id: 0,
        user_id: 0,
        arrival_time: 0.0,
        size: size_bits,
        intensity: intensity_cpb,
        deadline: deadline_s,
    };
    let pending = sim.arrive(task)?;
    let outcomes = sim.snapshot(&pending).project_all(&task)?;
    let rows: Vec<Value> = outcomes
        .iter()
        .map(|o| {
            json!({
                "action": o.action,
                "label": ACTION_LABELS[o.action],
                "response_s": o.response,
                "energy_j": o.e_total,
                "efficiency": float(o.efficiency()),
                "met_deadline": o.met_deadline,
            })
        })
        .collect();
    let ps = ProjectionSet::new(outcomes)?;
    let choices: serde_json::Map<String, Value> = [Oracle::Eel, Oracle::Ee, Oracle::R]
        .into_iter()
        .map(|o| (o.name().to_string(), json!(o.choose(&ps))))
        .collect();
    Ok(json!({ "actions": rows, "choices": choices }))
}

/// Live-mode test metrics of the oracle baselines and two fixed controls.
pub fn compare(arrival_rate_per_s: f64, mean_intensity_cpb: f64, episodes: u32, seed: u64) -> Result<Value> {
    let mut cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    cfg.run.mode = Mode::Live;
    cfg.run.n_test_episodes = u64::from(episodes.max(1));
    cfg.workload.arrival_rate_per_s = arrival_rate_per_s;
    cfg.workload.intensity_cpb = cfg.workload.intensity_cpb.scaled_to_mean(mean_intensity_cpb);
    cfg.validate()?;
    let reward = resolve_reward_params(&cfg, None)?;
    let runs = [
        ("EEL*", Policy::Oracle(Oracle::Eel)),
        ("EE*", Policy::Oracle(Oracle::Ee)),
        ("R*", Policy::Oracle(Oracle::R)),
        ("random", Policy::random(seed)),
        ("local", Policy::Fixed(0)),
    ];
    let mut series: Vec<(String, MetricsSeries)> = Vec::new();
    for (label, mut policy) in runs {
        series.push((label.to_string(), run_evaluation(&cfg, &mut policy, &reward, None)?));
    }
    let refs: Vec<(String, &MetricsSeries)> = series.iter().map(|(l, s)| (l.clone(), s)).collect();
    Ok(json!(summarize(&refs)?.agents))
}

/// Trains E2DA on a freshly generated dataset and reports its learning curve.
pub fn train_curve(episodes: u32, seed: u64) -> Result<Value> {
    let mut cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    cfg.agent.hidden_layers = vec![32, 32];
    cfg.run.n_train_episodes = u64::from(episodes.clamp(20, 1000));
    cfg.run.n_test_episodes = 20;
    let ds = generate_dataset(&cfg, seed, 2000)?;
    let reward = resolve_reward_params(&cfg, Some(&ds))?;
    let mut pool = AgentPool::new(&cfg, reward, seed)?;
    let training = run_training(&cfg, &mut pool, Some(&ds))?;
    let test = run_evaluation(
        &cfg,
        &mut Policy::E2da {
            pool: &mut pool,
            learn: false,
        },
        &reward,
        Some(&ds),
    )?;
    let eel = run_evaluation(&cfg, &mut Policy::Oracle(Oracle::Eel), &reward, Some(&ds))?;
    let summary = summarize(&[("E2DA".to_string(), &test), ("EEL*".to_string(), &eel)])?;
    let window = 20;
    Ok(json!({
        "reward": moving_average(&training.rewards(), window)?,
        "deadline_fraction": moving_average(&training.deadline_fracs(), window)?,
        "window": window,
        "e2da_test_reward": summary.agents[0].mean_episode_reward,
        "eel_test_reward": summary.agents[1].mean_episode_reward,
    }))
}

#[wasm_bindgen]
pub fn project_task(
    size_bits: f64,
    intensity_cpb: f64,
    deadline_s: f64,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(project(size_bits, intensity_cpb, deadline_s, u64::from(seed)))
}

#[wasm_bindgen]
pub fn compare_policies(
    arrival_rate_per_s: f64,
    mean_intensity_cpb: f64,
    episodes: u32,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(compare(
        arrival_rate_per_s,
        mean_intensity_cpb,
        episodes,
        u64::from(seed),
    ))
}

#[wasm_bindgen]
pub fn training_curve(episodes: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(train_curve(episodes, u64::from(seed)))
}
