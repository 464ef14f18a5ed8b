//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness, reports every criterion, and exits
//! non-zero if any of them fails.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mec_offload::bandit::{Experience, Mlp, RewardParams};
use mec_offload::baselines::{ee_star, r_star, Oracle};
use mec_offload::config::ExperimentConfig;
use mec_offload::experiment::{
    generate_dataset, moving_average, resolve_reward_params, run_evaluation, run_training, summarize, AgentPool,
    Dataset, MetricsSeries, Policy,
};
use mec_offload::netsim::{ChannelConfig, NodeConfig, SimConfig, Simulator, TaskOutcome};
use mec_offload::rng::{substream, Stream};
use mec_offload::workload::{Context, DistributionSpec, Task, TaskSource};
use rand::Rng;

const BIN: &str = env!("CARGO_BIN_EXE_e2da");

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("e2da-acceptance-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("creating scratch directory");
    dir
}

// ---------------------------------------------------------------------------
// 1. Decomposition exactness
// ---------------------------------------------------------------------------

fn mixed_simulation(cfg: &ExperimentConfig, seed: u64, n_tasks: usize) -> Vec<TaskOutcome> {
    let sim_cfg = cfg.sim_config();
    let n_actions = sim_cfg.n_actions();
    let mut sim = Simulator::new(sim_cfg, seed).unwrap();
    let mut source = TaskSource::new(seed, cfg.n_users, cfg.workload.clone()).unwrap();
    let mut actions = substream(seed, Stream::RandomPolicy);
    let mut log = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        let task = source.next_task().unwrap();
        while sim.next_event_time().is_some_and(|t| t <= task.arrival_time) {
            log.extend(sim.advance().unwrap());
        }
        log.extend(sim.advance_to(task.arrival_time).unwrap());
        let pending = sim.arrive(task).unwrap();
        sim.submit(pending, actions.gen_range(0..n_actions)).unwrap();
    }
    log.extend(sim.drain().unwrap());
    log
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let n = 100_000;
    let log = mixed_simulation(&ExperimentConfig::default(), 17, n);
    let elapsed = start.elapsed();
    let worst_t = log.iter().map(TaskOutcome::decomposition_error).fold(0.0, f64::max);
    let worst_e = log.iter().map(TaskOutcome::energy_error).fold(0.0, f64::max);
    let local_clean = log
        .iter()
        .filter(|o| o.action == 0)
        .all(|o| o.e_tx == 0.0 && o.e_rx == 0.0);
    let n_local = log.iter().filter(|o| o.action == 0).count();
    let pass = log.len() == n
        && worst_t <= 1e-9
        && worst_e <= 1e-9
        && local_clean
        && n_local > 0
        && n_local < n
        && elapsed < Duration::from_secs(30);
    Verdict::new(
        pass,
        format!(
            "{} outcomes ({n_local} local), max T error {worst_t:.1e}, max E error {worst_e:.1e}, local e_tx=e_rx=0: {local_clean}, {:.1} s",
            log.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Closed-form parity at zero load
// ---------------------------------------------------------------------------

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
}

fn criterion_2() -> Verdict {
    let (size, intensity, f_user, f_vm, kappa, ratio) = (1e6, 1000.0, 1e9, 4e9, 1e-27, 0.1);
    let (rate, p_tx, p_rx) = (10e6, 0.8, 0.4);
    let cfg = SimConfig {
        nodes: NodeConfig {
            n_users: 1,
            n_base_stations: 1,
            user_cpu_hz: f_user,
            edge_vm_hz: f_vm,
            kappa,
            result_size_ratio: ratio,
        },
        channels: vec![ChannelConfig {
            carrier_mhz: None,
            uplink_rate_bps: rate,
            downlink_rate_bps: rate,
            tx_power_w: p_tx,
            rx_power_w: p_rx,
            gain: DistributionSpec::Constant { value: 1.0 },
        }],
    };
    let task = Task {
        id: 0,
        user_id: 0,
        arrival_time: 0.0,
        size,
        intensity,
        deadline: 2.0,
    };
    let realize = |action| {
        let mut sim = Simulator::new(cfg.clone(), 3).unwrap();
        let pending = sim.arrive(task).unwrap();
        sim.submit(pending, action).unwrap();
        sim.drain().unwrap().remove(0)
    };

    let local = realize(0);
    let t_local = size * intensity / f_user;
    let e_local = kappa * size * intensity * f_user * f_user;
    let local_ok = local.t_exec == 1.0 && close(local.response, t_local) && close(local.e_total, e_local);

    let off = realize(1);
    let t_up = size / rate;
    let t_exec = size * intensity / f_vm;
    let t_down = ratio * size / rate;
    let t_off = t_up + t_exec + t_down;
    let e_off = p_tx * t_up + p_rx * t_down;
    let waits = off.d2 + off.d3 + off.d4;
    let off_ok = close(off.t_up, t_up)
        && close(off.t_exec, t_exec)
        && close(off.t_down, t_down)
        && close(off.response, t_off)
        && close(off.e_total, e_off)
        && waits == 0.0;

    Verdict::new(
        local_ok && off_ok,
        format!(
            "local T={} s (expected {t_local}), E={} J (expected {e_local}); offload T={} s (expected {t_off}), E={} J (expected {e_off})",
            local.response, local.e_total, off.response, off.e_total
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Gradient oracle
// ---------------------------------------------------------------------------

const NET: [usize; 4] = [3, 8, 8, 4];

fn min_hidden_preactivation(params: &[f64], x: &[f64]) -> f64 {
    let mut input = x.to_vec();
    let mut off = 0;
    let mut min_abs = f64::INFINITY;
    for l in 0..NET.len() - 2 {
        let (n_in, n_out) = (NET[l], NET[l + 1]);
        let mut next = vec![0.0; n_out];
        for (j, slot) in next.iter_mut().enumerate() {
            let mut z = params[off + n_in * n_out + j];
            for (i, xi) in input.iter().enumerate() {
                z += params[off + j * n_in + i] * xi;
            }
            min_abs = min_abs.min(z.abs());
            *slot = z.max(0.0);
        }
        off += n_in * n_out + n_out;
        input = next;
    }
    min_abs
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut rng = substream(2024, Stream::AgentInit(0));
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut net = Mlp::glorot(&NET, 1.0, &mut rng).unwrap();
        for p in net.params_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        let mut batch = Vec::new();
        while batch.len() < 6 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            if min_hidden_preactivation(net.params(), &x) < 1e-3 {
                continue;
            }
            batch.push(Experience {
                context: Context(x),
                action: rng.gen_range(0..NET[3]),
                target: rng.gen(),
            });
        }
        let (_, grad) = net.loss_and_gradient(&batch);
        for (i, g) in grad.iter().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let numeric = (plus.loss(&batch) - minus.loss(&batch)) / (2.0 * h);
            worst = worst.max((g - numeric).abs() / (g.abs() + numeric.abs()).max(1e-6));
        }
    }
    let elapsed = start.elapsed();
    Verdict::new(
        worst < 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "max relative error {worst:.2e} over 100 nets, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Oracle per-task optimality
// ---------------------------------------------------------------------------

fn criterion_4() -> Verdict {
    let cfg = ExperimentConfig::default();
    let ds = generate_dataset(&cfg, 4, 5000).unwrap();
    let mut r_bad = 0;
    let mut ee_bad = 0;
    for rec in &ds.records {
        let ps = rec.projection_set();
        let min_t = rec.outcomes.iter().map(|o| o.response).fold(f64::INFINITY, f64::min);
        let max_se = rec
            .outcomes
            .iter()
            .map(TaskOutcome::bits_per_joule)
            .fold(f64::NEG_INFINITY, f64::max);
        if rec.outcomes[r_star(&ps)].response != min_t {
            r_bad += 1;
        }
        if rec.outcomes[ee_star(&ps)].bits_per_joule() != max_se {
            ee_bad += 1;
        }
    }
    Verdict::new(
        ds.len() == 5000 && r_bad == 0 && ee_bad == 0,
        format!("{} records, r_star misses {r_bad}, ee_star misses {ee_bad}", ds.len()),
    )
}

// ---------------------------------------------------------------------------
// 5 and 6. Learning convergence and deadline trend
// ---------------------------------------------------------------------------

struct SeedRun {
    e2da: f64,
    eel: f64,
    ee: f64,
    r: f64,
    training: MetricsSeries,
}

fn mean_test_reward(m: &MetricsSeries) -> f64 {
    summarize(&[(String::new(), m)]).unwrap().agents[0].mean_episode_reward
}

fn learning_run(seed: u64) -> (SeedRun, Dataset, RewardParams) {
    let cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    let ds = generate_dataset(&cfg, seed, 5000).unwrap();
    let reward = resolve_reward_params(&cfg, Some(&ds)).unwrap();
    let mut pool = AgentPool::new(&cfg, reward, seed).unwrap();
    let training = run_training(&cfg, &mut pool, Some(&ds)).unwrap();
    let e2da = run_evaluation(
        &cfg,
        &mut Policy::E2da {
            pool: &mut pool,
            learn: false,
        },
        &reward,
        Some(&ds),
    )
    .unwrap();
    let oracle = |o| mean_test_reward(&run_evaluation(&cfg, &mut Policy::Oracle(o), &reward, Some(&ds)).unwrap());
    let run = SeedRun {
        e2da: mean_test_reward(&e2da),
        eel: oracle(Oracle::Eel),
        ee: oracle(Oracle::Ee),
        r: oracle(Oracle::R),
        training,
    };
    (run, ds, reward)
}

fn criterion_5(runs: &[SeedRun], elapsed: Duration) -> Verdict {
    let n = runs.len() as f64;
    let avg = |f: fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let (e2da, eel, ee, r) = (avg(|s| s.e2da), avg(|s| s.eel), avg(|s| s.ee), avg(|s| s.r));
    let per_seed: Vec<String> = runs.iter().map(|s| format!("{:.2}", s.e2da)).collect();
    Verdict::new(
        e2da >= 0.9 * eel && e2da > ee && e2da > r && elapsed < Duration::from_secs(600),
        format!(
            "mean test reward E2DA {e2da:.2} (seeds {}) vs 0.9*EEL* {:.2}, EE* {ee:.2}, R* {r:.2}; {:.0} s",
            per_seed.join(", "),
            0.9 * eel,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6(runs: &[SeedRun]) -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, run) in runs.iter().enumerate() {
        let smooth = moving_average(&run.training.deadline_fracs(), 20).unwrap();
        let head = smooth[..100].iter().sum::<f64>() / 100.0;
        let tail = smooth[smooth.len() - 100..].iter().sum::<f64>() / 100.0;
        pass &= tail >= head;
        lines.push(format!("seed {}: first 100 {head:.3} -> last 100 {tail:.3}", i + 1));
    }
    Verdict::new(pass, lines.join("; "))
}

// ---------------------------------------------------------------------------
// 7 and 8. Directional sweep effects through the CLI
// ---------------------------------------------------------------------------

fn run_sweep(name: &str, config: &str, vary: &str, values: &str) -> Result<(f64, f64), String> {
    let dir = scratch_dir(name);
    let config_path = dir.join("config.json");
    fs::write(&config_path, config).map_err(|e| e.to_string())?;
    let out = dir.join("out");
    let status = Command::new(BIN)
        .args(["sweep", "--vary", vary, "--values", values, "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("sweep exited with {}", status.status));
    }
    let text = fs::read_to_string(out.join("summary.json")).map_err(|e| e.to_string())?;
    let summary: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let ratio = &summary["ratios"][0];
    let _ = fs::remove_dir_all(&dir);
    match (ratio["energy_ratio"].as_f64(), ratio["response_ratio"].as_f64()) {
        (Some(e), Some(t)) => Ok((e, t)),
        _ => Err("summary.json lacks ratios".into()),
    }
}

fn criterion_7() -> Verdict {
    let config = r#"{
        "n_users": 10,
        "n_base_stations": 3,
        "workload": {
            "arrival_rate_per_s": 20.0,
            "size_bits": { "kind": "uniform", "min": 10.0, "max": 9990.0 }
        }
    }"#;
    match run_sweep("intensity", config, "intensity", "50000,200000") {
        Ok((e, t)) => Verdict::new(
            e <= 1.5 && t >= 2.0,
            format!("intensity 50K -> 200K: energy ratio {e:.3} (<= 1.5), response ratio {t:.3} (>= 2.0)"),
        ),
        Err(msg) => Verdict::new(false, msg),
    }
}

fn criterion_8() -> Verdict {
    let config = r#"{
        "workload": {
            "arrival_rate_per_s": 60.0,
            "intensity_cpb": { "kind": "uniform", "min": 10.0, "max": 9990.0 }
        }
    }"#;
    match run_sweep("size", config, "size", "37505,75010") {
        Ok((e, t)) => Verdict::new(
            e >= 2.0 && t >= 2.0,
            format!("size 37505 -> 75010 bits: energy ratio {e:.3} (>= 2.0), response ratio {t:.3} (>= 2.0)"),
        ),
        Err(msg) => Verdict::new(false, msg),
    }
}

// ---------------------------------------------------------------------------
// 9. Determinism of the CLI artifacts
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str], paths: &[(&str, &Path)]) -> Result<(), String> {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (flag, path) in paths {
        cmd.arg(flag).arg(path);
    }
    let output = cmd.output().map_err(|e| e.to_string())?;
    if output.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{} exited with {}: {}",
            args.join(" "),
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        ))
    }
}

/// Names of files in `a` whose bytes differ from (or are missing in) `b`.
fn differing_files(a: &Path, b: &Path) -> Result<Vec<String>, String> {
    let mut names: Vec<String> = fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    names.sort();
    let count_b = fs::read_dir(b).map_err(|e| e.to_string())?.count();
    let mut differing: Vec<String> = names
        .iter()
        .filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok())
        .cloned()
        .collect();
    if count_b != names.len() {
        differing.push("<file set>".into());
    }
    Ok(differing)
}

fn criterion_9() -> Verdict {
    let dir = scratch_dir("determinism");
    let config = dir.join("config.json");
    let body =
        r#"{ "agent": { "hidden_layers": [16, 16] }, "run": { "n_train_episodes": 20, "n_test_episodes": 10 } }"#;
    if let Err(e) = fs::write(&config, body) {
        return Verdict::new(false, e.to_string());
    }
    let outcome = (|| -> Result<String, String> {
        let d = |name: &str| dir.join(name);
        let mut checked = Vec::new();
        for run in ["g1", "g2"] {
            run_cli(
                &["generate-dataset", "--seed", "5", "--tasks", "3000"],
                &[("--config", &config), ("--out", &d(run))],
            )?;
        }
        let dataset = d("g1").join("dataset.csv");
        for run in ["t1", "t2"] {
            run_cli(
                &["train", "--seed", "5", "--agent", "e2da", "--mode", "dataset"],
                &[("--config", &config), ("--dataset", &dataset), ("--out", &d(run))],
            )?;
        }
        let model = d("t1").join("model.json");
        for run in ["e1", "e2"] {
            run_cli(
                &["evaluate", "--seed", "5", "--agent", "e2da", "--mode", "dataset"],
                &[
                    ("--config", &config),
                    ("--dataset", &dataset),
                    ("--model", &model),
                    ("--out", &d(run)),
                ],
            )?;
        }
        let mut differing = Vec::new();
        for (a, b) in [("g1", "g2"), ("t1", "t2"), ("e1", "e2")] {
            for name in differing_files(&d(a), &d(b))? {
                differing.push(format!("{a}/{name}"));
            }
            checked.push(fs::read_dir(d(a)).map_err(|e| e.to_string())?.count());
        }
        if differing.is_empty() {
            Ok(format!(
                "generate-dataset, train, evaluate: {} files compared, all bit-identical",
                checked.iter().sum::<usize>()
            ))
        } else {
            Err(format!("differing files: {}", differing.join(", ")))
        }
    })();
    let _ = fs::remove_dir_all(&dir);
    match outcome {
        Ok(msg) => Verdict::new(true, msg),
        Err(msg) => Verdict::new(false, msg),
    }
}

// ---------------------------------------------------------------------------
// 10. No-learning control
// ---------------------------------------------------------------------------

/// Least-squares slope of `y` against its index and the slope's standard error.
fn ols_slope(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let sxx: f64 = (0..y.len()).map(|i| (i as f64 - x_mean).powi(2)).sum();
    let sxy: f64 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (i as f64 - x_mean) * (v - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ssr: f64 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (v - intercept - slope * i as f64).powi(2))
        .sum();
    (slope, (ssr / (n - 2.0) / sxx).sqrt())
}

fn criterion_10(ds: &Dataset, reward: RewardParams) -> Verdict {
    let mut cfg = ExperimentConfig::default();
    cfg.agent.epsilon_start = 1.0;
    cfg.agent.epsilon_decay = 1.0;
    cfg.agent.epsilon_min = 1.0;
    let mut pool = AgentPool::new(&cfg, reward, cfg.seed).unwrap();
    let series = run_training(&cfg, &mut pool, Some(ds)).unwrap();
    let rewards = series.rewards();
    let (slope, se) = ols_slope(&rewards);
    Verdict::new(
        rewards.len() == 1000 && slope.abs() < 2.0 * se,
        format!(
            "{} episodes, slope {slope:.3e} per episode, 2 SE = {:.3e}",
            rewards.len(),
            2.0 * se
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let mut stdout = std::io::stdout();
    let mut failures = 0;
    let mut report = |id: u32, name: &str, v: Verdict| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failures += 1;
        }
        writeln!(stdout, "{tag} criterion {id:>2} {name}: {}", v.detail).unwrap();
        stdout.flush().unwrap();
    };

    report(1, "decomposition exactness", criterion_1());
    report(2, "closed-form parity at zero load", criterion_2());
    report(3, "gradient oracle", criterion_3());
    report(4, "oracle per-task optimality", criterion_4());

    let start = Instant::now();
    let mut runs = Vec::new();
    let mut seed_one = None;
    for seed in 1..=3 {
        let (run, ds, reward) = learning_run(seed);
        if seed == 1 {
            seed_one = Some((ds, reward));
        }
        runs.push(run);
    }
    report(5, "learning convergence", criterion_5(&runs, start.elapsed()));
    report(6, "deadline trend", criterion_6(&runs));

    report(7, "directional intensity effect", criterion_7());
    report(8, "directional size effect", criterion_8());
    report(9, "determinism", criterion_9());

    let (ds, reward) = seed_one.expect("seed 1 ran");
    report(10, "no-learning control", criterion_10(&ds, reward));

    if failures > 0 {
        writeln!(stdout, "{failures} criteria failed").unwrap();
        std::process::exit(1);
    }
}
