//! Dataset, replay, and evaluation properties checked against independent recomputation.

use mec_offload::bandit::{compute_reward, RewardParams};
use mec_offload::baselines::{ee_star, eel_star, r_star, Oracle};
use mec_offload::config::{ExperimentConfig, LoggingPolicy, Mode};
use mec_offload::experiment::*;
use mec_offload::netsim::TaskOutcome;
use mec_offload::rng::{episode_rng, Stream};
use rand::Rng;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.agent.hidden_layers = vec![16, 16];
    cfg.agent.batch_size = 16;
    cfg.run.n_train_episodes = 20;
    cfg.run.n_test_episodes = 10;
    cfg.run.tasks_per_episode = 50;
    cfg
}

fn reward() -> RewardParams {
    RewardParams {
        penalty: 1.0,
        efficiency_scale: 1e10,
    }
}

/// Record indices drawn by dataset-replay evaluation episode `e`.
fn eval_draws(seed: u64, episode: u64, n: usize, len: usize) -> Vec<usize> {
    let mut rng = episode_rng(seed, Stream::EvalEpisodes, episode);
    (0..n).map(|_| rng.gen_range(0..len)).collect()
}

#[test]
fn default_dataset_has_exact_record_count() {
    let cfg = ExperimentConfig::default();
    let ds = generate_dataset(&cfg, 1, cfg.run.dataset_tasks).unwrap();
    assert_eq!(ds.len(), 32_565);
    assert!(ds.records.iter().all(|r| r.outcomes.len() == 4));
    for r in &ds.records {
        for o in &r.outcomes {
            assert_eq!(o.met_deadline, o.response <= o.task.deadline);
        }
    }
}

#[test]
fn dataset_csv_round_trips_exactly_and_is_deterministic() {
    let cfg = small_config();
    let ds = generate_dataset(&cfg, 4, 500).unwrap();
    let text = ds.to_csv();
    assert_eq!(Dataset::from_csv(&text).unwrap(), ds);
    assert_eq!(generate_dataset(&cfg, 4, 500).unwrap().to_csv(), text);
    assert_ne!(generate_dataset(&cfg, 5, 500).unwrap().to_csv(), text);
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 6 + 4 * 13);
}

#[test]
fn malformed_dataset_is_rejected() {
    assert!(Dataset::from_csv("").is_err());
    assert!(Dataset::from_csv("a,b,c").is_err());
    let cfg = small_config();
    let text = generate_dataset(&cfg, 4, 3).unwrap().to_csv();
    let truncated: String = text
        .lines()
        .take(2)
        .map(|l| format!("{},\n", &l[..l.len() / 2]))
        .collect();
    assert!(Dataset::from_csv(&truncated).is_err());
}

#[test]
fn sparse_single_user_projections_equal_realized_outcomes() {
    let mut cfg = ExperimentConfig {
        n_users: 1,
        n_base_stations: 1,
        ..ExperimentConfig::default()
    };
    cfg.workload.arrival_rate_per_s = 0.5;
    for policy in [LoggingPolicy::Uniform, LoggingPolicy::Local, LoggingPolicy::Eel] {
        cfg.run.logging_policy = policy;
        let (ds, realized) = generate_with_realized(&cfg, 7, 200).unwrap();
        assert_eq!(realized.len(), 200);
        for o in realized {
            let rec = &ds.records[o.task.id as usize];
            assert_eq!(rec.outcomes[o.action], o);
        }
    }
}

#[test]
fn replay_reward_is_recomputable_from_dataset_and_actions() {
    let cfg = small_config();
    let ds = generate_dataset(&cfg, 2, 800).unwrap();
    let params = reward();
    for oracle in [Oracle::Eel, Oracle::Ee, Oracle::R] {
        let series = run_evaluation(&cfg, &mut Policy::Oracle(oracle), &params, Some(&ds)).unwrap();
        assert_eq!(series.rows.len(), 10);
        for row in &series.rows {
            let mut total = 0.0;
            let mut met = 0;
            for i in eval_draws(cfg.seed, row.episode, 50, ds.len()) {
                let ps = ds.records[i].projection_set();
                let o: &TaskOutcome = &ps.outcomes[oracle.choose(&ps)];
                let eta = (o.task.size / (o.response * o.e_total) / params.efficiency_scale).min(1.0);
                total += if o.response <= o.task.deadline {
                    eta
                } else {
                    -params.penalty
                };
                met += usize::from(o.response <= o.task.deadline);
            }
            assert!((row.reward - total).abs() <= 1e-12 * total.abs().max(1.0));
            assert_eq!(row.deadline_frac, met as f64 / 50.0);
        }
    }
}

#[test]
fn eel_episode_reward_sums_rewards_of_per_task_efficiency_maxima() {
    let cfg = small_config();
    let ds = generate_dataset(&cfg, 3, 400).unwrap();
    let params = reward();
    let series = run_evaluation(&cfg, &mut Policy::Oracle(Oracle::Eel), &params, Some(&ds)).unwrap();
    for row in &series.rows {
        let expected: f64 = eval_draws(cfg.seed, row.episode, 50, ds.len())
            .into_iter()
            .map(|i| {
                let rec = &ds.records[i];
                let best = rec
                    .outcomes
                    .iter()
                    .max_by(|a, b| a.efficiency().total_cmp(&b.efficiency()))
                    .unwrap();
                compute_reward(best, &params).unwrap()
            })
            .sum();
        assert!((row.reward - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }
}

#[test]
fn always_local_energy_is_sum_of_cpu_energies() {
    let cfg = small_config();
    let ds = generate_dataset(&cfg, 6, 300).unwrap();
    let n = &cfg.sim_config().nodes;
    let series = run_evaluation(&cfg, &mut Policy::Fixed(0), &reward(), Some(&ds)).unwrap();
    for row in &series.rows {
        let expected: f64 = eval_draws(cfg.seed, row.episode, 50, ds.len())
            .into_iter()
            .map(|i| {
                let t = &ds.records[i].task;
                n.kappa * t.size * t.intensity * n.user_cpu_hz * n.user_cpu_hz
            })
            .sum();
        assert!((row.energy - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn r_star_is_never_slower_than_ee_star_on_recorded_outcomes() {
    let cfg = small_config();
    let ds = generate_dataset(&cfg, 8, 1000).unwrap();
    let params = reward();
    let r = run_evaluation(&cfg, &mut Policy::Oracle(Oracle::R), &params, Some(&ds)).unwrap();
    let ee = run_evaluation(&cfg, &mut Policy::Oracle(Oracle::Ee), &params, Some(&ds)).unwrap();
    let s = summarize(&[("r".into(), &r), ("ee".into(), &ee)]).unwrap();
    assert!(s.agents[0].mean_task_response_s <= s.agents[1].mean_task_response_s);
    for (a, b) in r.rows.iter().zip(&ee.rows) {
        assert!(a.response <= b.response);
    }
    for rec in &ds.records {
        let ps = rec.projection_set();
        let t = ps.outcomes[r_star(&ps)].response;
        assert!(ps.outcomes.iter().all(|o| o.response >= t));
        let e = ps.outcomes[eel_star(&ps)].efficiency();
        assert!(ps.outcomes.iter().all(|o| o.efficiency() <= e));
        let spe = ps.outcomes[ee_star(&ps)].bits_per_joule();
        assert!(ps.outcomes.iter().all(|o| o.bits_per_joule() <= spe));
    }
}

#[test]
fn evaluation_is_deterministic_and_leaves_agents_untouched() {
    let cfg = small_config();
    let ds = generate_dataset(&cfg, 9, 500).unwrap();
    let mut pool = AgentPool::new(&cfg, reward(), cfg.seed).unwrap();
    run_training(&cfg, &mut pool, Some(&ds)).unwrap();
    let snapshot = |pool: &AgentPool| -> Vec<String> {
        pool.agents
            .iter()
            .map(|a| serde_json::to_string(&a.checkpoint()).unwrap())
            .collect()
    };
    let before = snapshot(&pool);
    let mut eval = || {
        run_evaluation(
            &cfg,
            &mut Policy::E2da {
                pool: &mut pool,
                learn: true,
            },
            &reward(),
            Some(&ds),
        )
        .unwrap()
    };
    let a = eval();
    let b = eval();
    assert_eq!(a, b);
    assert!(a.rows.iter().all(|r| r.phase == Phase::Test));
    assert_eq!(snapshot(&pool), before);
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let mut cfg = small_config();
    let ds = generate_dataset(&cfg, 10, 500).unwrap();
    let mut whole = AgentPool::new(&cfg, reward(), cfg.seed).unwrap();
    cfg.run.n_train_episodes = 12;
    let full = run_training(&cfg, &mut whole, Some(&ds)).unwrap();

    cfg.run.n_train_episodes = 5;
    let mut part = AgentPool::new(&cfg, reward(), cfg.seed).unwrap();
    let mut series = run_training(&cfg, &mut part, Some(&ds)).unwrap();
    let json: Vec<String> = part
        .agents
        .iter()
        .map(|a| serde_json::to_string(&a.checkpoint()).unwrap())
        .collect();
    let mut restored = part.clone();
    restored.agents = json
        .iter()
        .map(|j| mec_offload::bandit::Agent::from_checkpoint(&serde_json::from_str(j).unwrap()).unwrap())
        .collect();
    cfg.run.n_train_episodes = 7;
    series.extend(run_training(&cfg, &mut restored, Some(&ds)).unwrap());
    assert_eq!(series, full);
    assert_eq!(series.rows.last().unwrap().episode, 11);
}

#[test]
fn single_record_dataset_converges_to_its_best_action() {
    let mut cfg = small_config();
    cfg.agent.epsilon_decay = 0.95;
    cfg.run.n_train_episodes = 200;
    cfg.run.tasks_per_episode = 20;
    cfg.run.agent_sharing = mec_offload::config::AgentSharing::Shared;
    let full = generate_dataset(&cfg, 11, 50).unwrap();
    let params = RewardParams {
        penalty: 1.0,
        efficiency_scale: 1e12,
    };
    // Pick a record whose best action is unique by a clear margin.
    let rec = full
        .records
        .iter()
        .find(|r| {
            let mut rs: Vec<f64> = r.outcomes.iter().map(|o| compute_reward(o, &params).unwrap()).collect();
            rs.sort_by(|a, b| b.total_cmp(a));
            rs[0] - rs[1] > 0.05
        })
        .expect("a record with a clear winner")
        .clone();
    let best = (0..rec.outcomes.len())
        .max_by(|&a, &b| {
            compute_reward(&rec.outcomes[a], &params)
                .unwrap()
                .total_cmp(&compute_reward(&rec.outcomes[b], &params).unwrap())
        })
        .unwrap();
    let ds = Dataset {
        n_actions: full.n_actions,
        records: vec![rec.clone()],
    };
    let mut pool = AgentPool::new(&cfg, params, cfg.seed).unwrap();
    run_training(&cfg, &mut pool, Some(&ds)).unwrap();
    let x = mec_offload::workload::normalize_context(&rec.task, &cfg.workload).unwrap();
    let eps = cfg.agent.epsilon_min;
    let agent = &mut pool.agents[0];
    let hits = (0..2000).filter(|_| agent.act(&x, eps) == best).count();
    assert!(hits as f64 / 2000.0 >= 0.95, "best action chosen {hits}/2000 times");
}

#[test]
fn live_mode_attributes_every_task_to_an_episode() {
    let mut cfg = small_config();
    cfg.run.mode = Mode::Live;
    cfg.run.n_train_episodes = 4;
    let mut pool = AgentPool::new(&cfg, reward(), cfg.seed).unwrap();
    let series = run_training(&cfg, &mut pool, None).unwrap();
    assert_eq!(series.rows.len(), 4);
    for (i, row) in series.rows.iter().enumerate() {
        assert_eq!(row.episode, i as u64);
        assert_eq!(row.tasks, 50);
        assert_eq!(row.deadline_frac, row.met as f64 / 50.0);
    }
    assert_eq!(pool.episodes_completed(), 4);
    let total: usize = pool.agents.iter().map(|a| a.buffer().len()).sum();
    assert_eq!(total, 200);
    let again = {
        let mut p = AgentPool::new(&cfg, reward(), cfg.seed).unwrap();
        run_training(&cfg, &mut p, None).unwrap()
    };
    assert_eq!(series, again);
}

#[test]
fn reward_scale_calibration_uses_configured_quantile() {
    let cfg = small_config();
    let ds = generate_dataset(&cfg, 12, 300).unwrap();
    let scale = calibrate_efficiency_scale(&ds, 0.75).unwrap();
    let eff = ds.efficiencies();
    let below = eff.iter().filter(|&&e| e <= scale).count();
    assert!(below as f64 >= 0.75 * eff.len() as f64);
    assert!(((below - 1) as f64) < 0.75 * eff.len() as f64);
    let params = resolve_reward_params(&cfg, Some(&ds)).unwrap();
    assert_eq!(
        params.efficiency_scale,
        calibrate_efficiency_scale(&ds, cfg.reward.calibration_quantile).unwrap()
    );
    let mut fixed = cfg.clone();
    fixed.reward.efficiency_scale = Some(42.0);
    assert_eq!(resolve_reward_params(&fixed, Some(&ds)).unwrap().efficiency_scale, 42.0);
}

#[test]
fn intensity_scenario_pair_reports_energy_and_response_ratios() {
    let mut cfg = small_config();
    cfg.run.mode = Mode::Live;
    cfg.run.n_test_episodes = 3;
    cfg.reward.efficiency_scale = Some(1e10);
    let mut labelled = Vec::new();
    for mean in [50_000.0, 200_000.0] {
        let c = scenario(&cfg, SweepAxis::Intensity, mean);
        assert!((c.workload.intensity_cpb.mean() - mean).abs() < 1e-6 * mean);
        let params = resolve_reward_params(&c, None).unwrap();
        labelled.push((
            format!("I={mean}"),
            run_evaluation(&c, &mut Policy::Oracle(Oracle::Ee), &params, None).unwrap(),
        ));
    }
    let refs: Vec<(String, &MetricsSeries)> = labelled.iter().map(|(l, s)| (l.clone(), s)).collect();
    let s = summarize(&refs).unwrap();
    assert_eq!(s.ratios.len(), 1);
    assert!(s.ratios[0].energy_ratio.is_finite() && s.ratios[0].response_ratio > 1.0);
}
