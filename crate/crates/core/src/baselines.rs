//! Oracle baselines with decision-time access to every action's outcome.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::{Action, TaskOutcome};

/// The outcomes of one task under every action `0..=C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSet {
    pub task_id: u64,
    pub outcomes: Vec<TaskOutcome>,
}

impl ProjectionSet {
    pub fn new(outcomes: Vec<TaskOutcome>) -> Result<Self> {
        let first = outcomes
            .first()
            .ok_or_else(|| Error::domain("projection set needs at least one action"))?;
        let task = first.task;
        for (a, o) in outcomes.iter().enumerate() {
            if o.task != task || o.action != a {
                return Err(Error::domain(
                    "projections must share the task and be indexed by action",
                ));
            }
        }
        Ok(ProjectionSet {
            task_id: task.id,
            outcomes,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.outcomes.len()
    }
}

fn argmax_by(ps: &ProjectionSet, key: impl Fn(&TaskOutcome) -> f64) -> Action {
    let mut best = 0;
    let mut best_v = key(&ps.outcomes[0]);
    for (a, o) in ps.outcomes.iter().enumerate().skip(1) {
        let v = key(o);
        if v > best_v {
            best = a;
            best_v = v;
        }
    }
    best
}

/// EEL*: highest `S / (T E)`, deadline ignored.
pub fn eel_star(ps: &ProjectionSet) -> Action {
    argmax_by(ps, TaskOutcome::efficiency)
}

/// EE*: highest `S / E`.
pub fn ee_star(ps: &ProjectionSet) -> Action {
    argmax_by(ps, TaskOutcome::bits_per_joule)
}

/// R*: lowest response time.
pub fn r_star(ps: &ProjectionSet) -> Action {
    argmax_by(ps, |o| -o.response)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Oracle {
    Eel,
    Ee,
    R,
}

impl Oracle {
    pub fn choose(self, ps: &ProjectionSet) -> Action {
        match self {
            Oracle::Eel => eel_star(ps),
            Oracle::Ee => ee_star(ps),
            Oracle::R => r_star(ps),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Oracle::Eel => "eel",
            Oracle::Ee => "ee",
            Oracle::R => "r",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::Task;
    use proptest::prelude::*;

    const TASK: Task = Task {
        id: 7,
        user_id: 0,
        arrival_time: 0.0,
        size: 1000.0,
        intensity: 100.0,
        deadline: 0.01,
    };

    /// Outcomes with the given (T, E) per action; action 0 is local.
    fn set(te: &[(f64, f64)]) -> ProjectionSet {
        let outcomes = te
            .iter()
            .enumerate()
            .map(|(a, &(t, e))| {
                if a == 0 {
                    TaskOutcome::local(TASK, 0.0, t, e)
                } else {
                    TaskOutcome::offload(TASK, a, 0.0, t, 0.0, 0.0, 0.0, 0.0, e, 0.0)
                }
            })
            .collect();
        ProjectionSet::new(outcomes).unwrap()
    }

    #[test]
    fn eel_picks_highest_efficiency_with_low_index_ties() {
        // S = 1000, T = 1: efficiencies are 1000 / E.
        let eff = [2e4, 5e4, 5e4, 1e4];
        let ps = set(&eff.map(|x| (1.0, 1000.0 / x)));
        assert_eq!(eel_star(&ps), 1);
    }

    #[test]
    fn dominant_action_wins_everywhere() {
        let ps = set(&[(0.02, 0.5), (0.01, 0.3), (0.001, 0.001), (0.03, 0.2)]);
        assert_eq!(eel_star(&ps), 2);
        assert_eq!(ee_star(&ps), 2);
        assert_eq!(r_star(&ps), 2);
    }

    #[test]
    fn ee_prefers_local_when_cheapest_and_on_ties() {
        let ps = set(&[(0.05, 0.001), (0.01, 0.01), (0.01, 0.02), (0.01, 0.03)]);
        assert_eq!(ee_star(&ps), 0);
        let ps = set(&[(0.05, 0.01), (0.01, 0.01), (0.02, 0.01), (0.03, 0.01)]);
        assert_eq!(ee_star(&ps), 0);
    }

    #[test]
    fn r_picks_fastest() {
        let ps = set(&[(0.005, 1.0), (0.003, 1.0), (0.009, 1.0), (0.004, 1.0)]);
        assert_eq!(r_star(&ps), 1);
        let ps = set(&[(0.004, 1.0); 4]);
        assert_eq!(r_star(&ps), 0);
    }

    #[test]
    fn rejects_misindexed_sets() {
        let o = TaskOutcome::local(TASK, 0.0, 0.01, 0.01);
        assert!(ProjectionSet::new(vec![o, o]).is_err());
        assert!(ProjectionSet::new(vec![]).is_err());
    }

    fn brute_argmax(values: &[f64]) -> usize {
        let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        values.iter().position(|&v| v == best).unwrap()
    }

    proptest! {
        #[test]
        fn oracles_match_exhaustive_search(te in prop::collection::vec((1e-4f64..1.0, 1e-6f64..1.0), 2..6)) {
            let ps = set(&te);
            let eff: Vec<f64> = ps.outcomes.iter().map(|o| o.task.size / (o.response * o.e_total)).collect();
            let spe: Vec<f64> = ps.outcomes.iter().map(|o| o.task.size / o.e_total).collect();
            let neg_t: Vec<f64> = ps.outcomes.iter().map(|o| -o.response).collect();
            prop_assert_eq!(eel_star(&ps), brute_argmax(&eff));
            prop_assert_eq!(ee_star(&ps), brute_argmax(&spe));
            prop_assert_eq!(r_star(&ps), brute_argmax(&neg_t));
        }

        #[test]
        fn energy_scaling_leaves_choice(te in prop::collection::vec((1e-4f64..1.0, 1e-6f64..1.0), 2..6),
                                        k in 1e-3f64..1e3) {
            let scaled: Vec<(f64, f64)> = te.iter().map(|&(t, e)| (t, e * k)).collect();
            let (a, b) = (set(&te), set(&scaled));
            prop_assert_eq!(ee_star(&a), ee_star(&b));
            prop_assert_eq!(eel_star(&a), eel_star(&b));
        }
    }
}
