use proptest::prelude::*;

use comerge_core::harness::{run_episode, RunConfig};
use comerge_core::planning::refine::check_waypoints;
use comerge_core::planning::tokenizer::VOCAB;
use comerge_core::planning::{detokenize_trajectory, lm_loss, tokenize_trajectory};
use comerge_core::simulation::{target_lane, MetaAction};

fn grid_points() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-99_999i64..99_999, -99_999i64..99_999), 0..40)
        .prop_map(|v| v.into_iter().map(|(x, y)| [x as f64 / 100.0, y as f64 / 100.0]).collect())
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, VOCAB.len()).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn grid_trajectories_survive_tokens(points in grid_points()) {
        let tokens = tokenize_trajectory(&points).unwrap();
        prop_assert_eq!(detokenize_trajectory(&tokens).unwrap(), points);
    }

    #[test]
    fn lm_loss_is_non_negative((target, dists) in (1usize..30).prop_flat_map(|n| (
        prop::collection::vec(0..VOCAB.len(), n),
        prop::collection::vec(distribution(), n),
    ))) {
        let loss = lm_loss(&target, &dists).unwrap();
        prop_assert!(loss > 0.0);
        let certain: Vec<Vec<f64>> = target
            .iter()
            .map(|&t| (0..VOCAB.len()).map(|j| if j == t { 1.0 } else { 0.0 }).collect())
            .collect();
        prop_assert_eq!(lm_loss(&target, &certain).unwrap(), 0.0);
    }
}

#[test]
fn baseline_plans_are_feasible_and_consistent() {
    for seed in 0..3 {
        let mut cfg = RunConfig::with_defaults();
        cfg.run.seed = seed;
        cfg.run.horizon = 250;
        let trace = run_episode(&cfg).unwrap();
        let net = cfg.scenario.network().unwrap();
        let mut lane_changes = 0;
        for (i, t) in trace.ticks.iter().enumerate() {
            let before = if i == 0 { &trace.header.agents } else { &trace.ticks[i - 1].agents };
            for d in &t.decisions {
                let traj = &d.decision.trajectory;
                let meta = d.decision.meta_action;
                check_waypoints(meta, traj, &cfg.vehicles)
                    .unwrap_or_else(|e| panic!("seed {seed} tick {} agent {}: {e}", t.tick, d.agent));
                let agent = before.iter().find(|a| a.id == d.agent).unwrap();
                if agent.maneuver.is_some() {
                    continue;
                }
                let end = traj.points.last().unwrap();
                let lane = target_lane(meta, agent.lane);
                assert!(
                    (end[1] - net.lane_center(lane)).abs() < 1e-6,
                    "seed {seed} tick {}: {meta} from lane {} ends at y = {}",
                    t.tick,
                    agent.lane,
                    end[1]
                );
                lane_changes += usize::from(meta == MetaAction::Left || meta == MetaAction::Right);
            }
        }
        assert!(lane_changes > 0);
    }
}
