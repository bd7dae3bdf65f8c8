use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use drogo_core::mdp::{BUNDLED, DEFAULT_DELTA, N_ACTIONS};
use drogo_core::shaping::*;
use drogo_core::GridWorld;

/// Cheapest path cost from start to any goal, where entering a cell costs
/// −(arrival reward).
fn dijkstra(gw: &GridWorld) -> f64 {
    let mut dist = vec![u64::MAX; gw.n_states];
    let mut heap = BinaryHeap::new();
    dist[gw.start_id] = 0;
    heap.push(Reverse((0u64, gw.start_id)));
    while let Some(Reverse((d, s))) = heap.pop() {
        if d > dist[s] {
            continue;
        }
        if gw.is_goal(s) {
            return -(d as f64);
        }
        for a in 0..N_ACTIONS {
            let t = gw.next_state(s, a);
            let nd = d + (-gw.arrival_reward(t)) as u64;
            if nd < dist[t] {
                dist[t] = nd;
                heap.push(Reverse((nd, t)));
            }
        }
    }
    f64::NEG_INFINITY
}

fn bfs_steps(gw: &GridWorld) -> usize {
    let mut dist = vec![usize::MAX; gw.n_states];
    dist[gw.start_id] = 0;
    let mut q = VecDeque::from([gw.start_id]);
    while let Some(s) = q.pop_front() {
        if gw.is_goal(s) {
            return dist[s];
        }
        for a in 0..N_ACTIONS {
            let t = gw.next_state(s, a);
            if dist[t] == usize::MAX {
                dist[t] = dist[s] + 1;
                q.push_back(t);
            }
        }
    }
    usize::MAX
}

#[test]
fn value_iteration_matches_dijkstra() {
    for (name, _) in BUNDLED {
        let gw = GridWorld::bundled(name).unwrap();
        assert_eq!(value_iteration_optimal_return(&gw).unwrap(), dijkstra(&gw), "{name}");
    }
}

#[test]
fn red_free_layout_matches_bfs() {
    let text = "\
#######
#S....#
#.###.#
#...#G#
#######
";
    let gw = GridWorld::from_text(text, DEFAULT_DELTA).unwrap();
    let steps = bfs_steps(&gw);
    let goal_reward = gw.arrival_reward(gw.goal_ids[0]);
    let expected = -((steps - 1) as f64) + goal_reward;
    assert_eq!(value_iteration_optimal_return(&gw).unwrap(), expected);
    // a red tile off every shortest path leaves the optimum unchanged
    let with_red = text.replace("#...#G#", "#..R#G#");
    let gw2 = GridWorld::from_text(&with_red, DEFAULT_DELTA).unwrap();
    assert_eq!(value_iteration_optimal_return(&gw2).unwrap(), expected);
}

fn greedy_path(gw: &GridWorld, q: &[[f64; N_ACTIONS]]) -> Vec<usize> {
    let mut s = gw.start_id;
    let mut path = vec![s];
    for _ in 0..200 {
        s = gw.next_state(s, greedy_action(&q[s]));
        path.push(s);
        if gw.is_goal(s) {
            break;
        }
    }
    path
}

fn path_return(gw: &GridWorld, path: &[usize]) -> f64 {
    path[1..].iter().map(|&s| gw.arrival_reward(s)).sum()
}

#[test]
fn shaping_preserves_the_optimal_policy() {
    let layouts = ["#######\n#S...G#\n#######\n", "#######\n#S....#\n#..R..#\n#.....#\n#....G#\n#######\n"];
    for text in layouts {
        let gw = GridWorld::from_text(text, DEFAULT_DELTA).unwrap();
        let optimal = value_iteration_optimal_return(&gw).unwrap();
        let potential: Vec<f64> = (0..gw.n_states).map(|s| -(((s * 37) % 11) as f64) * 0.3).collect();
        for beta in [0.0, 0.5, 0.9] {
            let mut spec = ShapingSpec::new(potential.clone(), beta, 0.5);
            spec.budget = 50_000;
            spec.epsilon = 0.3;
            let (m, q) = q_learning(&gw, &spec, 0).unwrap();
            assert!(m.n_opt.is_some(), "beta {beta}");
            assert_eq!(path_return(&gw, &greedy_path(&gw, &q)), optimal);
        }
    }
}

#[test]
fn visit_count_grows_with_training() {
    let gw = GridWorld::bundled("grid_task").unwrap();
    let mut last = 0;
    for budget in [1000, 5000, 20_000] {
        let mut spec = ShapingSpec::new(vec![0.0; gw.n_states], 0.0, 0.3);
        spec.budget = budget;
        let m = q_learning_run(&gw, &spec, 3).unwrap();
        assert!(m.n_visit >= last);
        assert!(m.n_visit <= budget);
        assert!(m.n_opt.is_none_or(|n| n <= budget));
        last = m.n_visit;
    }
}

#[test]
fn evaluation_does_not_perturb_training() {
    let gw = GridWorld::bundled("four_rooms").unwrap();
    let mut a = ShapingSpec::new(vec![0.0; gw.n_states], 0.0, 0.3);
    a.budget = 20_000;
    let mut b = a.clone();
    b.eval_every = 20_000;
    let (ma, qa) = q_learning(&gw, &a, 5).unwrap();
    let (mb, qb) = q_learning(&gw, &b, 5).unwrap();
    assert_eq!(qa, qb);
    assert_eq!(ma.n_visit, mb.n_visit);
    assert_eq!(ma.curve.last(), mb.curve.last());
    assert_eq!(ma.curve.len(), 200);
}

#[test]
fn n_opt_is_the_start_of_the_final_optimal_streak() {
    let gw = GridWorld::bundled("grid_task").unwrap();
    let optimal = value_iteration_optimal_return(&gw).unwrap();
    let mut spec = ShapingSpec::new(vec![0.0; gw.n_states], 0.0, 1.0);
    spec.budget = 50_000;
    let m = q_learning_run(&gw, &spec, 1).unwrap();
    let streak = m.curve.iter().rev().take_while(|(_, r)| (r - optimal).abs() < 1e-9).last().map(|c| c.0);
    assert_eq!(m.n_opt, streak);
}

#[test]
fn suite_picks_the_lowest_mean_cell() {
    let gw = GridWorld::bundled("grid_task").unwrap();
    let cfg = SuiteConfig {
        seeds: vec![0, 1],
        betas: vec![0.5, 1.0],
        alphas: vec![0.3, 1.0],
        budget: 5000,
        ..SuiteConfig::default()
    };
    let v: Vec<f64> = drogo_core::spectral::log_principal_eigvec_dr(&gw, Default::default()).unwrap();
    let pots = [PotentialSet::shared("DR", v), PotentialSet::none(gw.n_states)];
    let res = run_shaping_suite(&gw, &pots, &cfg).unwrap();
    assert_eq!(res.records.len(), 2 * 2 * 2 + 2 * 2);
    assert!(res.records.iter().filter(|r| r.potential == "NS").all(|r| r.beta == 0.0));
    for best in &res.best {
        let cells: Vec<(f64, f64)> = res
            .records
            .iter()
            .filter(|r| r.potential == best.potential)
            .map(|r| (r.beta, r.alpha_q))
            .collect();
        for (beta, alpha) in cells {
            let runs: Vec<_> = res.records.iter().filter(|r| r.potential == best.potential && r.beta == beta && r.alpha_q == alpha).collect();
            let mean = runs.iter().map(|r| r.metrics.n_opt_or(cfg.budget) as f64).sum::<f64>() / runs.len() as f64;
            assert!(best.mean_n_opt <= mean);
        }
        assert_eq!(res.best_runs(&best.potential).len(), 2);
    }
    assert_eq!(res, run_shaping_suite(&gw, &pots, &cfg).unwrap());
}

#[test]
fn invalid_shaping_settings_are_rejected() {
    let gw = GridWorld::bundled("grid_task").unwrap();
    assert!(q_learning_run(&gw, &ShapingSpec::new(vec![0.0; 3], 0.5, 0.3), 0).is_err());
    assert!(q_learning_run(&gw, &ShapingSpec::new(vec![0.0; gw.n_states], 1.5, 0.3), 0).is_err());
    assert!(q_learning_run(&gw, &ShapingSpec::new(vec![0.0; gw.n_states], 0.5, 0.0), 0).is_err());
    let mut nan = vec![0.0; gw.n_states];
    nan[0] = f64::NAN;
    assert!(q_learning_run(&gw, &ShapingSpec::new(nan, 0.5, 0.3), 0).is_err());
}
