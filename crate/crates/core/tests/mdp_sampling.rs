use std::collections::{HashSet, VecDeque};

use drogo_core::mdp::{parse_layout, Cell, BUNDLED, DEFAULT_DELTA, N_ACTIONS};
use drogo_core::sampling::*;
use drogo_core::{EncoderKind, GridWorld};

fn all() -> Vec<GridWorld> {
    BUNDLED.iter().map(|(n, _)| GridWorld::bundled(n).unwrap()).collect()
}

#[test]
fn transition_rows_are_stochastic_and_goals_absorb() {
    for gw in all() {
        let p = gw.default_transition_matrix();
        for s in 0..gw.n_states {
            let sum: f64 = p.row(s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            if gw.is_goal(s) {
                assert_eq!(p[(s, s)], 1.0);
            }
        }
        let e = gw.episodic_transition_matrix();
        for &g in &gw.goal_ids {
            assert!(e.row(g).iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn rewards_are_negative_and_consistent() {
    for gw in all() {
        for s in 0..gw.n_states {
            let r = gw.dr_reward(s);
            assert!(r < 0.0);
            let expected = if gw.is_goal(s) {
                -gw.delta
            } else if gw.is_red(s) {
                gw.low_reward
            } else {
                gw.step_reward
            };
            assert_eq!(r, expected);
            if gw.is_goal(s) {
                continue;
            }
            for a in 0..N_ACTIONS {
                let (sn, rr, done) = gw.env_step(s, a).unwrap();
                assert_eq!(sn, gw.next_state(s, a));
                assert_eq!(done, gw.is_goal(sn));
                assert_eq!(rr, gw.arrival_reward(sn));
            }
        }
        assert!(gw.env_step(gw.goal_ids[0], 0).is_err());
    }
}

#[test]
fn encodings_are_injective() {
    for gw in all() {
        for kind in EncoderKind::ALL {
            let seen: HashSet<Vec<u64>> = (0..gw.n_states)
                .map(|s| gw.encode_state(kind, s).unwrap().iter().map(|x| x.to_bits()).collect())
                .collect();
            assert_eq!(seen.len(), gw.n_states, "{}", kind.name());
        }
        let plane = gw.layout.rows * gw.layout.cols;
        for s in 0..gw.n_states {
            let x = gw.encode_state(EncoderKind::Pixels, s).unwrap();
            assert_eq!(x[3 * plane..].iter().filter(|&&v| v > 0.0).count(), 1);
            let (r, c) = gw.states[s];
            assert!(x[3 * plane + r * gw.layout.cols + c] > 0.0);
        }
    }
}

#[test]
fn four_rooms_has_four_rooms() {
    let gw = GridWorld::bundled("four_rooms").unwrap();
    let wall = |r: usize, c: usize| gw.state_at(r, c).is_none();
    let doorway = |s: usize| {
        let (r, c) = gw.states[s];
        (wall(r - 1, c) && wall(r + 1, c)) || (wall(r, c - 1) && wall(r, c + 1))
    };
    let doors: Vec<usize> = (0..gw.n_states).filter(|&s| doorway(s)).collect();
    assert_eq!(doors.len(), 4);
    let mut seen = vec![false; gw.n_states];
    let mut rooms = 0;
    for start in 0..gw.n_states {
        if seen[start] || doorway(start) {
            continue;
        }
        rooms += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(s) = queue.pop_front() {
            for a in 0..N_ACTIONS {
                let t = gw.next_state(s, a);
                if !seen[t] && !doorway(t) && !gw.is_goal(s) {
                    seen[t] = true;
                    queue.push_back(t);
                }
            }
        }
    }
    assert_eq!(rooms, 4);
}

#[test]
fn layout_text_round_trips() {
    for (name, text) in BUNDLED {
        let layout = parse_layout(text).unwrap();
        assert_eq!(parse_layout(&layout.to_text()).unwrap(), layout, "{name}");
        assert_eq!(layout.count(Cell::Start), 1);
        assert!(layout.count(Cell::Goal) >= 1);
    }
}

#[test]
fn malformed_layouts_are_rejected() {
    for bad in [
        "####\n#SG\n####\n",
        "#####\n#S.G#\n##\n",
        "#####\n#S.X#\n#####\n",
        "#####\n#..G#\n#####\n",
        "#####\n#S..#\n#####\n",
        "######\n#S#.G#\n######\n",
        "#####\n#SSG#\n#####\n",
    ] {
        assert!(parse_layout(bad).is_err(), "{bad:?}");
    }
}

#[test]
fn sample_marginals_are_uniform() {
    let gw = GridWorld::bundled("grid_task").unwrap();
    let ds = generate_dataset(&gw, 200_000, 1).unwrap();
    let n = gw.n_states as f64;
    let mut counts = vec![0usize; gw.n_states];
    let mut acts = [0usize; N_ACTIONS];
    for t in &ds.transitions {
        counts[t.s as usize] += 1;
        acts[t.a as usize] += 1;
        assert_eq!(t.r, gw.dr_reward(t.s as usize));
        assert_eq!(t.s_next as usize, gw.next_state(t.s as usize, t.a as usize));
    }
    let expect = 200_000.0 / n;
    for &c in &counts {
        assert!((c as f64 - expect).abs() < 5.0 * expect.sqrt());
    }
    for &c in &acts {
        assert!((c as f64 - 50_000.0).abs() < 5.0 * 50_000f64.sqrt());
    }

    let mut aux = vec![0usize; gw.n_states];
    let mut it = BatchIter::new(&ds, 2000, gw.n_states, 4).unwrap();
    for _ in 0..500 {
        for smp in it.next_batch() {
            aux[smp.s2] += 1;
        }
    }
    let expect = 1e6 / n;
    for &c in &aux {
        assert!((c as f64 - expect).abs() < 5.0 * expect.sqrt());
    }
}

#[test]
fn epochs_visit_every_transition_once() {
    let gw = GridWorld::bundled("four_rooms").unwrap();
    let ds = generate_dataset(&gw, 1000, 2).unwrap();
    let mut it = BatchIter::new(&ds, 250, gw.n_states, 2).unwrap();
    let mut seen: Vec<(usize, usize)> = (0..4).flat_map(|_| it.next_batch()).map(|s| (s.s, s.s_next)).collect();
    let mut all: Vec<(usize, usize)> = ds.transitions.iter().map(|t| (t.s as usize, t.s_next as usize)).collect();
    seen.sort();
    all.sort();
    assert_eq!(seen, all);
}

#[test]
fn dataset_round_trip_and_determinism() {
    let gw = GridWorld::bundled("grid_maze").unwrap();
    let ds = generate_dataset(&gw, 200_000, 7).unwrap();
    assert_eq!(ds, generate_dataset(&gw, 200_000, 7).unwrap());
    assert_ne!(ds, generate_dataset(&gw, 200_000, 8).unwrap());
    let bytes = save_dataset(&ds);
    assert_eq!(&bytes[..4], b"DRGO");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    assert_eq!(bytes.len(), 30 + 17 * 200_000);
    let back = load_dataset(&bytes).unwrap();
    assert_eq!(back, ds);
    assert_eq!(save_dataset(&back), bytes);
    back.check_fingerprint(&gw).unwrap();

    let a: Vec<_> = BatchIter::new(&ds, 64, gw.n_states, 3).unwrap().take(5).collect();
    let b: Vec<_> = BatchIter::new(&ds, 64, gw.n_states, 3).unwrap().take(5).collect();
    assert_eq!(a, b);
}

#[test]
fn fingerprint_mismatch_is_detected() {
    let gw = GridWorld::bundled("grid_task").unwrap();
    let mut ds = generate_dataset(&gw, 10, 0).unwrap();
    ds.fingerprint ^= 1;
    assert!(matches!(ds.check_fingerprint(&gw), Err(drogo_core::Error::Fingerprint { .. })));
    let other = gw.with_delta(DEFAULT_DELTA * 2.0).unwrap();
    let ds = generate_dataset(&gw, 10, 0).unwrap();
    assert!(ds.check_fingerprint(&other).is_err());
}
