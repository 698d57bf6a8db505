//! Whole-run properties of the simulation loop: reward structure, one update
//! per event, the event watchdog, exact assimilation, independence without
//! sharing and the coordination score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharesim_core::arena::{contacts, AgentBody, Vec2};
use sharesim_core::engine::coordination_score;
use sharesim_core::{ActionId, ArenaPreset, QTable, ShareParams, SimConfig, Simulation, StateId};

fn config(arena: ArenaPreset, m: usize, p: f64, seed: u64) -> SimConfig {
    let mut cfg = SimConfig {
        seed,
        share: ShareParams::new(p),
        ..SimConfig::default()
    };
    arena.apply(&mut cfg);
    cfg.arena.agent_count = m;
    cfg
}

#[test]
fn rewards_updates_and_watchdog() {
    for (m, p, seed) in [(1, 0.0, 1), (4, 0.5, 2), (20, 1.0, 3)] {
        let cfg = config(ArenaPreset::Small, m, p, seed);
        let (c, k) = (cfg.reward.c, cfg.reward.k_gain);
        let limit = cfg.event_watchdog();
        let mut sim = Simulation::new(cfg).unwrap();
        let mut action_start = vec![0.0; m];
        let mut last_event = vec![0u64; m];
        let mut first_event = vec![true; m];
        let mut longest = 0;
        let (mut rotations, mut forwards) = (0, 0);
        for _ in 0..60_000 {
            for o in sim.step().unwrap() {
                let i = o.agent;
                let cum = sim.bodies()[i].cumulative_distance;
                let d = cum - action_start[i];
                match o.learned {
                    None => assert!(first_event[i], "agent {i} skipped an update"),
                    Some((_, a, r)) => {
                        assert!(!first_event[i]);
                        if a == ActionId::FORWARD {
                            forwards += 1;
                            assert!(d >= 0.0);
                            assert_eq!(r, -c + k * d);
                        } else {
                            // A rotation may complete in the very tick the
                            // agent is struck; either way nothing moved.
                            rotations += 1;
                            assert_eq!(r, -c, "rotation rewards are exactly -C");
                        }
                    }
                }
                first_event[i] = false;
                action_start[i] = cum;
                longest = longest.max(sim.tick() - last_event[i]);
                last_event[i] = sim.tick();
            }
        }
        let stats = sim.stats();
        let bootstrapped = first_event.iter().filter(|f| !**f).count() as u64;
        assert_eq!(stats.updates, stats.events - bootstrapped);
        assert_eq!(stats.updates, rotations + forwards);
        assert!(rotations > 0 && forwards > 0);
        assert!(longest <= limit, "{longest} > {limit}");
    }
}

#[test]
fn assimilation_copies_exactly_and_policies_stay_normalized() {
    let cfg = config(ArenaPreset::Small, 20, 1.0, 5);
    let mut sim = Simulation::new(cfg).unwrap();
    let mut copies = 0;
    for _ in 0..200_000 {
        let outcomes = sim.step().unwrap();
        for (idx, o) in outcomes.iter().enumerate() {
            // Later events in the same tick may legitimately change either
            // party again; only untouched pairs are compared.
            let touched_later = |x: usize| {
                outcomes[idx + 1..]
                    .iter()
                    .any(|later| later.agent == x || later.assimilated.contains(&x))
            };
            for &j in &o.assimilated {
                if touched_later(j) || touched_later(o.agent) {
                    continue;
                }
                let (src, dst) = (&sim.minds()[o.agent], &sim.minds()[j]);
                assert_eq!(src.q, dst.q);
                assert_eq!(src.q.visit_counts(), dst.q.visit_counts());
                assert_eq!(src.policy, dst.policy);
                copies += 1;
            }
            if !o.assimilated.is_empty() {
                assert!(o.fired);
            }
        }
    }
    assert!(copies > 0, "no assimilation happened in a crowded p=1 run");
    for mind in sim.minds() {
        for s in 0..16 {
            let total: f64 = mind.policy.row(StateId(s)).iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}

/// Agent 0 of a two-agent run, up to the first tick the two touch, learns
/// exactly what it learns alone: without sharing it has the same random
/// stream and sees the same events.
#[test]
fn agents_learn_independently_without_sharing() {
    let mut cfg = config(ArenaPreset::Large, 2, 0.0, 17);
    cfg.share_enabled = false;
    let a = AgentBody::new(Vec2::new(40.0, 40.0), 0.3, 4);
    let b = AgentBody::new(Vec2::new(160.0, 150.0), 2.0, 4);
    for (first, second) in [(a.clone(), b.clone()), (b, a)] {
        let mut pair = Simulation::with_bodies(cfg.clone(), vec![first.clone(), second]).unwrap();
        let mut solo_cfg = cfg.clone();
        solo_cfg.arena.agent_count = 1;
        let mut solo = Simulation::with_bodies(solo_cfg, vec![first]).unwrap();
        let mut compared_events = 0;
        while pair.tick() < 200_000 {
            let events = pair.step().unwrap();
            let solo_events = solo.step().unwrap();
            let touching = contacts(
                0,
                pair.bodies(),
                &pair.config().arena,
                &pair.config().motion,
            )
            .agents()
            .next()
            .is_some();
            if touching {
                break;
            }
            assert_eq!(pair.minds()[0], solo.minds()[0], "tick {}", pair.tick());
            assert_eq!(pair.bodies()[0], solo.bodies()[0]);
            assert_eq!(
                events.iter().filter(|o| o.agent == 0).count(),
                solo_events.len()
            );
            compared_events += solo_events.len();
        }
        assert!(
            compared_events >= 10,
            "agents met after only {compared_events} events"
        );
    }
}

#[test]
fn p_zero_matches_disabled_sharing() {
    let on = config(ArenaPreset::Small, 12, 0.0, 4);
    let mut off = on.clone();
    off.share_enabled = false;
    off.max_ticks = 50_000;
    let mut on = on;
    on.max_ticks = 50_000;
    assert_eq!(
        sharesim_core::run(&on).unwrap(),
        sharesim_core::run(&off).unwrap()
    );
}

/// `E[score]` for `m` agents whose greedy actions are independent and
/// uniform over `k` actions: the expected largest multinomial count over `m`,
/// summed exactly over all count vectors.
fn expected_modal_fraction(m: usize, k: usize) -> f64 {
    fn walk(left: usize, slots: usize, k: usize, prob: f64, best: usize, out: &mut f64) {
        if slots == 1 {
            let p = prob * (1.0 / k as f64).powi(left as i32) / factorial(left);
            *out += p * best.max(left) as f64;
            return;
        }
        for c in 0..=left {
            let p = prob * (1.0 / k as f64).powi(c as i32) / factorial(c);
            walk(left - c, slots - 1, k, p, best.max(c), out);
        }
    }
    fn factorial(n: usize) -> f64 {
        (1..=n).map(|v| v as f64).product()
    }
    let mut total = 0.0;
    walk(m, k, k, factorial(m), 0, &mut total);
    total / m as f64
}

#[test]
fn coordination_of_random_tables_matches_multinomial_expectation() {
    let (m, n_sectors, samples) = (20, 4, 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut scores = Vec::with_capacity(samples);
    for _ in 0..samples {
        let tables: Vec<QTable> = (0..m)
            .map(|_| {
                let mut q = QTable::for_sensors(n_sectors);
                for s in 0..16 {
                    for a in 0..4 {
                        q.set(StateId(s), ActionId(a), rng.gen::<f64>());
                    }
                }
                q
            })
            .collect();
        scores.push(coordination_score(&tables));
    }
    let mean = scores.iter().sum::<f64>() / samples as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
    let se = (var / samples as f64).sqrt();
    let exact = expected_modal_fraction(m, n_sectors);
    assert!((0.35..0.5).contains(&exact), "{exact}");
    assert!(
        (mean - exact).abs() < 4.0 * se,
        "mean {mean} exact {exact} se {se}"
    );
}

#[test]
fn modal_fraction_oracle_small_cases() {
    // Two agents, two actions: agree with probability 1/2.
    assert!((expected_modal_fraction(2, 2) - 0.75).abs() < 1e-12);
    // One agent always agrees with itself.
    assert!((expected_modal_fraction(1, 4) - 1.0).abs() < 1e-12);
    // Three agents, three actions: all differ with probability 2/9.
    let e = (2.0 / 9.0) * (1.0 / 3.0) + (6.0 / 9.0) * (2.0 / 3.0) + (1.0 / 9.0) * 1.0;
    assert!((expected_modal_fraction(3, 3) - e).abs() < 1e-12);
}
