//! Long randomized runs checked tick by tick against the geometric
//! invariants of the arena.

use std::f64::consts::TAU;

use proptest::prelude::*;
use sharesim_core::arena::{contacts, wrap_angle, AgentBody, ContactKind, Mode};
use sharesim_core::{ArenaPreset, ShareParams, SimConfig, Simulation};

const TOL: f64 = 1e-9;

fn config(arena: ArenaPreset, m: usize, seed: u64) -> SimConfig {
    let mut cfg = SimConfig {
        seed,
        share: ShareParams::new(0.5),
        ..SimConfig::default()
    };
    arena.apply(&mut cfg);
    cfg.arena.agent_count = m;
    cfg
}

#[derive(Debug, Default)]
struct Violations {
    penetration: usize,
    containment: usize,
    accounting: usize,
    lattice: usize,
    rotating_moved: usize,
    reciprocity: usize,
}

impl Violations {
    fn total(&self) -> usize {
        self.penetration
            + self.containment
            + self.accounting
            + self.lattice
            + self.rotating_moved
            + self.reciprocity
    }
}

fn lattice_angle(b: &AgentBody) -> f64 {
    wrap_angle(b.base_orientation + TAU * b.heading as f64 / b.n_sectors() as f64)
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}

fn check_run(cfg: SimConfig, ticks: u64) -> Violations {
    let (r, l) = (cfg.arena.agent_radius, cfg.arena.side_length);
    let spec = cfg.arena;
    let motion = cfg.motion;
    let mut sim = Simulation::new(cfg).unwrap();
    let mut v = Violations::default();
    for _ in 0..ticks {
        let before: Vec<AgentBody> = sim.bodies().to_vec();
        sim.step().unwrap();
        let bodies = sim.bodies();
        for (i, (b0, b1)) in before.iter().zip(bodies).enumerate() {
            let c = b1.center;
            if c.x < r - TOL || c.y < r - TOL || c.x > l - r + TOL || c.y > l - r + TOL {
                v.containment += 1;
            }
            let moved = (b1.center - b0.center).norm();
            let logged = b1.cumulative_distance - b0.cumulative_distance;
            if (moved - logged).abs() > TOL || logged > motion.speed + TOL {
                v.accounting += 1;
            }
            if matches!(b0.mode, Mode::Rotating { .. }) && moved > TOL {
                v.rotating_moved += 1;
            }
            if !matches!(b1.mode, Mode::Rotating { .. })
                && angle_gap(b1.orientation, lattice_angle(b1)) > 1e-12
            {
                v.lattice += 1;
            }
            for b2 in &bodies[i + 1..] {
                if (b2.center - c).norm() < 2.0 * r - TOL {
                    v.penetration += 1;
                }
            }
            for contact in contacts(i, bodies, &spec, &motion).contacts {
                if let ContactKind::Agent(j) = contact.kind {
                    let back = contacts(j, bodies, &spec, &motion);
                    if !back.agents().any(|k| k == i) {
                        v.reciprocity += 1;
                    }
                }
            }
        }
    }
    v
}

#[test]
fn sparse_fuzz_has_no_violations() {
    let cfg = config(ArenaPreset::Large, 6, 11);
    assert!((cfg.density() - 0.05).abs() < 0.005);
    let v = check_run(cfg, 100_000);
    assert_eq!(v.total(), 0, "{v:?}");
}

#[test]
fn crowded_fuzz_has_no_violations() {
    let cfg = config(ArenaPreset::Small, 20, 12);
    assert!((cfg.density() - 0.28).abs() < 0.005);
    let v = check_run(cfg, 100_000);
    assert_eq!(v.total(), 0, "{v:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_configurations_keep_invariants(
        m in 1usize..=25,
        seed in any::<u64>(),
        large in any::<bool>(),
    ) {
        let arena = if large { ArenaPreset::Large } else { ArenaPreset::Small };
        let v = check_run(config(arena, m, seed), 5_000);
        prop_assert_eq!(v.total(), 0, "{:?}", v);
    }
}
