//! Disk agents in a square arena.
//!
//! Time advances in fixed ticks. Moving agents translate at a constant speed
//! along their heading; within a tick, contacts are resolved in time-of-impact
//! order so a mover stops exactly at the first contact it makes. Collisions
//! are completely inelastic: every translating participant stops dead, with no
//! rebound and no momentum transfer. Rotation happens in place and is never
//! interrupted (the disks are smooth, so contact cannot apply torque).
//!
//! Headings live on a lattice `θ₀ + 2πn/N`. Bearings are measured
//! counterclockwise from the heading; sensor `n` covers `[2πn/N, 2π(n+1)/N)`.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, AddAssign, Mul, Sub};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rl::StateId;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Vec2 { x: c, y: s }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Densest packing fraction of equal disks in the plane.
const HEX_PACKING: f64 = PI / (2.0 * 1.732_050_807_568_877_2);

/// Total placement attempts before giving up.
pub const PLACEMENT_BUDGET: u64 = 1_000_000;

/// Square arena of side `L` holding `M` disks of radius `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArenaSpec {
    pub side_length: f64,
    pub agent_radius: f64,
    pub agent_count: usize,
}

impl ArenaSpec {
    /// Disk area over arena area, `M πR² / L²`.
    pub fn density(&self) -> f64 {
        self.agent_count as f64 * PI * self.agent_radius * self.agent_radius
            / (self.side_length * self.side_length)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.agent_radius > 0.0 && self.agent_radius.is_finite()) {
            return Err(Error::Config(format!(
                "agent radius must be positive, got {}",
                self.agent_radius
            )));
        }
        if !(self.side_length > 2.0 * self.agent_radius && self.side_length.is_finite()) {
            return Err(Error::Config(format!(
                "arena side {} must exceed twice the agent radius {}",
                self.side_length, self.agent_radius
            )));
        }
        if self.agent_count == 0 {
            return Err(Error::Config("agent_count must be at least 1".into()));
        }
        if self.density() >= HEX_PACKING {
            return Err(Error::Config(format!(
                "density {:.4} exceeds the disk packing bound {:.4}",
                self.density(),
                HEX_PACKING
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams {
    /// Translation per tick.
    pub speed: f64,
    /// Rotation per tick, radians.
    pub angular_speed: f64,
    /// Separation at or below which two objects count as touching.
    pub contact_tolerance: f64,
}

impl MotionParams {
    /// `v = R/10`, `ω = π/20`, `ε_c = R/100`.
    pub fn for_radius(radius: f64) -> Self {
        MotionParams {
            speed: radius / 10.0,
            angular_speed: PI / 20.0,
            contact_tolerance: radius / 100.0,
        }
    }

    pub fn validate(&self, radius: f64) -> Result<()> {
        if !(self.speed > 0.0 && self.speed < radius) {
            return Err(Error::Config(format!(
                "speed must lie in (0, R={radius}), got {}",
                self.speed
            )));
        }
        if !(self.angular_speed > 0.0 && self.angular_speed <= PI / 8.0 + 1e-12) {
            return Err(Error::Config(format!(
                "angular speed must lie in (0, π/8], got {}",
                self.angular_speed
            )));
        }
        if !(self.contact_tolerance > 0.0 && self.contact_tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "contact tolerance must be positive, got {}",
                self.contact_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Idle,
    Moving,
    Rotating {
        /// Heading lattice index reached on completion.
        target: u32,
        /// `+1` counterclockwise, `-1` clockwise.
        direction: i8,
        ticks_left: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentBody {
    pub center: Vec2,
    /// Initial orientation θ₀ in `[0, 2π)`.
    pub base_orientation: f64,
    /// Lattice index `n` of the current (or last completed) heading.
    pub heading: u32,
    /// Current orientation in `[0, 2π)`.
    pub orientation: f64,
    pub mode: Mode,
    pub cumulative_distance: f64,
    n_sectors: u32,
}

impl AgentBody {
    pub fn new(center: Vec2, base_orientation: f64, n_sectors: usize) -> Self {
        let base = wrap_angle(base_orientation);
        AgentBody {
            center,
            base_orientation: base,
            heading: 0,
            orientation: base,
            mode: Mode::Idle,
            cumulative_distance: 0.0,
            n_sectors: n_sectors as u32,
        }
    }

    pub fn n_sectors(&self) -> usize {
        self.n_sectors as usize
    }

    fn lattice_angle(&self, n: u32) -> f64 {
        wrap_angle(self.base_orientation + TAU * n as f64 / self.n_sectors as f64)
    }

    pub fn is_idle(&self) -> bool {
        self.mode == Mode::Idle
    }

    pub fn start_forward(&mut self) {
        self.mode = Mode::Moving;
    }

    /// Begin rotating by `steps · 2π/N` along the shorter arc; a half turn
    /// goes counterclockwise.
    pub fn start_rotation(&mut self, steps: u32, angular_speed: f64) {
        let n = self.n_sectors;
        let steps = steps % n;
        if steps == 0 {
            self.mode = Mode::Idle;
            return;
        }
        let (direction, arc_steps) = if 2 * steps <= n {
            (1i8, steps)
        } else {
            (-1i8, n - steps)
        };
        let arc = TAU * arc_steps as f64 / n as f64;
        let ticks_left = ((arc / angular_speed) - 1e-9).ceil().max(1.0) as u32;
        self.mode = Mode::Rotating {
            target: (self.heading + steps) % n,
            direction,
            ticks_left,
        };
    }

    fn velocity(&self, speed: f64) -> Vec2 {
        Vec2::from_angle(self.orientation) * speed
    }
}

/// Map any angle into `[0, 2π)`.
pub fn wrap_angle(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Sensor wedge containing bearing `phi`: `⌊N·wrap(φ)/2π⌋`, clamped below `N`.
pub fn sector_of(phi: f64, n_sectors: usize) -> usize {
    assert!(n_sectors >= 1, "need at least one sector");
    let wrapped = phi.rem_euclid(TAU);
    let raw = (n_sectors as f64 * wrapped / TAU).floor();
    (raw.max(0.0) as usize).min(n_sectors - 1)
}

/// Rejection-sample `M` non-overlapping agents with uniform random headings.
pub fn place_agents<R: Rng + ?Sized>(
    spec: &ArenaSpec,
    motion: &MotionParams,
    n_sectors: usize,
    rng: &mut R,
) -> Result<Vec<AgentBody>> {
    spec.validate()?;
    let r = spec.agent_radius;
    let gap = motion.contact_tolerance;
    let lo = r + gap;
    let hi = spec.side_length - r - gap;
    if hi <= lo {
        return Err(Error::Config(format!(
            "arena side {} leaves no room for an agent of radius {r}",
            spec.side_length
        )));
    }
    let min_sep_sq = (2.0 * r + gap) * (2.0 * r + gap);
    let mut bodies: Vec<AgentBody> = Vec::with_capacity(spec.agent_count);
    let mut attempts = 0u64;
    while bodies.len() < spec.agent_count {
        if attempts >= PLACEMENT_BUDGET {
            return Err(Error::Config(format!(
                "could not place {} agents at density {:.4} after {PLACEMENT_BUDGET} attempts",
                spec.agent_count,
                spec.density()
            )));
        }
        attempts += 1;
        let c = Vec2::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        if bodies.iter().all(|b| (b.center - c).norm_sq() > min_sep_sq) {
            let theta = rng.gen_range(0.0..TAU);
            bodies.push(AgentBody::new(c, theta, n_sectors));
        }
    }
    Ok(bodies)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactKind {
    Wall,
    Agent(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub kind: ContactKind,
    /// Bearing relative to the agent's orientation, in `[0, 2π)`.
    pub bearing: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactSet {
    pub contacts: Vec<Contact>,
}

impl ContactSet {
    /// OR of the sensor bits of every contact.
    pub fn state(&self, n_sectors: usize) -> StateId {
        let bits = self
            .contacts
            .iter()
            .fold(0u32, |acc, c| acc | (1 << sector_of(c.bearing, n_sectors)));
        StateId(bits)
    }

    /// Touching agents, ascending by index.
    pub fn agents(&self) -> impl Iterator<Item = usize> + '_ {
        self.contacts.iter().filter_map(|c| match c.kind {
            ContactKind::Agent(j) => Some(j),
            ContactKind::Wall => None,
        })
    }
}

// Outward wall normals as world angles: right, top, left, bottom.
const WALL_ANGLES: [f64; 4] = [0.0, PI / 2.0, PI, 3.0 * PI / 2.0];

fn wall_clearances(c: Vec2, spec: &ArenaSpec) -> [f64; 4] {
    let r = spec.agent_radius;
    let l = spec.side_length;
    [l - c.x - r, l - c.y - r, c.x - r, c.y - r]
}

/// Everything touching agent `i`: agents within `2R + ε_c`, walls within `ε_c`.
pub fn contacts(
    i: usize,
    bodies: &[AgentBody],
    spec: &ArenaSpec,
    params: &MotionParams,
) -> ContactSet {
    let me = &bodies[i];
    let mut set = ContactSet::default();
    for (w, clearance) in wall_clearances(me.center, spec).into_iter().enumerate() {
        if clearance <= params.contact_tolerance {
            set.contacts.push(Contact {
                kind: ContactKind::Wall,
                bearing: wrap_angle(WALL_ANGLES[w] - me.orientation),
            });
        }
    }
    let reach = 2.0 * spec.agent_radius + params.contact_tolerance;
    let reach_sq = reach * reach;
    for (j, other) in bodies.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = other.center - me.center;
        if d.norm_sq() <= reach_sq {
            set.contacts.push(Contact {
                kind: ContactKind::Agent(j),
                bearing: wrap_angle(d.angle() - me.orientation),
            });
        }
    }
    set
}

/// The sensor bitmask of agent `i`.
pub fn sense_state(
    i: usize,
    bodies: &[AgentBody],
    spec: &ArenaSpec,
    params: &MotionParams,
) -> StateId {
    contacts(i, bodies, spec, params).state(bodies[i].n_sectors())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Collision,
    RotationComplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollisionEvent {
    pub agent: usize,
    pub kind: EventKind,
}

/// Earliest time in `[0, horizon]` at which `p + w t` reaches length `reach`
/// while approaching, if any.
fn contact_time(p: Vec2, w: Vec2, reach: f64, horizon: f64) -> Option<f64> {
    let b = p.dot(w);
    if b >= 0.0 {
        return None;
    }
    let c = p.norm_sq() - reach * reach;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = w.norm_sq();
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    // Stable form of the smaller root of a t² + 2b t + c.
    let t = c / (-b + disc.sqrt());
    (t <= horizon).then_some(t)
}

/// Advance the world one tick. Returns at most one event per agent, in
/// ascending agent order.
pub fn step_bodies(
    bodies: &mut [AgentBody],
    spec: &ArenaSpec,
    params: &MotionParams,
    tick: u64,
) -> Result<Vec<CollisionEvent>> {
    let n = bodies.len();
    let mut kinds: Vec<Option<EventKind>> = vec![None; n];

    for (i, body) in bodies.iter_mut().enumerate() {
        if let Mode::Rotating {
            target,
            direction,
            ticks_left,
        } = body.mode
        {
            if ticks_left <= 1 {
                body.heading = target;
                body.orientation = body.lattice_angle(target);
                body.mode = Mode::Idle;
                kinds[i] = Some(EventKind::RotationComplete);
            } else {
                body.orientation =
                    wrap_angle(body.orientation + direction as f64 * params.angular_speed);
                body.mode = Mode::Rotating {
                    target,
                    direction,
                    ticks_left: ticks_left - 1,
                };
            }
        }
    }

    translate(bodies, spec, params, &mut kinds);
    separate(bodies, spec, tick)?;

    Ok(kinds
        .into_iter()
        .enumerate()
        .filter_map(|(agent, kind)| kind.map(|kind| CollisionEvent { agent, kind }))
        .collect())
}

fn translate(
    bodies: &mut [AgentBody],
    spec: &ArenaSpec,
    params: &MotionParams,
    kinds: &mut [Option<EventKind>],
) {
    let n = bodies.len();
    let r = spec.agent_radius;
    let l = spec.side_length;
    let reach = 2.0 * r;
    let v = params.speed;
    let mut velocities: Vec<Vec2> = bodies
        .iter()
        .map(|b| {
            if b.mode == Mode::Moving {
                b.velocity(v)
            } else {
                Vec2::default()
            }
        })
        .collect();
    // Movers sit at `origin + vel·t` for the fraction `t` of the tick
    // elapsed so far. Positions and wall contact times are computed from the
    // tick's origin rather than accumulated, so an agent's path does not
    // depend on how many unrelated contacts split the tick.
    let origins: Vec<(Vec2, f64)> = bodies
        .iter()
        .map(|b| (b.center, b.cumulative_distance))
        .collect();
    let mut elapsed = 0.0f64;
    // Each pass stops at least one mover.
    let mut hits: Vec<(usize, Option<usize>, Option<usize>)> = Vec::new();
    loop {
        let remaining = 1.0 - elapsed;
        let mut t_hit = f64::INFINITY;
        hits.clear();
        let mut consider = |t: f64, i: usize, other: Option<usize>, wall: Option<usize>| {
            if t < t_hit - 1e-12 {
                t_hit = t;
                hits.clear();
            }
            if t <= t_hit + 1e-12 {
                hits.push((i, other, wall));
            }
        };
        let mut any_moving = false;
        for i in 0..n {
            if bodies[i].mode != Mode::Moving {
                continue;
            }
            any_moving = true;
            let c = bodies[i].center;
            let c0 = origins[i].0;
            let vel = velocities[i];
            let wall_gaps = [
                (vel.x, l - r - c0.x),
                (vel.y, l - r - c0.y),
                (-vel.x, c0.x - r),
                (-vel.y, c0.y - r),
            ];
            for (w, (toward, gap)) in wall_gaps.into_iter().enumerate() {
                if toward > 0.0 {
                    let t = (gap / toward).max(elapsed);
                    if t <= 1.0 {
                        consider(t, i, None, Some(w));
                    }
                }
            }
            let travel = 2.0 * v * remaining + 1e-9;
            let near_sq = (reach + travel) * (reach + travel);
            for j in 0..n {
                if j == i || (bodies[j].mode == Mode::Moving && j < i) {
                    continue;
                }
                let p = bodies[j].center - c;
                if p.norm_sq() > near_sq {
                    continue;
                }
                let w = velocities[j] - vel;
                if let Some(t) = contact_time(p, w, reach, remaining) {
                    consider(elapsed + t, i, Some(j), None);
                }
            }
        }
        if !any_moving || hits.is_empty() {
            advance_to(bodies, &origins, &velocities, 1.0, v);
            break;
        }
        elapsed = t_hit.clamp(elapsed, 1.0);
        advance_to(bodies, &origins, &velocities, elapsed, v);
        for &(i, other, wall) in &hits {
            if let Some(w) = wall {
                // Land exactly on the wall.
                let c = &mut bodies[i].center;
                match w {
                    0 => c.x = c.x.min(l - r),
                    1 => c.y = c.y.min(l - r),
                    2 => c.x = c.x.max(r),
                    _ => c.y = c.y.max(r),
                }
            }
            for k in std::iter::once(i).chain(other) {
                match bodies[k].mode {
                    Mode::Moving | Mode::Idle => {
                        bodies[k].mode = Mode::Idle;
                        velocities[k] = Vec2::default();
                        kinds[k] = Some(EventKind::Collision);
                    }
                    Mode::Rotating { .. } => {}
                }
            }
        }
        if elapsed >= 1.0 {
            break;
        }
    }
}

/// Place every mover at the point it reaches after fraction `t` of the tick.
fn advance_to(
    bodies: &mut [AgentBody],
    origins: &[(Vec2, f64)],
    velocities: &[Vec2],
    t: f64,
    speed: f64,
) {
    for ((b, &(c0, d0)), &vel) in bodies.iter_mut().zip(origins).zip(velocities) {
        if b.mode == Mode::Moving {
            b.center = c0 + vel * t;
            b.cumulative_distance = d0 + speed * t;
        }
    }
}

const MAX_SEPARATION_PASSES: usize = 32;
const OVERLAP_SLACK: f64 = 1e-10;

/// Clean up floating-point residue from contact resolution: clamp into the
/// arena and push apart any pair that overlaps beyond a tiny slack.
fn separate(bodies: &mut [AgentBody], spec: &ArenaSpec, tick: u64) -> Result<()> {
    let r = spec.agent_radius;
    let l = spec.side_length;
    let reach = 2.0 * r;
    for pass in 0..=MAX_SEPARATION_PASSES {
        let mut clean = true;
        for b in bodies.iter_mut() {
            b.center.x = b.center.x.clamp(r, l - r);
            b.center.y = b.center.y.clamp(r, l - r);
        }
        for i in 0..bodies.len() {
            for j in i + 1..bodies.len() {
                let d = bodies[j].center - bodies[i].center;
                let dist = d.norm();
                let overlap = reach - dist;
                if overlap > OVERLAP_SLACK {
                    clean = false;
                    if pass == MAX_SEPARATION_PASSES {
                        return Err(Error::Physics {
                            tick,
                            message: format!(
                                "agents {i} and {j} overlap by {overlap:e} after {MAX_SEPARATION_PASSES} separation passes"
                            ),
                        });
                    }
                    let dir = if dist > 0.0 {
                        d * (1.0 / dist)
                    } else {
                        Vec2::new(1.0, 0.0)
                    };
                    let push = dir * (overlap / 2.0);
                    bodies[i].center = bodies[i].center - push;
                    bodies[j].center += push;
                }
            }
        }
        if clean {
            return Ok(());
        }
    }
    Ok(())
}
