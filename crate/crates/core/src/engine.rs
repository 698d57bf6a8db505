//! The event-driven simulation loop.
//!
//! Each tick advances the physics; every agent that finished its action this
//! tick (a collision or a completed rotation) then, in ascending index order,
//! senses its new state, learns from the reward `−C + k·D` of the finished
//! action, refreshes its policy row, offers its policy to touching agents and
//! starts a freshly sampled action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arena::{
    contacts, place_agents, step_bodies, AgentBody, ArenaSpec, EventKind, MotionParams,
};
use crate::error::{Error, Result};
use crate::rl::{sample_action, ActionId, Policy, PolicyKind, QTable, RlParams, StateId};
use crate::sharing::{maybe_broadcast, ShareParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    /// Cost `C` charged for every action.
    pub c: f64,
    /// Gain `k` per unit distance travelled.
    pub k_gain: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            c: 1.0,
            k_gain: 0.1,
        }
    }
}

impl RewardParams {
    pub fn reward(&self, distance: f64) -> f64 {
        -self.c + self.k_gain * distance
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!(
                "reward_c must be positive, got {}",
                self.c
            )));
        }
        if !(self.k_gain > 0.0 && self.k_gain.is_finite()) {
            return Err(Error::Config(format!(
                "reward_k must be positive, got {}",
                self.k_gain
            )));
        }
        Ok(())
    }
}

/// Full parameterization of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub arena: ArenaSpec,
    pub motion: MotionParams,
    pub rl: RlParams,
    pub reward: RewardParams,
    pub share: ShareParams,
    /// When false the broadcast step is skipped; one uniform is still drawn
    /// per event so the random streams line up with a `p = 0` run.
    pub share_enabled: bool,
    pub n_sectors: usize,
    pub policy_kind: PolicyKind,
    pub max_ticks: u64,
    pub seed: u64,
    pub metrics_stride: u64,
    /// Append mean-policy columns to the metrics.
    pub wide_metrics: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let radius = 10.0;
        SimConfig {
            arena: ArenaSpec {
                side_length: 150.0,
                agent_radius: radius,
                agent_count: 10,
            },
            motion: MotionParams::for_radius(radius),
            rl: RlParams::default(),
            reward: RewardParams::default(),
            share: ShareParams::default(),
            share_enabled: true,
            n_sectors: 4,
            policy_kind: PolicyKind::Softmax,
            max_ticks: 2_000_000,
            seed: 1,
            metrics_stride: 1000,
            wide_metrics: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.arena.validate()?;
        self.motion.validate(self.arena.agent_radius)?;
        self.rl
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.reward.validate()?;
        self.share.validate()?;
        if !(2..=16).contains(&self.n_sectors) {
            return Err(Error::Config(format!(
                "n_sectors must lie in [2, 16], got {}",
                self.n_sectors
            )));
        }
        if self.max_ticks == 0 {
            return Err(Error::Config("max_ticks must be positive".into()));
        }
        if self.metrics_stride == 0 {
            return Err(Error::Config("metrics_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn density(&self) -> f64 {
        self.arena.density()
    }

    /// Longest a single action may take: a corner-to-corner crossing plus a
    /// half turn.
    pub fn event_watchdog(&self) -> u64 {
        let crossing =
            (std::f64::consts::SQRT_2 * self.arena.side_length / self.motion.speed).ceil();
        let turn = (std::f64::consts::TAU / self.motion.angular_speed).ceil();
        (crossing + turn) as u64 + 1
    }
}

/// The state-action pair awaiting its event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pending {
    pub state: StateId,
    pub action: ActionId,
    pub distance_at_start: f64,
    pub started_tick: u64,
    /// False for the bootstrap action, whose event closes without an update.
    pub learn: bool,
}

/// One agent's learner.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMind {
    pub q: QTable,
    pub policy: Policy,
    pub pending: Option<Pending>,
}

impl AgentMind {
    pub fn new(n_sectors: usize, kind: PolicyKind, params: &RlParams) -> Result<Self> {
        let q = QTable::for_sensors(n_sectors);
        let policy = Policy::derive(&q, kind, params)?;
        Ok(AgentMind {
            q,
            policy,
            pending: None,
        })
    }

    pub fn from_parts(q: QTable, policy: Policy) -> Self {
        AgentMind {
            q,
            policy,
            pending: None,
        }
    }
}

/// Fraction of agents agreeing with the modal greedy action, averaged over
/// all states. Mode ties go to the lowest action id.
pub fn coordination_score<'a, I>(tables: I) -> f64
where
    I: IntoIterator<Item = &'a QTable>,
{
    let tables: Vec<&QTable> = tables.into_iter().collect();
    let Some(first) = tables.first() else {
        return 0.0;
    };
    let (n_states, n_actions) = (first.n_states(), first.n_actions());
    let mut counts = vec![0usize; n_actions];
    let mut total = 0.0;
    for s in 0..n_states {
        counts.iter_mut().for_each(|c| *c = 0);
        for q in &tables {
            counts[q.greedy_action(StateId(s as u32)).index()] += 1;
        }
        let modal = counts.iter().copied().max().unwrap_or(0);
        total += modal as f64 / tables.len() as f64;
    }
    total / n_states as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub tick: u64,
    pub mean_distance: f64,
    /// Mean distance gained per tick since the previous row.
    pub mean_velocity: f64,
    pub events: u64,
    pub broadcasts: u64,
    pub assimilations: u64,
    pub coordination: f64,
    /// Population-mean policy, state-major; present for wide metrics.
    pub mean_policy: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsSeries {
    pub n_sectors: usize,
    pub rows: Vec<MetricsRow>,
}

impl MetricsSeries {
    pub fn ticks(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.tick as f64).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_distance).collect()
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

/// Running totals over a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub events: u64,
    pub updates: u64,
    pub broadcasts: u64,
    pub assimilations: u64,
}

/// What happened to one agent at its event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventOutcome {
    pub agent: usize,
    pub kind: EventKind,
    /// The finished action and its reward, when it was learned from.
    pub learned: Option<(StateId, ActionId, f64)>,
    pub next_state: StateId,
    pub next_action: ActionId,
    pub fired: bool,
    pub assimilated: Vec<usize>,
}

/// A running simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    bodies: Vec<AgentBody>,
    minds: Vec<AgentMind>,
    rngs: Vec<ChaCha8Rng>,
    tick: u64,
    stats: RunStats,
    last_row_distance: f64,
    last_row_tick: u64,
    watchdog: u64,
}

/// Stream 0 places agents; agent `i` draws from stream `i + 1`.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Simulation {
    /// Place the agents and start every agent's first action.
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let mut placement = stream(config.seed, 0);
        let bodies = place_agents(
            &config.arena,
            &config.motion,
            config.n_sectors,
            &mut placement,
        )?;
        Self::with_bodies(config, bodies)
    }

    /// Start from an explicit layout instead of random placement.
    pub fn with_bodies(config: SimConfig, bodies: Vec<AgentBody>) -> Result<Self> {
        config.validate()?;
        if bodies.len() != config.arena.agent_count {
            return Err(Error::Config(format!(
                "expected {} bodies, got {}",
                config.arena.agent_count,
                bodies.len()
            )));
        }
        let minds = (0..bodies.len())
            .map(|_| AgentMind::new(config.n_sectors, config.policy_kind, &config.rl))
            .collect::<Result<Vec<_>>>()?;
        let rngs = (0..bodies.len())
            .map(|i| stream(config.seed, i as u64 + 1))
            .collect();
        let watchdog = config.event_watchdog();
        let mut sim = Simulation {
            config,
            bodies,
            minds,
            rngs,
            tick: 0,
            stats: RunStats::default(),
            last_row_distance: 0.0,
            last_row_tick: 0,
            watchdog,
        };
        for i in 0..sim.bodies.len() {
            let s = sim.sense(i).0;
            sim.begin_action(i, s, false);
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn bodies(&self) -> &[AgentBody] {
        &self.bodies
    }

    pub fn minds(&self) -> &[AgentMind] {
        &self.minds
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn mean_distance(&self) -> f64 {
        self.bodies
            .iter()
            .map(|b| b.cumulative_distance)
            .sum::<f64>()
            / self.bodies.len() as f64
    }

    pub fn coordination(&self) -> f64 {
        coordination_score(self.minds.iter().map(|m| &m.q))
    }

    fn sense(&self, i: usize) -> (StateId, Vec<usize>) {
        let set = contacts(i, &self.bodies, &self.config.arena, &self.config.motion);
        (set.state(self.config.n_sectors), set.agents().collect())
    }

    fn begin_action(&mut self, i: usize, s: StateId, learn: bool) -> ActionId {
        let a = sample_action(&self.minds[i].policy, s, &mut self.rngs[i]);
        let body = &mut self.bodies[i];
        self.minds[i].pending = Some(Pending {
            state: s,
            action: a,
            distance_at_start: body.cumulative_distance,
            started_tick: self.tick,
            learn,
        });
        if a.is_forward() {
            body.start_forward();
        } else {
            body.start_rotation(a.0, self.config.motion.angular_speed);
        }
        a
    }

    /// Advance one tick and process its events.
    pub fn step(&mut self) -> Result<Vec<EventOutcome>> {
        self.tick += 1;
        let tick = self.tick;
        let events = step_bodies(
            &mut self.bodies,
            &self.config.arena,
            &self.config.motion,
            tick,
        )?;
        let mut outcomes = Vec::with_capacity(events.len());
        for ev in events {
            outcomes.push(self.handle_event(ev.agent, ev.kind)?);
        }
        for (i, mind) in self.minds.iter().enumerate() {
            if let Some(p) = mind.pending {
                let waited = tick - p.started_tick;
                if waited > self.watchdog {
                    return Err(Error::Watchdog {
                        agent: i,
                        tick,
                        waited,
                        limit: self.watchdog,
                    });
                }
            }
        }
        Ok(outcomes)
    }

    fn handle_event(&mut self, i: usize, kind: EventKind) -> Result<EventOutcome> {
        let tick = self.tick;
        self.stats.events += 1;
        let (s_next, neighbors) = self.sense(i);
        let cfg = &self.config;

        let mut learned = None;
        if let Some(p) = self.minds[i].pending.take() {
            if p.learn {
                let distance = self.bodies[i].cumulative_distance - p.distance_at_start;
                let reward = cfg.reward.reward(distance);
                let mind = &mut self.minds[i];
                mind.q
                    .update(p.state, p.action, reward, s_next, cfg.rl.gamma)?;
                if !mind.q.row(p.state).iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { agent: i, tick });
                }
                mind.policy
                    .refresh_row(&mind.q, p.state, cfg.policy_kind, &cfg.rl);
                self.stats.updates += 1;
                learned = Some((p.state, p.action, reward));
            }
        }

        let (fired, assimilated) = if cfg.share_enabled {
            let rec = maybe_broadcast(
                i,
                &neighbors,
                &mut self.minds,
                &cfg.share,
                &mut self.rngs[i],
                tick,
            )?;
            (rec.fired, rec.assimilated)
        } else {
            let _: f64 = self.rngs[i].gen();
            (false, Vec::new())
        };
        if fired {
            self.stats.broadcasts += 1;
        }
        self.stats.assimilations += assimilated.len() as u64;

        let next_action = self.begin_action(i, s_next, true);
        Ok(EventOutcome {
            agent: i,
            kind,
            learned,
            next_state: s_next,
            next_action,
            fired,
            assimilated,
        })
    }

    /// Snapshot the current metrics, windowed since the previous snapshot.
    pub fn metrics_row(&mut self) -> MetricsRow {
        let mean_distance = self.mean_distance();
        let window = (self.tick - self.last_row_tick).max(1);
        let mean_velocity = (mean_distance - self.last_row_distance) / window as f64;
        self.last_row_distance = mean_distance;
        self.last_row_tick = self.tick;
        let mean_policy = self.config.wide_metrics.then(|| self.mean_policy());
        MetricsRow {
            tick: self.tick,
            mean_distance,
            mean_velocity,
            events: self.stats.events,
            broadcasts: self.stats.broadcasts,
            assimilations: self.stats.assimilations,
            coordination: self.coordination(),
            mean_policy,
        }
    }

    fn mean_policy(&self) -> Vec<f64> {
        let n_states = crate::rl::state_count(self.config.n_sectors);
        let n_actions = self.config.n_sectors;
        let mut out = vec![0.0; n_states * n_actions];
        for m in &self.minds {
            for s in 0..n_states {
                for (a, p) in m.policy.row(StateId(s as u32)).iter().enumerate() {
                    out[s * n_actions + a] += p;
                }
            }
        }
        let m = self.minds.len() as f64;
        out.iter_mut().for_each(|v| *v /= m);
        out
    }

    /// Run to `max_ticks`, recording a row every `metrics_stride` ticks and
    /// at the final tick.
    #[allow(clippy::manual_is_multiple_of)] // keeps the 1.75 MSRV
    pub fn run_to_end(&mut self) -> Result<MetricsSeries> {
        let mut series = MetricsSeries {
            n_sectors: self.config.n_sectors,
            rows: Vec::with_capacity(
                (self.config.max_ticks / self.config.metrics_stride) as usize + 1,
            ),
        };
        while self.tick < self.config.max_ticks {
            self.step()?;
            if self.tick % self.config.metrics_stride == 0 || self.tick == self.config.max_ticks {
                series.rows.push(self.metrics_row());
            }
        }
        Ok(series)
    }
}

/// Execute one full run.
pub fn run(config: &SimConfig) -> Result<MetricsSeries> {
    Simulation::new(config.clone())?.run_to_end()
}
