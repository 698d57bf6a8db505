//! Contact-triggered policy sharing.
//!
//! After each event an agent broadcasts with probability `p` to every agent
//! touching it. A neighbor whose policy the broadcaster's dominates (value at
//! least as high in every state) replaces its Q-table, visit counts and policy
//! with exact copies of the broadcaster's.

use rand::Rng;

use crate::engine::AgentMind;
use crate::error::{Error, Result};
use crate::rl::{policy_dominates_with, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShareParams {
    /// Broadcast probability per event.
    pub p: f64,
    /// Fitness used for the dominance gate.
    pub fitness: ValueFunction,
}

impl ShareParams {
    pub fn new(p: f64) -> Self {
        ShareParams {
            p,
            fitness: ValueFunction::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "share_p must lie in [0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BroadcastRecord {
    pub tick: u64,
    pub source: usize,
    /// Whether the broadcast draw succeeded.
    pub fired: bool,
    pub recipients: Vec<usize>,
    /// Subset of `recipients` that took the source's policy.
    pub assimilated: Vec<usize>,
}

/// Borrow two distinct elements mutably; `a` is returned shared.
fn pair_mut<T>(items: &mut [T], a: usize, b: usize) -> (&T, &mut T) {
    assert_ne!(a, b, "agent cannot share with itself");
    if a < b {
        let (lo, hi) = items.split_at_mut(b);
        (&lo[a], &mut hi[0])
    } else {
        let (lo, hi) = items.split_at_mut(a);
        (&hi[0], &mut lo[b])
    }
}

/// One broadcast opportunity for `source`.
///
/// Always consumes exactly one uniform draw from `rng`. `neighbors` are the
/// agents touching the source; they are visited in ascending index order.
pub fn maybe_broadcast<R: Rng + ?Sized>(
    source: usize,
    neighbors: &[usize],
    agents: &mut [AgentMind],
    params: &ShareParams,
    rng: &mut R,
    tick: u64,
) -> Result<BroadcastRecord> {
    let draw: f64 = rng.gen();
    let mut record = BroadcastRecord {
        tick,
        source,
        fired: draw < params.p,
        ..BroadcastRecord::default()
    };
    if !record.fired {
        return Ok(record);
    }
    let mut order = neighbors.to_vec();
    order.sort_unstable();
    order.dedup();
    for b in order {
        if b == source {
            continue;
        }
        record.recipients.push(b);
        let (src, dst) = pair_mut(agents, source, b);
        let dominates =
            policy_dominates_with(params.fitness, (&src.q, &src.policy), (&dst.q, &dst.policy))?;
        if dominates {
            dst.q.copy_from(&src.q);
            dst.policy.copy_from(&src.policy);
            record.assimilated.push(b);
        }
    }
    Ok(record)
}
