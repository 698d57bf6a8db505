//! Tabular Q-learning kernel.
//!
//! A [`QTable`] holds action-value estimates together with per-pair visit
//! counts; the learning rate for the `k`-th visit of a pair is `1/k`. A
//! [`Policy`] is derived from a table by softmax or ε-greedy improvement.
//! Policy fitness compares per-state values `V(s)`, which by default is the
//! unweighted sum of the row `Q(s, ·)`.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Sensor bitmask: bit `n` is set iff sensor wedge `n` touches something.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct StateId(pub u32);

impl StateId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// `0` moves forward; `n > 0` rotates by `2πn/N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ActionId(pub u32);

impl ActionId {
    pub const FORWARD: ActionId = ActionId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_forward(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Number of states for `n_sectors` binary sensors.
pub fn state_count(n_sectors: usize) -> usize {
    1usize << n_sectors
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlParams {
    /// Discount factor in `[0, 1]`.
    pub gamma: f64,
    /// Softmax temperature, strictly positive.
    pub tau: f64,
    /// ε-greedy exploration rate in `[0, 1]`.
    pub epsilon: f64,
}

impl Default for RlParams {
    fn default() -> Self {
        RlParams {
            gamma: 0.9,
            tau: 0.5,
            epsilon: 0.1,
        }
    }
}

impl RlParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidInput(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tau must be positive and finite, got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidInput(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Dense action-value table with visit counts, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
    visits: Vec<u64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        assert!(n_states > 0 && n_actions > 0, "empty Q-table");
        QTable {
            n_states,
            n_actions,
            q: vec![0.0; n_states * n_actions],
            visits: vec![0; n_states * n_actions],
        }
    }

    /// Table for `n_sectors` sensors: `2^N` states and `N` actions.
    pub fn for_sensors(n_sectors: usize) -> Self {
        QTable::new(state_count(n_sectors), n_sectors)
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    fn idx(&self, s: StateId, a: ActionId) -> usize {
        debug_assert!(s.index() < self.n_states && a.index() < self.n_actions);
        s.index() * self.n_actions + a.index()
    }

    #[inline]
    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.q[self.idx(s, a)]
    }

    pub fn set(&mut self, s: StateId, a: ActionId, value: f64) {
        let i = self.idx(s, a);
        self.q[i] = value;
    }

    #[inline]
    pub fn visits(&self, s: StateId, a: ActionId) -> u64 {
        self.visits[self.idx(s, a)]
    }

    pub fn set_visits(&mut self, s: StateId, a: ActionId, k: u64) {
        let i = self.idx(s, a);
        self.visits[i] = k;
    }

    #[inline]
    pub fn row(&self, s: StateId) -> &[f64] {
        let start = s.index() * self.n_actions;
        &self.q[start..start + self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn visit_counts(&self) -> &[u64] {
        &self.visits
    }

    pub fn same_shape(&self, other: &QTable) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    pub fn all_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite())
    }

    /// Learning rate for the next visit of `(s, a)`: `1 / (k + 1)`.
    ///
    /// Equal to iterating `α ← α / (1 + α)` `k` times from `α = 1`.
    #[inline]
    pub fn alpha_for(&self, s: StateId, a: ActionId) -> f64 {
        1.0 / (self.visits(s, a) as f64 + 1.0)
    }

    /// `max_a Q(s, a)`.
    #[inline]
    pub fn max_value(&self, s: StateId) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, ties broken toward the lowest action id.
    pub fn greedy_action(&self, s: StateId) -> ActionId {
        ActionId(argmax_lowest(self.row(s)) as u32)
    }

    /// One Q-learning backup of `(s, a)` toward `reward + γ max Q(s_next, ·)`.
    ///
    /// The rate comes from [`QTable::alpha_for`] before the visit counter is
    /// incremented, so the first update writes the raw target.
    pub fn update(
        &mut self,
        s: StateId,
        a: ActionId,
        reward: f64,
        s_next: StateId,
        gamma: f64,
    ) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite reward {reward}")));
        }
        if s.index() >= self.n_states || s_next.index() >= self.n_states {
            return Err(Error::InvalidInput(format!(
                "state out of range for {} states",
                self.n_states
            )));
        }
        if a.index() >= self.n_actions {
            return Err(Error::InvalidInput(format!(
                "action {a} out of range for {} actions",
                self.n_actions
            )));
        }
        let alpha = self.alpha_for(s, a);
        let target = reward + gamma * self.max_value(s_next);
        let i = self.idx(s, a);
        self.q[i] += alpha * (target - self.q[i]);
        self.visits[i] += 1;
        Ok(())
    }

    /// `V(s) = Σ_a Q(s, a)`.
    pub fn state_value(&self, s: StateId) -> f64 {
        self.row(s).iter().sum()
    }

    /// Overwrite values and visit counts with `other`'s, reusing storage.
    pub fn copy_from(&mut self, other: &QTable) {
        assert!(self.same_shape(other), "Q-table shape mismatch");
        self.q.copy_from_slice(&other.q);
        self.visits.copy_from_slice(&other.visits);
    }
}

/// Free-function form of [`QTable::update`] taking the full parameter set.
pub fn q_update(
    q: &mut QTable,
    s: StateId,
    a: ActionId,
    reward: f64,
    s_next: StateId,
    params: &RlParams,
) -> Result<()> {
    q.update(s, a, reward, s_next, params.gamma)
}

/// Index of the largest element; ties resolve to the lowest index.
pub(crate) fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Which improvement rule turns a Q-table into a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyKind {
    #[default]
    Softmax,
    EpsilonGreedy,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Softmax => "softmax",
            PolicyKind::EpsilonGreedy => "epsilon_greedy",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(PolicyKind::Softmax),
            "epsilon_greedy" | "epsilon-greedy" => Ok(PolicyKind::EpsilonGreedy),
            other => Err(format!("expected softmax|epsilon_greedy, got `{other}`")),
        }
    }
}

/// Per-state action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    /// Uniform distribution in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Derive the full policy from `q` with the given rule.
    pub fn derive(q: &QTable, kind: PolicyKind, params: &RlParams) -> Result<Self> {
        match kind {
            PolicyKind::Softmax => softmax_policy(q, params.tau),
            PolicyKind::EpsilonGreedy => epsilon_greedy_policy(q, params.epsilon),
        }
    }

    /// Recompute the row for `s` only. Parameters must already be validated.
    pub fn refresh_row(&mut self, q: &QTable, s: StateId, kind: PolicyKind, params: &RlParams) {
        let n = self.n_actions;
        let start = s.index() * n;
        let out = &mut self.probs[start..start + n];
        match kind {
            PolicyKind::Softmax => softmax_row(q.row(s), params.tau, out),
            PolicyKind::EpsilonGreedy => epsilon_greedy_row(q.row(s), params.epsilon, out),
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, s: StateId, a: ActionId) -> f64 {
        self.probs[s.index() * self.n_actions + a.index()]
    }

    #[inline]
    pub fn row(&self, s: StateId) -> &[f64] {
        let start = s.index() * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    pub fn copy_from(&mut self, other: &Policy) {
        assert_eq!(self.probs.len(), other.probs.len(), "policy shape mismatch");
        self.probs.copy_from_slice(&other.probs);
    }
}

fn softmax_row(q: &[f64], tau: f64, out: &mut [f64]) {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(q) {
        *o = ((v - max) / tau).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn epsilon_greedy_row(q: &[f64], epsilon: f64, out: &mut [f64]) {
    let n = q.len() as f64;
    let best = argmax_lowest(q);
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i == best {
            1.0 - epsilon + epsilon / n
        } else {
            epsilon / n
        };
    }
}

/// Boltzmann policy `π(s,a) ∝ exp(Q(s,a)/τ)`, computed with the row maximum
/// subtracted so any finite table yields finite probabilities.
pub fn softmax_policy(q: &QTable, tau: f64) -> Result<Policy> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "softmax temperature must be positive, got {tau}"
        )));
    }
    let mut p = Policy::uniform(q.n_states, q.n_actions);
    for s in 0..q.n_states {
        let s = StateId(s as u32);
        p.refresh_row(
            q,
            s,
            PolicyKind::Softmax,
            &RlParams {
                tau,
                ..RlParams::default()
            },
        );
    }
    Ok(p)
}

/// ε-greedy policy; the greedy action is the lowest-id maximizer.
pub fn epsilon_greedy_policy(q: &QTable, epsilon: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidInput(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    let mut p = Policy::uniform(q.n_states, q.n_actions);
    let params = RlParams {
        epsilon,
        ..RlParams::default()
    };
    for s in 0..q.n_states {
        p.refresh_row(q, StateId(s as u32), PolicyKind::EpsilonGreedy, &params);
    }
    Ok(p)
}

/// How a policy's per-state fitness is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValueFunction {
    /// `V(s) = Σ_a Q(s,a)`.
    #[default]
    Sum,
    /// `V(s) = Σ_a π(s,a) Q(s,a)`.
    PolicyWeighted,
}

impl ValueFunction {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueFunction::Sum => "sum",
            ValueFunction::PolicyWeighted => "weighted",
        }
    }

    pub fn value(self, q: &QTable, policy: &Policy, s: StateId) -> f64 {
        match self {
            ValueFunction::Sum => q.state_value(s),
            ValueFunction::PolicyWeighted => {
                q.row(s).iter().zip(policy.row(s)).map(|(q, p)| q * p).sum()
            }
        }
    }
}

impl std::str::FromStr for ValueFunction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(ValueFunction::Sum),
            "weighted" => Ok(ValueFunction::PolicyWeighted),
            other => Err(format!("expected sum|weighted, got `{other}`")),
        }
    }
}

/// `V(s)`, the unweighted row sum.
pub fn state_value(q: &QTable, s: StateId) -> f64 {
    q.state_value(s)
}

/// `π_a ≥ π_b`: `V_a(s) ≥ V_b(s)` in every state.
pub fn policy_dominates(qa: &QTable, qb: &QTable) -> Result<bool> {
    if !qa.same_shape(qb) {
        return Err(Error::InvalidInput(format!(
            "Q-table dimensions differ: {}x{} vs {}x{}",
            qa.n_states, qa.n_actions, qb.n_states, qb.n_actions
        )));
    }
    Ok((0..qa.n_states).all(|s| {
        let s = StateId(s as u32);
        qa.state_value(s) >= qb.state_value(s)
    }))
}

/// Dominance under an explicit value function. Policies are only consulted
/// for [`ValueFunction::PolicyWeighted`].
pub fn policy_dominates_with(
    vf: ValueFunction,
    (qa, pa): (&QTable, &Policy),
    (qb, pb): (&QTable, &Policy),
) -> Result<bool> {
    if vf == ValueFunction::Sum {
        return policy_dominates(qa, qb);
    }
    if !qa.same_shape(qb) || pa.probs.len() != pb.probs.len() {
        return Err(Error::InvalidInput("table dimensions differ".into()));
    }
    Ok((0..qa.n_states).all(|s| {
        let s = StateId(s as u32);
        vf.value(qa, pa, s) >= vf.value(qb, pb, s)
    }))
}

/// Inverse-CDF draw over ascending action ids; consumes exactly one uniform.
pub fn sample_action<R: Rng + ?Sized>(policy: &Policy, s: StateId, rng: &mut R) -> ActionId {
    let u: f64 = rng.gen();
    let row = policy.row(s);
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return ActionId(i as u32);
        }
    }
    // Rounding left the cumulative sum just below one.
    ActionId(last_nonzero as u32)
}
