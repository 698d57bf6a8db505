//! Multi-agent tabular Q-learning in a square arena of disk-shaped agents,
//! with optional contact-triggered policy sharing.

pub mod analysis;
pub mod arena;
pub mod config;
pub mod engine;
pub mod error;
pub mod io;
pub mod rl;
pub mod sharing;
pub mod sweep;

pub use analysis::{ConvergenceParams, ConvergenceReport, TailFit};
pub use arena::{ArenaSpec, MotionParams};
pub use config::{parse_config, write_manifest};
pub use engine::{run, MetricsRow, MetricsSeries, RewardParams, SimConfig, Simulation};
pub use error::{Error, Result};
pub use rl::{ActionId, Policy, PolicyKind, QTable, RlParams, StateId, ValueFunction};
pub use sharing::ShareParams;
pub use sweep::{run_sweep, AggregateRow, ArenaPreset, SweepSpec};
