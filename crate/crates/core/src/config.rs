//! Flat `key=value` configuration files and run manifests.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; absent keys take the [`SimConfig`] defaults, with the motion
//! constants following the agent radius (`v = R/10`, `ε_c = R/100`) unless
//! given explicitly. A manifest written by [`write_manifest`] parses back to
//! the same configuration.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::engine::SimConfig;
use crate::error::{Error, Result};
use crate::rl::{PolicyKind, ValueFunction};

/// Every key accepted in a run configuration, in manifest order.
pub const CONFIG_KEYS: &[&str] = &[
    "side_length",
    "agent_radius",
    "agent_count",
    "speed",
    "angular_speed",
    "contact_tolerance",
    "gamma",
    "tau",
    "epsilon",
    "reward_c",
    "reward_k",
    "share_p",
    "share_enabled",
    "fitness",
    "n_sectors",
    "policy_kind",
    "max_ticks",
    "seed",
    "metrics_stride",
    "wide_metrics",
];

/// Version string recorded in manifests.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One non-comment line of a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Split `text` into entries, rejecting lines without `=` and repeated keys.
pub fn entries(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::ConfigSyntax {
                path: origin.to_string(),
                line,
                key: trimmed.to_string(),
                message: "expected `key=value`".into(),
            });
        };
        let key = key.trim().to_string();
        if !seen.insert(key.clone()) {
            return Err(Error::ConfigSyntax {
                path: origin.to_string(),
                line,
                key,
                message: "key given more than once".into(),
            });
        }
        out.push(Entry {
            line,
            key,
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

fn syntax(origin: &str, e: &Entry, message: String) -> Error {
    Error::ConfigSyntax {
        path: origin.to_string(),
        line: e.line,
        key: e.key.clone(),
        message,
    }
}

fn parse_as<T: FromStr>(origin: &str, e: &Entry, expected: &str) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| syntax(origin, e, format!("expected {expected}, got `{}`", e.value)))
}

fn parse_real(origin: &str, e: &Entry) -> Result<f64> {
    let v: f64 = parse_as(origin, e, "a real number")?;
    if !v.is_finite() {
        return Err(syntax(
            origin,
            e,
            format!("expected a finite real, got `{}`", e.value),
        ));
    }
    Ok(v)
}

fn parse_bool(origin: &str, e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(syntax(
            origin,
            e,
            format!("expected a boolean, got `{other}`"),
        )),
    }
}

fn in_range(origin: &str, e: &Entry, v: f64, lo: f64, hi: f64) -> Result<f64> {
    if (lo..=hi).contains(&v) {
        Ok(v)
    } else {
        Err(syntax(
            origin,
            e,
            format!("value {v} out of range [{lo}, {hi}]"),
        ))
    }
}

fn positive(origin: &str, e: &Entry, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(syntax(origin, e, format!("value {v} must be positive")))
    }
}

/// Build a configuration from entries. Keys outside [`CONFIG_KEYS`] are
/// rejected.
pub fn config_from_entries(entries: &[Entry], origin: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    let mut speed = None;
    let mut contact = None;
    for e in entries {
        match e.key.as_str() {
            "side_length" => cfg.arena.side_length = positive(origin, e, parse_real(origin, e)?)?,
            "agent_radius" => cfg.arena.agent_radius = positive(origin, e, parse_real(origin, e)?)?,
            "agent_count" => cfg.arena.agent_count = parse_as(origin, e, "a non-negative integer")?,
            "speed" => speed = Some(positive(origin, e, parse_real(origin, e)?)?),
            "angular_speed" => {
                cfg.motion.angular_speed = positive(origin, e, parse_real(origin, e)?)?
            }
            "contact_tolerance" => contact = Some(positive(origin, e, parse_real(origin, e)?)?),
            "gamma" => cfg.rl.gamma = in_range(origin, e, parse_real(origin, e)?, 0.0, 1.0)?,
            "tau" => cfg.rl.tau = positive(origin, e, parse_real(origin, e)?)?,
            "epsilon" => cfg.rl.epsilon = in_range(origin, e, parse_real(origin, e)?, 0.0, 1.0)?,
            "reward_c" => cfg.reward.c = positive(origin, e, parse_real(origin, e)?)?,
            "reward_k" => cfg.reward.k_gain = positive(origin, e, parse_real(origin, e)?)?,
            "share_p" => cfg.share.p = in_range(origin, e, parse_real(origin, e)?, 0.0, 1.0)?,
            "share_enabled" => cfg.share_enabled = parse_bool(origin, e)?,
            "fitness" => {
                cfg.share.fitness =
                    ValueFunction::from_str(&e.value).map_err(|m| syntax(origin, e, m))?
            }
            "n_sectors" => cfg.n_sectors = parse_as(origin, e, "a non-negative integer")?,
            "policy_kind" => {
                cfg.policy_kind =
                    PolicyKind::from_str(&e.value).map_err(|m| syntax(origin, e, m))?
            }
            "max_ticks" => cfg.max_ticks = parse_as(origin, e, "a non-negative integer")?,
            "seed" => cfg.seed = parse_as(origin, e, "a non-negative integer")?,
            "metrics_stride" => cfg.metrics_stride = parse_as(origin, e, "a non-negative integer")?,
            "wide_metrics" => cfg.wide_metrics = parse_bool(origin, e)?,
            _ => return Err(syntax(origin, e, "unknown key".into())),
        }
    }
    let radius = cfg.arena.agent_radius;
    cfg.motion.speed = speed.unwrap_or(radius / 10.0);
    cfg.motion.contact_tolerance = contact.unwrap_or(radius / 100.0);
    cfg.validate()?;
    Ok(cfg)
}

/// Parse configuration text; `origin` names the source in error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<SimConfig> {
    config_from_entries(&entries(text, origin)?, origin)
}

/// Read and parse a configuration file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, &path.display().to_string())
}

/// Render every configuration field as `key=value`, preceded by comment
/// lines with the code version and the derived density.
pub fn manifest_string(cfg: &SimConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# code_version={CODE_VERSION}");
    let _ = writeln!(s, "# rho={}", cfg.density());
    for key in CONFIG_KEYS {
        let value = match *key {
            "side_length" => cfg.arena.side_length.to_string(),
            "agent_radius" => cfg.arena.agent_radius.to_string(),
            "agent_count" => cfg.arena.agent_count.to_string(),
            "speed" => cfg.motion.speed.to_string(),
            "angular_speed" => cfg.motion.angular_speed.to_string(),
            "contact_tolerance" => cfg.motion.contact_tolerance.to_string(),
            "gamma" => cfg.rl.gamma.to_string(),
            "tau" => cfg.rl.tau.to_string(),
            "epsilon" => cfg.rl.epsilon.to_string(),
            "reward_c" => cfg.reward.c.to_string(),
            "reward_k" => cfg.reward.k_gain.to_string(),
            "share_p" => cfg.share.p.to_string(),
            "share_enabled" => cfg.share_enabled.to_string(),
            "fitness" => cfg.share.fitness.as_str().to_string(),
            "n_sectors" => cfg.n_sectors.to_string(),
            "policy_kind" => cfg.policy_kind.as_str().to_string(),
            "max_ticks" => cfg.max_ticks.to_string(),
            "seed" => cfg.seed.to_string(),
            "metrics_stride" => cfg.metrics_stride.to_string(),
            "wide_metrics" => cfg.wide_metrics.to_string(),
            other => unreachable!("manifest key {other} has no field"),
        };
        let _ = writeln!(s, "{key}={value}");
    }
    s
}

pub fn write_manifest(path: impl AsRef<Path>, cfg: &SimConfig) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest_string(cfg)).map_err(|e| Error::io(path, e))
}
