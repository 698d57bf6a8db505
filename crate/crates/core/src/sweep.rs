//! Parameter sweeps: the Cartesian product of sharing probability, agent
//! count, arena, policy kind and seed, run in parallel with deterministic
//! output.
//!
//! Each cell writes `metrics.csv` and `manifest.txt` into its own directory
//! under the output root; the root gets one `aggregate.csv` with a row per
//! cell, sorted by cell key.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::analysis::{analyze_series, ConvergenceParams, ConvergenceReport};
use crate::config::{config_from_entries, entries, parse_config, write_manifest, Entry};
use crate::engine::{run, SimConfig};
use crate::error::{Error, Result};
use crate::io::{fmt9, read_metrics_csv, write_metrics_csv};
use crate::rl::PolicyKind;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub const AGGREGATE_COLUMNS: [&str; 12] = [
    "rho",
    "p",
    "arena",
    "seed",
    "threshold_tick",
    "terminal_speed",
    "converged",
    "coordination_final",
    "agents",
    "policy",
    "re_entries",
    "status",
];

/// The two arena sizes, both with `R = 10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArenaPreset {
    /// `L = 150`, `L/R = 15`.
    Small,
    /// `L = 200`, `L/R = 20`.
    Large,
}

impl ArenaPreset {
    pub const RADIUS: f64 = 10.0;

    pub fn side_length(self) -> f64 {
        match self {
            ArenaPreset::Small => 150.0,
            ArenaPreset::Large => 200.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArenaPreset::Small => "small",
            ArenaPreset::Large => "large",
        }
    }

    /// Set the arena geometry and the radius-dependent motion constants.
    pub fn apply(self, cfg: &mut SimConfig) {
        cfg.arena.side_length = self.side_length();
        if cfg.arena.agent_radius != Self::RADIUS {
            cfg.arena.agent_radius = Self::RADIUS;
            cfg.motion = crate::arena::MotionParams::for_radius(Self::RADIUS);
        }
    }

    /// The preset matching a configuration, if any.
    pub fn of(cfg: &SimConfig) -> Option<Self> {
        [ArenaPreset::Small, ArenaPreset::Large]
            .into_iter()
            .find(|a| {
                cfg.arena.side_length == a.side_length() && cfg.arena.agent_radius == Self::RADIUS
            })
    }
}

impl fmt::Display for ArenaPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArenaPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "small" => Ok(ArenaPreset::Small),
            "large" => Ok(ArenaPreset::Large),
            other => Err(format!("expected small|large, got `{other}`")),
        }
    }
}

fn arena_label(cfg: &SimConfig) -> String {
    match ArenaPreset::of(cfg) {
        Some(a) => a.as_str().to_string(),
        None => format!("L{}", cfg.arena.side_length),
    }
}

/// A sweep: a base configuration and one value list per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub p: Vec<f64>,
    pub agents: Vec<usize>,
    pub arenas: Vec<ArenaPreset>,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    /// Upper bound on the number of cells.
    pub max_cells: usize,
}

pub const DEFAULT_MAX_CELLS: usize = 10_000;

/// Names accepted by [`SweepSpec::preset`].
pub const PRESETS: &[&str] = &["small-arena", "large-arena", "desk", "algorithms"];

impl SweepSpec {
    /// A single cell equal to `base`.
    pub fn single(base: SimConfig) -> Self {
        SweepSpec {
            p: vec![base.share.p],
            agents: vec![base.arena.agent_count],
            arenas: ArenaPreset::of(&base).into_iter().collect(),
            policies: vec![base.policy_kind],
            seeds: vec![base.seed],
            base,
            max_cells: DEFAULT_MAX_CELLS,
        }
    }

    /// Built-in grids.
    ///
    /// * `small-arena`: `L/R = 15`, up to 25 agents.
    /// * `large-arena`: `L/R = 20`, up to 50 agents.
    /// * `desk`: the small arena at a sparse (3 agents) and a crowded
    ///   (20 agents) density, the grid the acceptance suite runs.
    /// * `algorithms`: softmax against ε-greedy, sparse small arena, no sharing.
    pub fn preset(name: &str) -> Result<Self> {
        let base = SimConfig::default();
        let all_p = vec![0.0, 0.25, 0.5, 1.0];
        let seeds: Vec<u64> = (1..=5).collect();
        let spec = |p: Vec<f64>, agents: Vec<usize>, arena, policies: Vec<PolicyKind>| SweepSpec {
            base: base.clone(),
            p,
            agents,
            arenas: vec![arena],
            policies,
            seeds: seeds.clone(),
            max_cells: DEFAULT_MAX_CELLS,
        };
        Ok(match name {
            "small-arena" => spec(
                all_p,
                vec![1, 3, 5, 10, 15, 20, 25],
                ArenaPreset::Small,
                vec![PolicyKind::Softmax],
            ),
            "large-arena" => spec(
                all_p,
                vec![3, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50],
                ArenaPreset::Large,
                vec![PolicyKind::Softmax],
            ),
            "desk" => spec(
                all_p,
                vec![3, 20],
                ArenaPreset::Small,
                vec![PolicyKind::Softmax],
            ),
            "algorithms" => spec(
                vec![0.0],
                vec![3],
                ArenaPreset::Small,
                vec![PolicyKind::Softmax, PolicyKind::EpsilonGreedy],
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}`; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn cell_count(&self) -> usize {
        self.p.len()
            * self.agents.len()
            * self.arenas.len().max(1)
            * self.policies.len()
            * self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, len) in [
            ("p", self.p.len()),
            ("agents", self.agents.len()),
            ("policy_kind", self.policies.len()),
            ("seeds", self.seeds.len()),
        ] {
            if len == 0 {
                return Err(Error::Config(format!("sweep axis `{name}` is empty")));
            }
        }
        if self.cell_count() > self.max_cells {
            return Err(Error::Config(format!(
                "sweep has {} cells, above the budget of {}",
                self.cell_count(),
                self.max_cells
            )));
        }
        Ok(())
    }

    /// Every cell's configuration, sorted by cell key. An empty arena axis
    /// keeps the base geometry.
    pub fn cells(&self) -> Result<Vec<SimConfig>> {
        self.validate()?;
        let arenas: Vec<Option<ArenaPreset>> = if self.arenas.is_empty() {
            vec![None]
        } else {
            self.arenas.iter().copied().map(Some).collect()
        };
        let mut out = Vec::with_capacity(self.cell_count());
        for &arena in &arenas {
            for &m in &self.agents {
                for &p in &self.p {
                    for &policy in &self.policies {
                        for &seed in &self.seeds {
                            let mut cfg = self.base.clone();
                            if let Some(a) = arena {
                                a.apply(&mut cfg);
                            }
                            cfg.arena.agent_count = m;
                            cfg.share.p = p;
                            cfg.policy_kind = policy;
                            cfg.seed = seed;
                            cfg.validate()?;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        out.sort_by(cmp_cells);
        out.dedup_by(|a, b| cmp_cells(a, b) == Ordering::Equal);
        Ok(out)
    }
}

/// Order cells by arena size, agent count, sharing probability, policy kind
/// and seed.
pub fn cmp_cells(a: &SimConfig, b: &SimConfig) -> Ordering {
    a.arena
        .side_length
        .total_cmp(&b.arena.side_length)
        .then(a.arena.agent_count.cmp(&b.arena.agent_count))
        .then(a.share.p.total_cmp(&b.share.p))
        .then(a.policy_kind.as_str().cmp(b.policy_kind.as_str()))
        .then(a.seed.cmp(&b.seed))
}

/// Directory name of a cell, unique within a sweep.
pub fn cell_key(cfg: &SimConfig) -> String {
    format!(
        "{}_m{:03}_p{}_{}_s{}",
        arena_label(cfg),
        cfg.arena.agent_count,
        cfg.share.p,
        cfg.policy_kind.as_str(),
        cfg.seed
    )
}

/// Parse a sweep file: run configuration keys plus `sweep.*` axis keys
/// holding comma-separated lists (`sweep.p`, `sweep.agents`, `sweep.arena`,
/// `sweep.policy_kind`, `sweep.seeds`, `sweep.max_cells`). Seeds also accept
/// an inclusive range `a..b`. Absent axes take the single base value.
pub fn parse_sweep_str(text: &str, origin: &str) -> Result<SweepSpec> {
    let all = entries(text, origin)?;
    let (axes, base): (Vec<Entry>, Vec<Entry>) =
        all.into_iter().partition(|e| e.key.starts_with("sweep."));
    let mut spec = SweepSpec::single(config_from_entries(&base, origin)?);
    for e in &axes {
        let err = |message: String| Error::ConfigSyntax {
            path: origin.to_string(),
            line: e.line,
            key: e.key.clone(),
            message,
        };
        match e.key.as_str() {
            "sweep.p" => {
                spec.p = parse_list(&e.value, "a real in [0, 1]").map_err(err)?;
                if let Some(bad) = spec.p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(err(format!("value {bad} out of range [0, 1]")));
                }
            }
            "sweep.agents" => {
                spec.agents = parse_list(&e.value, "a positive integer").map_err(err)?
            }
            "sweep.arena" => spec.arenas = parse_list(&e.value, "small|large").map_err(err)?,
            "sweep.policy_kind" => {
                spec.policies = parse_list(&e.value, "softmax|epsilon_greedy").map_err(err)?
            }
            "sweep.seeds" => spec.seeds = parse_seeds(&e.value).map_err(err)?,
            "sweep.max_cells" => {
                spec.max_cells = e
                    .value
                    .parse()
                    .map_err(|_| err(format!("expected a positive integer, got `{}`", e.value)))?
            }
            _ => return Err(err("unknown key".into())),
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub fn parse_sweep(path: impl AsRef<Path>) -> Result<SweepSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sweep_str(&text, &path.display().to_string())
}

fn parse_list<T: FromStr>(value: &str, expected: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| format!("expected a list of {expected}, got `{s}`"))
        })
        .collect()
}

fn parse_seeds(value: &str) -> std::result::Result<Vec<u64>, String> {
    if let Some((a, b)) = value.split_once("..") {
        let a: u64 = a
            .trim()
            .parse()
            .map_err(|_| format!("bad range start `{a}`"))?;
        let b: u64 = b
            .trim()
            .parse()
            .map_err(|_| format!("bad range end `{b}`"))?;
        if a > b {
            return Err(format!("empty seed range {a}..{b}"));
        }
        return Ok((a..=b).collect());
    }
    parse_list(value, "non-negative integers")
}

/// Outcome of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub rho: f64,
    pub p: f64,
    pub arena: String,
    pub seed: u64,
    pub agents: usize,
    pub policy: PolicyKind,
    pub report: Option<ConvergenceReport>,
    pub coordination_final: Option<f64>,
    /// `ok`, or the error that stopped the cell.
    pub status: String,
}

impl AggregateRow {
    fn skeleton(cfg: &SimConfig) -> Self {
        AggregateRow {
            rho: cfg.density(),
            p: cfg.share.p,
            arena: arena_label(cfg),
            seed: cfg.seed,
            agents: cfg.arena.agent_count,
            policy: cfg.policy_kind,
            report: None,
            coordination_final: None,
            status: "ok".into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// The simulation itself failed, as opposed to its analysis.
    pub fn run_failed(&self) -> bool {
        self.status.starts_with("error")
    }

    fn record(&self) -> Vec<String> {
        let r = self.report.as_ref();
        vec![
            fmt9(self.rho),
            fmt9(self.p),
            self.arena.clone(),
            self.seed.to_string(),
            r.map(|r| r.threshold_tick.to_string()).unwrap_or_default(),
            r.map(|r| fmt9(r.terminal_speed)).unwrap_or_default(),
            r.map(|r| r.converged.to_string()).unwrap_or_default(),
            self.coordination_final.map(fmt9).unwrap_or_default(),
            self.agents.to_string(),
            self.policy.as_str().to_string(),
            r.map(|r| r.re_entries.to_string()).unwrap_or_default(),
            self.status.replace(['\n', '\r'], " "),
        ]
    }
}

pub fn write_aggregate<W: Write>(out: W, rows: &[AggregateRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_COLUMNS)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(path: impl AsRef<Path>, rows: &[AggregateRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_aggregate(std::io::BufWriter::new(file), rows).map_err(|e| Error::csv(path, e))
}

/// Read an aggregate CSV back.
pub fn read_aggregate_csv(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.iter().ne(AGGREGATE_COLUMNS.iter().copied()) {
        return Err(Error::InvalidInput(format!(
            "{}: header must be {}",
            path.display(),
            AGGREGATE_COLUMNS.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let bad = |col: &str| {
            Error::InvalidInput(format!(
                "{}: bad `{col}` value in {:?}",
                path.display(),
                rec
            ))
        };
        let f = |i: usize| rec.get(i).unwrap_or("");
        let real = |i: usize| f(i).parse::<f64>().map_err(|_| bad(AGGREGATE_COLUMNS[i]));
        let report = if f(4).is_empty() {
            None
        } else {
            Some(ConvergenceReport {
                threshold_tick: f(4).parse().map_err(|_| bad("threshold_tick"))?,
                terminal_speed: real(5)?,
                converged: f(6).parse().map_err(|_| bad("converged"))?,
                re_entries: f(10).parse().map_err(|_| bad("re_entries"))?,
            })
        };
        rows.push(AggregateRow {
            rho: real(0)?,
            p: real(1)?,
            arena: f(2).to_string(),
            seed: f(3).parse().map_err(|_| bad("seed"))?,
            agents: f(8).parse().map_err(|_| bad("agents"))?,
            policy: f(9).parse().map_err(|_| bad("policy"))?,
            report,
            coordination_final: if f(7).is_empty() {
                None
            } else {
                Some(real(7)?)
            },
            status: f(11).to_string(),
        });
    }
    Ok(rows)
}

/// Run one configuration and write its metrics and manifest into `dir`.
pub fn run_to_dir(cfg: &SimConfig, dir: impl AsRef<Path>) -> Result<crate::engine::MetricsSeries> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_manifest(dir.join(MANIFEST_FILE), cfg)?;
    let series = run(cfg)?;
    write_metrics_csv(dir.join(METRICS_FILE), &series)?;
    Ok(series)
}

fn analyze_into(
    row: &mut AggregateRow,
    series: &crate::engine::MetricsSeries,
    params: &ConvergenceParams,
) {
    row.coordination_final = series.last().map(|r| r.coordination);
    match analyze_series(series, params) {
        Ok(rep) => row.report = Some(rep),
        Err(e) => row.status = format!("analysis error: {e}"),
    }
}

fn run_cell(cfg: &SimConfig, out_dir: &Path, params: &ConvergenceParams) -> AggregateRow {
    let mut row = AggregateRow::skeleton(cfg);
    match run_to_dir(cfg, out_dir.join(cell_key(cfg))) {
        Ok(series) => analyze_into(&mut row, &series, params),
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Execute every cell of `spec` on up to `jobs` threads and write the
/// aggregate. A failing cell is reported in its row and does not stop the
/// others. Output does not depend on `jobs`.
pub fn run_sweep(
    spec: &SweepSpec,
    out_dir: impl AsRef<Path>,
    jobs: usize,
) -> Result<Vec<AggregateRow>> {
    let out_dir = out_dir.as_ref();
    let cells = spec.cells()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let params = ConvergenceParams::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    let rows: Vec<AggregateRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(c, out_dir, &params))
            .collect()
    });
    write_aggregate_csv(out_dir.join(AGGREGATE_FILE), &rows)?;
    Ok(rows)
}

/// Re-analyze every run directory under `in_dir` (any directory holding a
/// manifest and a metrics file, `in_dir` itself included) into one
/// aggregate, sorted by cell key.
pub fn analyze_dir(
    in_dir: impl AsRef<Path>,
    params: &ConvergenceParams,
) -> Result<Vec<AggregateRow>> {
    let in_dir = in_dir.as_ref();
    let mut dirs = Vec::new();
    collect_run_dirs(in_dir, &mut dirs)?;
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no run directories ({MANIFEST_FILE} + {METRICS_FILE}) under {}",
            in_dir.display()
        )));
    }
    let mut found = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let cfg = parse_config(dir.join(MANIFEST_FILE))?;
        let mut row = AggregateRow::skeleton(&cfg);
        match read_metrics_csv(dir.join(METRICS_FILE), cfg.n_sectors) {
            Ok(series) => analyze_into(&mut row, &series, params),
            Err(e) => row.status = format!("error: {e}"),
        }
        found.push((cfg, row));
    }
    found.sort_by(|a, b| cmp_cells(&a.0, &b.0));
    Ok(found.into_iter().map(|(_, r)| r).collect())
}

fn collect_run_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(MANIFEST_FILE).is_file() && dir.join(METRICS_FILE).is_file() {
        out.push(dir.to_path_buf());
    }
    let mut children: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for c in children {
        collect_run_dirs(&c, out)?;
    }
    Ok(())
}
