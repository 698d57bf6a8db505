//! `sharesim`: run single simulations, parameter sweeps, and re-analysis of
//! finished runs.
//!
//! Exit status is 0 on success, 1 for configuration or usage errors and 2 for
//! failures during a run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sharesim_core::analysis::ConvergenceParams;
use sharesim_core::sweep::{
    analyze_dir, parse_sweep, run_to_dir, write_aggregate_csv, AggregateRow, PRESETS,
};
use sharesim_core::{parse_config, run_sweep, ArenaPreset, Error, SimConfig, SweepSpec};

#[derive(Parser, Debug)]
#[command(
    name = "sharesim",
    version,
    about = "Multi-agent Q-learning with policy sharing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation; writes metrics.csv and manifest.txt into --out.
    Run {
        /// key=value configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a grid of simulations in parallel; writes one directory per cell
    /// and aggregate.csv into --out.
    Sweep {
        /// Built-in grid: small-arena, large-arena, desk or algorithms.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// Sweep file: run keys plus sweep.* axis lists.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Re-analyze every run directory below --in into one aggregate CSV.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ConvergenceParams::default().tail_fraction)]
        tail_fraction: f64,
        #[arg(long, default_value_t = ConvergenceParams::default().band_multiplier)]
        band_multiplier: f64,
    },
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long = "share-p")]
    share_p: Option<f64>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long, value_parser = parse_arena)]
    arena: Option<ArenaPreset>,
}

fn parse_arena(s: &str) -> Result<ArenaPreset, String> {
    s.parse()
}

impl Overrides {
    fn apply(&self, cfg: &mut SimConfig) -> sharesim_core::Result<()> {
        if let Some(a) = self.arena {
            a.apply(cfg);
        }
        if let Some(m) = self.agents {
            cfg.arena.agent_count = m;
        }
        if let Some(p) = self.share_p {
            cfg.share.p = p;
        }
        if let Some(t) = self.ticks {
            cfg.max_ticks = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()
    }

    fn apply_sweep(&self, spec: &mut SweepSpec) -> sharesim_core::Result<()> {
        if let Some(a) = self.arena {
            spec.arenas = vec![a];
        }
        if let Some(m) = self.agents {
            spec.agents = vec![m];
        }
        if let Some(p) = self.share_p {
            spec.p = vec![p];
        }
        if let Some(s) = self.seed {
            spec.seeds = vec![s];
        }
        if let Some(t) = self.ticks {
            spec.base.max_ticks = t;
        }
        spec.base.validate()?;
        spec.validate()
    }
}

fn summarize(rows: &[AggregateRow]) {
    for r in rows {
        match &r.report {
            Some(rep) => println!(
                "{} m={} p={} {} seed={}: threshold={} converged={} speed={:.6} coordination={:.4}{}",
                r.arena,
                r.agents,
                r.p,
                r.policy,
                r.seed,
                rep.threshold_tick,
                rep.converged,
                rep.terminal_speed,
                r.coordination_final.unwrap_or(f64::NAN),
                if rep.suspect() { " (suspect threshold)" } else { "" }
            ),
            None => println!("{} m={} p={} {} seed={}: {}", r.arena, r.agents, r.p, r.policy, r.seed, r.status),
        }
    }
}

fn execute(cli: Cli) -> sharesim_core::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            overrides,
        } => {
            let mut cfg = match config {
                Some(path) => parse_config(path)?,
                None => SimConfig::default(),
            };
            overrides.apply(&mut cfg)?;
            let series = run_to_dir(&cfg, &out)?;
            let last = series.last().expect("a run records at least one row");
            println!(
                "rho={:.4} ticks={} mean_distance={:.3} events={} coordination={:.4} -> {}",
                cfg.density(),
                last.tick,
                last.mean_distance,
                last.events,
                last.coordination,
                out.display()
            );
        }
        Command::Sweep {
            preset,
            config,
            out,
            jobs,
            overrides,
        } => {
            let mut spec = match (preset, config) {
                (Some(name), _) => SweepSpec::preset(&name)?,
                (None, Some(path)) => parse_sweep(path)?,
                (None, None) => {
                    return Err(Error::Config(format!(
                        "sweep needs --preset ({}) or --config",
                        PRESETS.join(", ")
                    )))
                }
            };
            overrides.apply_sweep(&mut spec)?;
            if jobs == 0 {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            let rows = run_sweep(&spec, &out, jobs)?;
            summarize(&rows);
            let failed = rows.iter().filter(|r| r.run_failed()).count();
            let unanalyzed = rows
                .iter()
                .filter(|r| !r.is_ok() && !r.run_failed())
                .count();
            println!(
                "{} cells, {failed} failed, {unanalyzed} not analyzable -> {}",
                rows.len(),
                out.display()
            );
            if failed > 0 {
                return Err(Error::SweepCells {
                    failed,
                    total: rows.len(),
                });
            }
        }
        Command::Analyze {
            input,
            out,
            tail_fraction,
            band_multiplier,
        } => {
            let params = ConvergenceParams {
                tail_fraction,
                band_multiplier,
                ..ConvergenceParams::default()
            };
            let rows = analyze_dir(&input, &params)?;
            write_aggregate_csv(&out, &rows)?;
            summarize(&rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
