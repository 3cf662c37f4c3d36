//! Command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;
use vns_core::SimTime;

use crate::check::{check_records, CheckReport};
use crate::scenario::{parse_scenario, Scenario};
use crate::svg::replay_svg;
use crate::trace::{parse_jsonl, Trace, TraceKind};

#[derive(Debug, Parser)]
#[command(name = "vns", about = "Merge and split robot nervous systems in simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// End time in seconds; defaults to the scenario's.
        #[arg(long)]
        until: Option<f64>,
        #[arg(long)]
        trace_out: PathBuf,
        /// Also export SVG frames (every 0.5 s) here.
        #[arg(long)]
        svg_out: Option<PathBuf>,
    },
    /// Re-verify a recorded trace.
    Check {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Export SVG frames from a trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        every: f64,
    },
}

/// Runs `scenario` to `until` and returns the full trace, offline checks
/// included. A pure function of its arguments.
pub fn run_scenario(scenario: &Scenario, seed: u64, until: f64) -> Trace {
    let mut world = scenario.build_world(seed);
    world
        .run_until(SimTime::from_secs(until))
        .expect("run end is never before the start");
    world.finish();
    let rep = check_records(world.trace().records());
    if rep.passed() {
        world.trace_push(None, TraceKind::CheckPass, json!({"check": "offline"}));
    } else {
        world.trace_push(None, TraceKind::CheckFail, json!({"check": "offline", "problems": rep.failures}));
    }
    world.close();
    world.into_trace()
}

/// Reads a scenario file and applies `VNS_PARAM_*` overrides from `env`.
pub fn load_scenario<I, K, V>(path: &Path, env: I) -> anyhow::Result<Scenario>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut s = parse_scenario(&text).with_context(|| format!("parsing {}", path.display()))?;
    s.params = s.params.with_overrides(env).context("environment overrides")?;
    Ok(s)
}

pub fn trace_passed(trace: &Trace) -> bool {
    trace.of_kind(TraceKind::CheckFail).next().is_none()
}

pub fn cmd_run(scenario: &Path, seed: Option<u64>, until: Option<f64>, trace_out: &Path, svg_out: Option<&Path>) -> anyhow::Result<bool> {
    let s = load_scenario(scenario, std::env::vars())?;
    let until = until.unwrap_or_else(|| s.default_until());
    let trace = run_scenario(&s, seed.unwrap_or(s.seed), until);
    let file = fs::File::create(trace_out).with_context(|| format!("creating {}", trace_out.display()))?;
    trace.write_jsonl(std::io::BufWriter::new(file))?;
    if let Some(dir) = svg_out {
        replay_svg(trace.records(), dir, 0.5)?;
    }
    for r in trace.of_kind(TraceKind::CheckFail) {
        eprintln!("check failed at t={}: {}", r.t, r.data);
    }
    Ok(trace_passed(&trace))
}

pub fn cmd_check(trace: &Path) -> anyhow::Result<CheckReport> {
    let text = fs::read_to_string(trace).with_context(|| format!("reading {}", trace.display()))?;
    Ok(check_records(&parse_jsonl(&text)?))
}

pub fn cmd_replay_svg(trace: &Path, out: &Path, every: f64) -> anyhow::Result<usize> {
    let text = fs::read_to_string(trace).with_context(|| format!("reading {}", trace.display()))?;
    Ok(replay_svg(&parse_jsonl(&text)?, out, every)?)
}

/// Exit status: 0 when every check passes, 1 when a check fails, 2 on
/// errors.
pub fn main_with(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run { scenario, seed, until, trace_out, svg_out } => {
            cmd_run(&scenario, seed, until, &trace_out, svg_out.as_deref())
        }
        Command::Check { trace } => cmd_check(&trace).map(|rep| {
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            for f in &rep.failures {
                println!("FAIL {f}");
            }
            println!(
                "{} merges, {} splits, {} quiescent points: {}",
                rep.merges,
                rep.splits,
                rep.quiescent_points,
                if rep.passed() { "pass" } else { "fail" }
            );
            rep.passed()
        }),
        Command::Replay { trace, out, every } => cmd_replay_svg(&trace, &out, every).map(|n| {
            println!("{n} frames");
            true
        }),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
