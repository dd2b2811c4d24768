//! `dpmpc swingup` and `dpmpc robustness`.
//!
//! Exit codes: 0 on success, 1 on configuration or IO errors, 2 when the
//! swing-up episode does not reach and hold the goal region.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dpmpc_core::clock::NullClock;
use dpmpc_core::simbench::{simulate_episode, simulate_episode_with_clock};

use crate::clock::WallClock;
use crate::config::{parse_robot, RunConfig};
use crate::io::{episode_csv, json_bytes, robustness_csv, write_atomic, EpisodeSummary};
use crate::suite::robustness_suite_parallel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAILED_SWINGUP: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dpmpc", version, about = "Nonlinear MPC swing-up of the Acrobot and Pendubot")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop episode and write episode.csv and report.json.
    Swingup(Common),
    /// Sweep plant parameters, noise and delay; write robustness.json and
    /// robustness.csv.
    Robustness(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = robot_arg)]
    pub robot: Option<dpmpc_core::Robot>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub duration: Option<f64>,
    /// Measure solver time with the system clock. Time budgets then apply,
    /// and runs are no longer reproducible bit for bit.
    #[arg(long)]
    pub wall_clock: bool,
}

fn robot_arg(s: &str) -> Result<dpmpc_core::Robot, String> {
    parse_robot(s).ok_or_else(|| format!("unknown robot `{s}`, expected acrobot or pendubot"))
}

fn load(args: &Common) -> Result<(RunConfig, PathBuf), String> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(robot) = args.robot {
        cfg.set_robot(robot).map_err(|e| e.to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.benchmark.seed = seed;
    }
    if let Some(d) = args.duration {
        cfg.benchmark.duration = d;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let out = args.out.clone().unwrap_or_else(|| cfg.benchmark.out_dir.clone());
    Ok((cfg, out))
}

fn write(path: &Path, bytes: std::io::Result<Vec<u8>>) -> Result<(), String> {
    bytes.and_then(|b| write_atomic(path, &b)).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn swingup(args: &Common) -> Result<i32, String> {
    let (cfg, out) = load(args)?;
    let ep = cfg.episode();
    let report =
        if args.wall_clock { simulate_episode_with_clock(&ep, WallClock::new()) } else { simulate_episode(&ep) }
            .map_err(|e| e.to_string())?;
    write(&out.join("episode.csv"), episode_csv(&report))?;
    let summary = EpisodeSummary::new(&report);
    write(&out.join("report.json"), json_bytes(&summary))?;
    println!(
        "{}: score {:.3}, uptime {:.3} s of {} s, swing-up {}",
        report.robot.name(),
        report.score,
        report.uptime,
        report.duration,
        if report.swingup_success { "held" } else { "failed" }
    );
    if let Some(err) = &report.controller_error {
        eprintln!("controller stopped: {err}");
    }
    Ok(if report.swingup_success { EXIT_OK } else { EXIT_FAILED_SWINGUP })
}

fn robustness(args: &Common) -> Result<i32, String> {
    let (cfg, out) = load(args)?;
    let ep = cfg.episode();
    let spec = &cfg.benchmark.sweeps;
    let report = if args.wall_clock {
        robustness_suite_parallel(&ep, spec, WallClock::new)
    } else {
        robustness_suite_parallel(&ep, spec, || NullClock)
    }
    .map_err(|e| e.to_string())?;
    write(&out.join("robustness.json"), json_bytes(&report))?;
    write(&out.join("robustness.csv"), robustness_csv(&report))?;
    for axis in &report.axes {
        println!("{:<24} {:.3}", axis.name, axis.score);
    }
    Ok(EXIT_OK)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Swingup(args) => swingup(args),
        Command::Robustness(args) => robustness(args),
    };
    result.unwrap_or_else(|msg| {
        eprintln!("error: {msg}");
        EXIT_CONFIG
    })
}
