// Licensed under the Apache-2.0 license

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use gecko_core::adhesion::pull_campaign;
use gecko_core::config::{ConfigError, OperatorCommand, ScenarioConfig};
use gecko_core::firmware::Command;
use gecko_core::pac::HostCommand;
use gecko_core::registers::register_map_markdown;
use gecko_core::sim::{monte_carlo, run_world, ScenarioResult};
use serde_json::Value;

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_PERCHED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "gecko", version, about = "Gecko gripper software twin")]
pub struct Cli {
    /// Master seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Config override, `dotted.path=value`. Repeatable.
    #[arg(long = "set", value_name = "K=V", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Scenario TOML. Omit for the built-in nominal scenario.
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run one scenario; exit 0 iff the flyer perched.
    Run(ConfigArg),
    /// Seeded campaign over approach speed and misalignment.
    MonteCarlo {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Number of trials; defaults to `monte_carlo.trials`.
        #[arg(short = 'n', long)]
        trials: Option<usize>,
    },
    /// Simulated bench pull test.
    PullTest {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Number of trials; defaults to `pull_test.trials`.
        #[arg(short = 'n', long)]
        trials: Option<usize>,
    },
    /// Run a scenario with logging on, then slow-drip the experiment back.
    Drip {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(short, long, default_value_t = 1)]
        experiment: u16,
    },
    /// Live simulation over a WebSocket at /ws.
    Serve {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: SocketAddr,
        /// Ticks run this many times faster than real time.
        #[arg(long, default_value_t = 1.0)]
        speedup: f64,
    },
    /// Print the gripper register map as markdown.
    Registers,
}

pub fn load_config(cli: &Cli, path: Option<&Path>) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p, &cli.set)?,
        None => ScenarioConfig::default().with_overrides(&cli.set)?,
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    Ok(cfg)
}

/// Exit status for a `run` result. Depends only on the result JSON.
pub fn exit_code_for(result: &Value) -> u8 {
    if result.get("perched").and_then(Value::as_bool) == Some(true) {
        EXIT_OK
    } else {
        EXIT_NOT_PERCHED
    }
}

fn write(out: &Path, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn print_run(r: &ScenarioResult) {
    println!("scenario   {}", r.name);
    println!("outcome    {:?}", r.outcome);
    println!("duration   {:.2} s ({} ticks)", r.duration_s, r.ticks);
    if let (Some(t), Some(v)) = (r.contact_time_s, r.contact_speed_mm_s) {
        println!("contact    t = {t:.3} s at {v:.1} mm/s");
    }
    if let Some(e) = r.trigger_error_s {
        println!(
            "trigger    fired {:+.0} ms from contact + delay",
            e * 1000.0
        );
    }
    println!("status     0x{:04X}", r.final_status);
}

fn cmd_run(cli: &Cli, cfg: &ScenarioConfig) -> anyhow::Result<u8> {
    let (result, _) = run_world(cfg)?;
    let json = result.to_json();
    let csv = write(
        &cli.out,
        &format!("{}.csv", result.name),
        result.telemetry_csv(),
    )?;
    let res = write(&cli.out, &format!("{}.result.json", result.name), &json)?;
    print_run(&result);
    println!("wrote      {} {}", csv.display(), res.display());
    Ok(exit_code_for(&serde_json::from_str(&json)?))
}

fn cmd_monte_carlo(cli: &Cli, cfg: &ScenarioConfig, trials: Option<usize>) -> anyhow::Result<u8> {
    let n = trials.unwrap_or(cfg.monte_carlo.trials);
    if n == 0 {
        eprintln!("error: at least one trial is required");
        return Ok(EXIT_USAGE);
    }
    let report = monte_carlo(cfg, n, cfg.sim.seed)?;
    println!(
        "{:>14} {:>7} {:>6} {:>7}  95% Wilson",
        "speed mm/s", "trials", "ok", "rate"
    );
    for b in report.bins.iter().chain(std::iter::once(&report.overall)) {
        println!(
            "{:>6.1}-{:<7.1} {:>7} {:>6} {:>7.3}  [{:.3}, {:.3}]",
            b.speed_lo_mm_s,
            b.speed_hi_mm_s,
            b.trials,
            b.successes,
            b.rate,
            b.wilson_lo,
            b.wilson_hi
        );
    }
    write(&cli.out, "monte_carlo.csv", report.table_csv())?;
    write(
        &cli.out,
        "monte_carlo.json",
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(EXIT_OK)
}

fn cmd_pull_test(cli: &Cli, cfg: &ScenarioConfig, trials: Option<usize>) -> anyhow::Result<u8> {
    let n = trials.unwrap_or(cfg.pull_test.trials);
    if n == 0 {
        eprintln!("error: at least one trial is required");
        return Ok(EXIT_USAGE);
    }
    let mut cal = cfg.adhesion.clone();
    if let Some(seed) = cli.seed {
        cal.noise_seed = seed;
    }
    let campaign = pull_campaign(n, cfg.surface.quality, cfg.pull_test.pull_rate_n_s, &cal);
    let mut csv = String::from("trial,total_n,per_pair_n\n");
    println!("{:>5} {:>10} {:>10}", "trial", "total N", "per pair N");
    for (i, t) in campaign.trials.iter().enumerate() {
        println!("{:>5} {:>10.2} {:>10.2}", i + 1, t.total_n, t.per_pair_n);
        csv.push_str(&format!("{},{},{}\n", i + 1, t.total_n, t.per_pair_n));
    }
    println!("mean per pair     {:.2} N", campaign.mean_per_pair_n);
    println!("max deviation     {:.1} %", campaign.max_deviation_pct);
    write(&cli.out, "pull_test.csv", csv)?;
    write(
        &cli.out,
        "pull_test.json",
        serde_json::to_string_pretty(&campaign)?,
    )?;
    Ok(EXIT_OK)
}

fn cmd_drip(cli: &Cli, cfg: &ScenarioConfig, experiment: u16) -> anyhow::Result<u8> {
    if experiment == 0 {
        eprintln!("error: experiment 0 is reserved");
        return Ok(EXIT_USAGE);
    }
    let mut cfg = cfg.clone();
    cfg.operator.insert(
        0,
        OperatorCommand {
            at_s: 0.0,
            cmd: Command::Mark.name().into(),
            param: Some(experiment as i64),
        },
    );
    let (result, mut world) = run_world(&cfg)?;
    let bridge = world.bridge_mut();
    bridge.dispatch(&HostCommand::with_param(Command::Mark, 0))?;
    let drip = bridge.slow_drip(experiment)?;
    let stem = format!("exp_{experiment:05}");
    let log = write(&cli.out, &format!("{stem}.geckolog"), drip.bytes())?;
    write(
        &cli.out,
        &format!("{stem}.json"),
        serde_json::to_string_pretty(&drip.sidecar())?,
    )?;
    println!(
        "experiment {experiment}: {} records over {} ticks ({:?})",
        drip.records.len(),
        result.ticks,
        result.outcome
    );
    println!("wrote {}", log.display());
    match drip.verify() {
        Ok(_) => Ok(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            Ok(EXIT_NOT_PERCHED)
        }
    }
}

/// Runs the parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> u8 {
    let cfg_path = match &cli.command {
        Cmd::Run(c) => c.config.clone(),
        Cmd::MonteCarlo { cfg, .. }
        | Cmd::PullTest { cfg, .. }
        | Cmd::Drip { cfg, .. }
        | Cmd::Serve { cfg, .. } => cfg.config.clone(),
        Cmd::Registers => {
            print!("{}", register_map_markdown());
            return EXIT_OK;
        }
    };
    let cfg = match load_config(&cli, cfg_path.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_USAGE;
        }
    };
    let outcome = match &cli.command {
        Cmd::Run(_) => cmd_run(&cli, &cfg),
        Cmd::MonteCarlo { trials, .. } => cmd_monte_carlo(&cli, &cfg, *trials),
        Cmd::PullTest { trials, .. } => cmd_pull_test(&cli, &cfg, *trials),
        Cmd::Drip { experiment, .. } => cmd_drip(&cli, &cfg, *experiment),
        Cmd::Serve { addr, speedup, .. } => crate::serve::run_blocking(cfg, *addr, *speedup),
        Cmd::Registers => unreachable!(),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        EXIT_NOT_PERCHED
    })
}
