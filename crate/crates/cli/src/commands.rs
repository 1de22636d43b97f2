use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use navsim_api::config::{ApiConfig, ConfigError, SECRET_ENV};
use navsim_api::provision::Credentials;
use navsim_core::planner::local::PlannerMode;
use navsim_core::runtime::{run_scenario, RunOptions};
use navsim_core::scenario::Scenario;
use thiserror::Error;

use crate::bench::{render_text, run_bench, BenchPlan, MODES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitStatus {
    Ok = 0,
    Failure = 1,
    Usage = 2,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn status(&self) -> ExitStatus {
        match self {
            CliError::Usage(_) => ExitStatus::Usage,
            CliError::Failure(_) => ExitStatus::Failure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Dwa,
    Rollout,
}

impl From<ModeArg> for PlannerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dwa => PlannerMode::Dwa,
            ModeArg::Rollout => PlannerMode::TrajectoryRollout,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "navsim", version, about = "Simulated mobile robot navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and report the result.
    Run(RunArgs),
    /// Compare DWA and trajectory rollout over a scenario matrix.
    Bench(BenchArgs),
    /// Print the activation code and diag key for a robot identifier.
    Provision(ProvisionArgs),
    /// Host the control API with a simulated robot per activated binding.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Multiplier on the acceleration limits.
    #[arg(long)]
    accel: Option<f64>,
    /// Write the JSON result here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Sim seconds per wall second; 0 runs as fast as possible.
    #[arg(long, default_value_t = 20.0)]
    time_scale: f64,
    /// Serve the scenario's world over the control API instead of running it.
    #[arg(long)]
    serve: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Scenario files or directories of them.
    #[arg(long = "scenario", num_args = 1..)]
    scenarios: Vec<PathBuf>,
    /// Seeds 0..N.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Acceleration scales to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    accel: Vec<f64>,
    /// Restrict to one planner mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    time_scale: f64,
    /// Parallel workers; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct ProvisionArgs {
    robot_identifier: String,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// World to simulate; a small demo room by default.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    bind: Option<SocketAddr>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return ExitStatus::Usage as u8;
            }
            let _ = write!(out, "{}", e.render());
            return ExitStatus::Ok as u8;
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a, out, err),
        Command::Bench(a) => bench(a, out, err),
        Command::Provision(a) => provision(a, out, |k| std::env::var(k).ok()),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(s) => s as u8,
        Err(e) => {
            let _ = writeln!(err, "navsim: {e}");
            e.status() as u8
        }
    }
}

fn load(path: &Path) -> Result<Scenario, CliError> {
    Scenario::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_report(path: &Path, json: &str) -> Result<(), CliError> {
    fs::write(path, json).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn check_scale(time_scale: f64) -> Result<(), CliError> {
    if time_scale.is_finite() && time_scale >= 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage("--time-scale must be a finite number >= 0".into()))
    }
}

fn run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<ExitStatus, CliError> {
    let scenario = load(&a.scenario)?;
    check_scale(a.time_scale)?;
    if a.accel.is_some_and(|k| !(k.is_finite() && k > 0.0)) {
        return Err(CliError::Usage("--accel must be positive".into()));
    }
    if a.serve {
        return serve(ServeArgs {
            scenario: Some(a.scenario),
            bind: None,
            seed: a.seed,
            time_scale: if a.time_scale > 0.0 { a.time_scale } else { 1.0 },
        });
    }
    let opts = RunOptions {
        seed: a.seed,
        mode: a.mode.map(Into::into),
        accel_scale: a.accel,
        time_scale: a.time_scale,
        keep_traces: false,
    };
    let r = run_scenario(&scenario, &opts).result;
    if let Some(path) = &a.report {
        write_report(path, &r.to_json())?;
    }
    let _ = writeln!(
        out,
        "{} seed {} [{}]: {} in {:.1} s sim, path {:.2} m, min clearance {:.3} m, collisions {}, battery used {:.4}{}",
        r.scenario,
        r.seed,
        r.mode,
        if r.success { "success" } else { "failure" },
        r.sim_time,
        r.path_length,
        r.min_clearance,
        r.collisions,
        r.battery_used,
        r.reason.as_deref().map(|s| format!(", reason {s}")).unwrap_or_default()
    );
    if r.collisions > 0 {
        let _ = writeln!(err, "navsim: COLLISION: {} footprint collisions in {} seed {}", r.collisions, r.scenario, r.seed);
    }
    Ok(if r.passed() { ExitStatus::Ok } else { ExitStatus::Failure })
}

fn scenario_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<ExitStatus, CliError> {
    check_scale(a.time_scale)?;
    let files = scenario_files(&a.scenarios)?;
    if files.is_empty() {
        return Err(CliError::Usage("bench needs at least one scenario (--scenario FILE|DIR)".into()));
    }
    if a.seeds == 0 || a.accel.is_empty() || a.accel.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(CliError::Usage("bench needs --seeds >= 1 and positive --accel values".into()));
    }
    let scenarios = files.iter().map(|f| load(f)).collect::<Result<Vec<_>, _>>()?;
    let plan = BenchPlan {
        scenarios,
        seeds: (0..a.seeds).collect(),
        accel: a.accel,
        modes: match a.mode {
            Some(m) => vec![m.into()],
            None => MODES.to_vec(),
        },
        time_scale: a.time_scale,
        jobs: a.jobs,
    };
    let report = run_bench(&plan);
    if let Some(path) = &a.report {
        write_report(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    let _ = write!(out, "{}", render_text(&report));
    if report.collisions > 0 {
        for r in report.runs.iter().filter(|r| r.result.collisions > 0) {
            let _ = writeln!(err, "navsim: COLLISION: {} seed {} [{}]", r.result.scenario, r.result.seed, r.result.mode);
        }
        return Ok(ExitStatus::Failure);
    }
    Ok(ExitStatus::Ok)
}

fn provision(a: ProvisionArgs, out: &mut dyn Write, env: impl Fn(&str) -> Option<String>) -> Result<ExitStatus, CliError> {
    let secret = env(SECRET_ENV)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CliError::Usage(format!("{SECRET_ENV} is not set; export the provisioning secret the service uses")))?;
    let c = Credentials::derive(secret.as_bytes(), &a.robot_identifier);
    if a.json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&c).expect("credentials serialize"));
    } else {
        let _ = writeln!(out, "robot_identifier: {}", c.robot_identifier);
        let _ = writeln!(out, "activation_code: {}", c.activation_code);
        let _ = writeln!(out, "diag_key: {}", c.diag_key);
    }
    Ok(ExitStatus::Ok)
}

fn serve(a: ServeArgs) -> Result<ExitStatus, CliError> {
    let mut cfg = ApiConfig::from_env().map_err(|e| match e {
        ConfigError::MissingSecret => CliError::Usage(e.to_string()),
        ConfigError::Invalid { .. } => CliError::Usage(e.to_string()),
    })?;
    if let Some(path) = &a.scenario {
        cfg.scenario = load(path)?;
    }
    if let Some(bind) = a.bind {
        cfg.bind = bind;
    }
    if !(a.time_scale.is_finite() && a.time_scale > 0.0) {
        return Err(CliError::Usage("--time-scale must be positive when serving".into()));
    }
    cfg.seed = a.seed;
    cfg.time_scale = a.time_scale;
    let _ = tracing_subscriber::fmt().with_target(false).try_init();
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Failure(e.to_string()))?;
    rt.block_on(navsim_api::serve(cfg)).map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(ExitStatus::Ok)
}
