//! Mission runner: loads a configuration, runs the simulation and writes
//! `telemetry.csv`, `events.csv`, `summary.txt` and optional SVG plots.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use spinsim::sim::{MissionReport, MissionRunner, SimError, StartPhase};
use spinsim::{ConfigError, SystemModel};
use thiserror::Error;

pub mod output;
pub mod plot;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_MISSION: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "spinsim", version, about = "Spinning-base servicer capture and detumbling simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a mission and write telemetry, events and a summary.
    Run(RunOptions),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    A,
    B,
    C,
}

impl From<PhaseArg> for StartPhase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::A => StartPhase::A,
            PhaseArg::B => StartPhase::B,
            PhaseArg::C => StartPhase::C,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunOptions {
    /// Mission configuration (JSON).
    #[arg(long, value_name = "PATH", required_unless_present = "sweep")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", env = "SPINSIM_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Integration step override, seconds.
    #[arg(long, value_name = "S", allow_negative_numbers = true)]
    pub dt: Option<f64>,
    /// Simulated duration override, seconds.
    #[arg(long, value_name = "S", allow_negative_numbers = true)]
    pub duration: Option<f64>,
    /// Also draw the five SVG figures.
    #[arg(long)]
    pub plot: bool,
    /// Run a single phase from its nominal starting state.
    #[arg(long, value_enum, ignore_case = true)]
    pub phase: Option<PhaseArg>,
    /// Build the wheel-torque decay constant from the end-effector limit.
    #[arg(long)]
    pub appendix_literal: bool,
    /// File listing one configuration path per line; runs them in parallel.
    #[arg(long, value_name = "FILE", conflicts_with = "config")]
    pub sweep: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid option `{option}`: {reason}")]
    Option { option: &'static str, reason: String },
    #[error("output directory {path}: {source}")]
    Output { path: String, source: io::Error },
    #[error("sweep file {path}: {reason}")]
    Sweep { path: String, reason: String },
    #[error("mission failed: {0}")]
    Mission(#[from] SimError),
    #[error("mission did not complete within {t_end} s")]
    Incomplete { t_end: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Mission(_) | CliError::Incomplete { .. } => EXIT_MISSION,
            _ => EXIT_VALIDATION,
        }
    }
}

/// Loads a configuration and applies the command-line overrides.
pub fn prepare_model(path: &Path, opts: &RunOptions) -> Result<SystemModel, CliError> {
    let mut model = SystemModel::load(path)?;
    if let Some(dt) = opts.dt {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CliError::Option { option: "--dt", reason: format!("must be a positive number of seconds, got {dt}") });
        }
        // Keep the telemetry spacing fixed in time rather than in steps.
        let spacing = model.sim.dt * model.sim.telemetry_every as f64;
        model.sim.telemetry_every = ((spacing / dt).round() as usize).max(1);
        model.sim.dt = dt;
    }
    if let Some(d) = opts.duration {
        if !(d.is_finite() && d > 0.0) {
            return Err(CliError::Option { option: "--duration", reason: format!("must be a positive number of seconds, got {d}") });
        }
        model.sim.t_end = d;
    }
    if model.sim.dt > model.sim.t_end {
        return Err(CliError::Option {
            option: "--dt",
            reason: format!("step {} s exceeds the run length {} s", model.sim.dt, model.sim.t_end),
        });
    }
    if opts.appendix_literal {
        model.sim.appendix_literal = true;
    }
    Ok(model)
}

/// Runs one configuration and writes its outputs into `out`.
///
/// Nothing is written unless the configuration and options validate and the
/// simulation itself returns. A run that stops at the time limit still writes
/// its files and then reports [`CliError::Incomplete`].
pub fn run_config(path: &Path, out: &Path, opts: &RunOptions) -> Result<MissionReport, CliError> {
    let model = prepare_model(path, opts)?;
    ensure_writable(out)?;
    let start = opts.phase.map_or(StartPhase::Mission, StartPhase::from);
    let report = MissionRunner::with_start(&model, start)?.run()?;
    write_outputs(out, &report, opts.plot).map_err(|source| CliError::Output { path: out.display().to_string(), source })?;
    if !report.completed {
        return Err(CliError::Incomplete { t_end: model.sim.t_end });
    }
    Ok(report)
}

fn ensure_writable(out: &Path) -> Result<(), CliError> {
    let err = |source| CliError::Output { path: out.display().to_string(), source };
    fs::create_dir_all(out).map_err(err)?;
    if fs::metadata(out).map_err(err)?.permissions().readonly() {
        return Err(err(io::Error::new(io::ErrorKind::PermissionDenied, "directory is read-only")));
    }
    Ok(())
}

pub fn write_outputs(out: &Path, report: &MissionReport, plots: bool) -> io::Result<()> {
    let mut telemetry = io::BufWriter::new(fs::File::create(out.join("telemetry.csv"))?);
    output::write_telemetry(&mut telemetry, &report.telemetry)?;
    telemetry.flush()?;
    fs::write(out.join("events.csv"), output::events_csv(&report.events))?;
    fs::write(out.join("summary.txt"), output::summary(report))?;
    if plots {
        for (name, svg) in plot::figures(&report.telemetry, &report.events) {
            fs::write(out.join(name), svg)?;
        }
    }
    Ok(())
}

/// Reads a sweep file: one configuration path per line, `#` comments and
/// blank lines ignored, relative paths resolved against the file's directory.
pub fn read_sweep(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Sweep { path: path.display().to_string(), reason: e.to_string() })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let configs: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| dir.join(l))
        .collect();
    if configs.is_empty() {
        return Err(CliError::Sweep { path: path.display().to_string(), reason: "no configurations listed".into() });
    }
    Ok(configs)
}

/// Output directory of the `index`-th sweep entry.
pub fn sweep_dir(out: &Path, index: usize, config: &Path) -> PathBuf {
    let stem = config.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    out.join(format!("{index:03}_{stem}"))
}

/// Runs every sweep entry on its own thread, results in input order.
pub fn run_sweep(configs: &[PathBuf], opts: &RunOptions) -> Vec<(PathBuf, Result<MissionReport, CliError>)> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .enumerate()
            .map(|(i, cfg)| {
                let dir = sweep_dir(&opts.out, i, cfg);
                scope.spawn(move || (cfg.clone(), run_config(cfg, &dir, opts)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

fn execute(opts: &RunOptions) -> i32 {
    if let Some(sweep) = &opts.sweep {
        let configs = match read_sweep(sweep) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        };
        let mut code = EXIT_OK;
        for (cfg, result) in run_sweep(&configs, opts) {
            match result {
                Ok(_) => println!("{}: ok", cfg.display()),
                Err(e) => {
                    eprintln!("{}: error: {e}", cfg.display());
                    code = code.max(e.exit_code());
                }
            }
        }
        return code;
    }
    let config = opts.config.as_deref().expect("clap enforces --config without --sweep");
    match run_config(config, &opts.out, opts) {
        Ok(report) => {
            print!("{}", output::summary(&report));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(opts) => execute(&opts),
    }
}
