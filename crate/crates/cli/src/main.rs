//! `mqarch` command-line driver: simulation, preprocessing, moment
//! estimation, Yule-Walker calibration, likelihood refinement, the factor
//! pipeline and reporting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

mod commands;
mod config;
mod staging;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use mqarch::ErrorCategory;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Command failure, classified for the exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    /// Prefixes the message, keeping the class.
    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<mqarch::Error> for CliError {
    fn from(e: mqarch::Error) -> Self {
        let m = e.to_string();
        match e.category() {
            ErrorCategory::Config => CliError::Config(m),
            ErrorCategory::Data => CliError::Data(m),
            ErrorCategory::Numerical => CliError::Numerical(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mqarch",
    version,
    about = "Quadratic Hawkes / MQARCH simulation and calibration"
)]
struct Cli {
    /// Sectioned key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving the outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; 0 uses every core and 1 runs sequentially.
    #[arg(long, global = true)]
    workers: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Overrides any config key, as `section.key=value`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

/// Declares the per-command flags; each one overrides the key of the same
/// name in the command's config section.
macro_rules! section_args {
    ($name:ident, $section:literal, [$($field:ident),* $(,)?]) => {
        #[derive(Args, Debug)]
        struct $name {
            $(
                #[arg(long, help = concat!("Overrides ", $section, ".", stringify!($field)))]
                $field: Option<String>,
            )*
        }

        impl $name {
            fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
                $(
                    if let Some(v) = &self.$field {
                        cfg.set($section, stringify!($field), v)?;
                    }
                )*
                Ok(())
            }
        }
    };
}

section_args!(
    SimulateArgs,
    "simulate",
    [
        mode,
        spec,
        bins,
        horizon,
        q,
        q_aux,
        noise_correlation,
        bin_size
    ]
);
section_args!(
    PreprocessArgs,
    "preprocess",
    [
        input,
        bins_per_day,
        session_start,
        session_end,
        bin_minutes,
        window_days,
        intraday,
        martingalise,
        mirror
    ]
);
section_args!(
    MomentsArgs,
    "moments",
    [
        panel,
        bins_per_day,
        max_lag,
        symmetrize,
        winsorize,
        mirror,
        smoothing
    ]
);
section_args!(
    CalibrateArgs,
    "calibrate",
    [
        panel,
        bins_per_day,
        q,
        q_aux,
        steps,
        solver,
        sweeps,
        tol,
        ridge,
        rank_one,
        include_k_cross,
        leverage_corrections,
        mirror,
        symmetrize,
        winsorize,
        smoothing,
        refine,
        dt,
    ]
);
section_args!(
    MleArgs,
    "mle",
    [
        mode,
        events,
        n_assets,
        horizon,
        panel,
        bins_per_day,
        dt,
        init,
        max_iter,
        grad_tol,
        standard_errors
    ]
);
section_args!(
    FactorArgs,
    "factor",
    [manifest, factor, bins_per_day, q, q_aux, leverage]
);
section_args!(ReportArgs, "report", [model]);

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an MQARCH panel or a quadratic Hawkes event stream.
    Simulate(SimulateArgs),
    /// Turn OHLC bars or a panel into a normalized, martingalised panel.
    Preprocess(PreprocessArgs),
    /// Estimate the covariance suite of a panel.
    Moments(MomentsArgs),
    /// Estimate the moments of a panel and solve the Yule-Walker steps.
    Calibrate(CalibrateArgs),
    /// Maximize an exact or binned likelihood over exponential kernels.
    MleRefine(MleArgs),
    /// Calibrate the one-factor model on a stock universe.
    Factor(FactorArgs),
    /// Kernel tables, fits and summary numbers of a calibrated model.
    Report(ReportArgs),
}

impl Command {
    fn section(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Preprocess(_) => "preprocess",
            Command::Moments(_) => "moments",
            Command::Calibrate(_) => "calibrate",
            Command::MleRefine(_) => "mle",
            Command::Factor(_) => "factor",
            Command::Report(_) => "report",
        }
    }

    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        match self {
            Command::Simulate(a) => a.apply(cfg),
            Command::Preprocess(a) => a.apply(cfg),
            Command::Moments(a) => a.apply(cfg),
            Command::Calibrate(a) => a.apply(cfg),
            Command::MleRefine(a) => a.apply(cfg),
            Command::Factor(a) => a.apply(cfg),
            Command::Report(a) => a.apply(cfg),
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            RunConfig::parse(&text).map_err(|e| e.context(path.display()))?
        }
        None => RunConfig::default(),
    };
    for s in &cli.set {
        cfg.set_dotted(s)?;
    }
    for (key, v) in [
        ("workers", &cli.workers),
        ("seed", &cli.seed),
        ("log_level", &cli.log_level),
    ] {
        if let Some(v) = v {
            cfg.set("run", key, v)?;
        }
    }
    cli.command.apply(&mut cfg)?;
    Ok(cfg)
}

fn init_logging(level: &str) -> Result<(), CliError> {
    let filter: log::LevelFilter = level
        .parse()
        .map_err(|_| CliError::Config(format!("run.log_level: unknown level '{level}'")))?;
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .try_init();
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    init_logging(&cfg.get("run", "log_level"))?;
    let workers: usize = cfg.parse_as("run", "workers")?;
    if workers > 1 && !mqarch::exec::init_workers(workers) {
        log::warn!(
            "worker pool already sized or parallelism disabled; ignoring workers = {workers}"
        );
    }
    let section = cli.command.section();
    let mut out = staging::Staging::new(&cli.out_dir)?;
    commands::dispatch(section, &cfg, &mut out)?;
    out.write_str("resolved_config.ini", &cfg.resolved(&[section]))?;
    let files = out.commit()?;
    log::info!("wrote {} files to {}", files.len(), cli.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mqarch: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
