//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure, 4 I/O
//! error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::kinetics::ModelKind;
use crate::sysid::BgSignal;

pub use commands::{ReplayOutput, SimulationOutput};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "aps-testbed", version, about = "Closed-loop artificial pancreas testbed")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "APS_OUT_DIR", default_value = ".")]
    pub out: PathBuf,
    /// Format of trace-like outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Mvp,
    Uva,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Mvp => ModelKind::Mvp,
            ModelArg::Uva => ModelKind::Uva,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignalArg {
    Cgm,
    BgTrue,
}

impl From<SignalArg> for BgSignal {
    fn from(s: SignalArg) -> Self {
        match s {
            SignalArg::Cgm => BgSignal::Cgm,
            SignalArg::BgTrue => BgSignal::BgTrue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReplayMode {
    /// Recorded insulin through the patient model.
    Insulin,
    /// Recorded BG through the controller.
    Bg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop experiment (a JSON spec, or a trace with an
    /// embedded spec).
    Simulate {
        experiment: PathBuf,
        /// Overrides the experiment's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Open-loop replay of a recorded trace.
    Replay(ReplayArgs),
    /// Estimate an MVP profile from a trace.
    Fit {
        trace: PathBuf,
        fitspec: PathBuf,
        /// Where to write the fitted profile; defaults to `<out>/<trace>.profile.json`.
        #[arg(long)]
        out_profile: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SignalArg::Cgm)]
        signal: SignalArg,
    },
    /// Run a fault campaign; resumes from completed runs in the output directory.
    Campaign {
        campaign: PathBuf,
        #[arg(long, default_value_t = default_parallelism())]
        parallelism: usize,
        /// Overrides the seed drawing the random fault windows.
        #[arg(long)]
        seed: Option<u64>,
        /// Also run the matching fault-free campaign into `<out>/clean`.
        #[arg(long)]
        with_clean: bool,
    },
    /// Write a deterministic cohort of profile files.
    Cohort {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        model: ModelArg,
    },
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(value_enum)]
    pub mode: ReplayMode,
    pub trace: PathBuf,
    /// Profile file (insulin mode) or experiment file (bg mode); defaults to
    /// the experiment embedded in the trace.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// BG column fed to the controller in bg mode.
    #[arg(long, value_enum, default_value_t = SignalArg::Cgm)]
    pub signal: SignalArg,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Config { .. } | Error::InvalidParameter { .. } | Error::NonFinite { .. } | Error::Trace(_) => EXIT_CONFIG,
        Error::NonFiniteState { .. } | Error::InsufficientHistory { .. } | Error::Unidentifiable(_) => EXIT_RUNTIME,
    }
}

/// Parses `args` and runs the command, printing errors to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: &Cli) -> crate::Result<()> {
    match &cli.command {
        Command::Simulate { experiment, seed } => {
            let out = commands::simulate(experiment, *seed, &cli.out, cli.format)?;
            println!(
                "{} rows -> {} (TIR {:.1}%)",
                out.rows,
                out.trace_path.display(),
                out.outcomes.pct_in_range
            );
        }
        Command::Replay(args) => {
            let out = commands::replay(args, &cli.out, cli.format)?;
            println!("{} samples, MSE {:.6e} -> {}", out.samples, out.mse, out.path.display());
        }
        Command::Fit {
            trace,
            fitspec,
            out_profile,
            signal,
        } => {
            let r = commands::fit(trace, fitspec, out_profile.as_deref(), (*signal).into(), &cli.out)?;
            println!("train MSE {:.4} over {} samples", r.train_mse, r.train_samples);
            match r.eval_mse {
                Some(m) => println!("eval MSE {:.4} over {} samples", m, r.eval_samples),
                None => println!("eval MSE n/a (no samples after the training window)"),
            }
            let p = r.profile;
            println!("egp {:.6} gezi {:.6} s_i {:.6e}", p.egp, p.gezi, p.s_i);
        }
        Command::Campaign {
            campaign,
            parallelism,
            seed,
            with_clean,
        } => commands::campaign(campaign, *parallelism, *seed, *with_clean, &cli.out)?,
        Command::Cohort { n, seed, model } => {
            let paths = commands::cohort(*n, *seed, (*model).into(), &cli.out)?;
            println!("wrote {} profiles to {}", paths.len(), cli.out.display());
        }
    }
    Ok(())
}
