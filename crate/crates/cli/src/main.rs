//! `matmob`: condition checks, distances, minimizing movements and PDE oracles from one
//! JSON run configuration.

mod commands;
mod config;
mod io;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

pub const EXIT_CONFIG: u8 = 64;
pub const EXIT_NUMERICAL: u8 = 65;
pub const EXIT_IO: u8 = 74;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl From<matmob::Error> for Failure {
    fn from(e: matmob::Error) -> Self {
        match e {
            matmob::Error::Numerical { .. } | matmob::Error::Degenerate(_) => Failure::Numerical(e.to_string()),
            matmob::Error::Input(_) | matmob::Error::Model(_) => Failure::Config(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "matmob", version, about = "Transport distances and gradient flows with matrix-valued mobilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the structural conditions on the mobility (exit 0/1/2 = pass/inconclusive/fail).
    CheckConditions {
        #[command(flatten)]
        common: Common,
        /// Interior sample count for the low-discrepancy scheme.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Distance between `initial` and `target`.
    Distance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Distance plus the geodesic in CSV form.
    Geodesic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Minimizing-movement trajectory.
    Jko {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        jko: JkoFlags,
    },
    /// Explicit finite-difference solve of the gradient-flow PDE.
    FdSolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Heat kernel applied to `initial`.
    Heat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: Option<f64>,
    },
    /// Regularized transport equation.
    TransportSolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Minimizing movement against the FD solve on the same problem.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        jko: JkoFlags,
    },
    /// Estimate checks over recorded runs (nonzero exit if any check fails).
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        jko_run: Option<PathBuf>,
        #[arg(long)]
        fd_run: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct JkoFlags {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    inner_steps: Option<usize>,
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| Failure::Config(format!("{}: {e}", common.config.display())))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", common.config.display())))?;
    if let Some(o) = &common.out {
        cfg.output.directory = Some(o.clone());
    }
    if let Some(s) = common.seed {
        cfg.output.seed = s;
    }
    Ok(cfg)
}

fn apply_jko(cfg: &mut RunConfig, f: &JkoFlags) -> Result<(), Failure> {
    if f.tau.is_none() && f.t_final.is_none() && f.inner_steps.is_none() {
        return Ok(());
    }
    let b = cfg.jko.as_mut().ok_or_else(|| Failure::Config("jko: flags need a jko block to override".into()))?;
    if let Some(v) = f.tau {
        b.tau = v;
    }
    if let Some(v) = f.t_final {
        b.t_final = v;
    }
    if let Some(v) = f.inner_steps {
        b.config.inner_steps = v;
    }
    Ok(())
}

fn missing(what: &str) -> Failure {
    Failure::Config(format!("{what}: flag needs the block in the config"))
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    let common = match &cli.command {
        Command::CheckConditions { common, .. }
        | Command::Distance { common, .. }
        | Command::Geodesic { common, .. }
        | Command::Jko { common, .. }
        | Command::FdSolve { common, .. }
        | Command::Heat { common, .. }
        | Command::TransportSolve { common, .. }
        | Command::Compare { common, .. }
        | Command::Diagnose { common, .. } => common.clone(),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| Failure::Config(e.to_string()))?;
    }
    let mut cfg = load(&common)?;
    match &cli.command {
        Command::CheckConditions { points: Some(p), .. } => {
            let seed = match cfg.conditions.plan.points {
                matmob::conditions::PointScheme::LowDiscrepancy { seed, .. } => seed,
                _ => 0,
            };
            cfg.conditions.plan.points = matmob::conditions::PointScheme::LowDiscrepancy { count: *p, seed };
        }
        Command::Distance { steps: Some(k), .. } | Command::Geodesic { steps: Some(k), .. } => cfg.distance.steps = *k,
        Command::Jko { jko, .. } | Command::Compare { jko, .. } => apply_jko(&mut cfg, jko)?,
        Command::FdSolve { t_end, dt, .. } => {
            if t_end.is_some() || dt.is_some() {
                let b = cfg.fd.as_mut().ok_or_else(|| missing("fd"))?;
                b.t_end = t_end.unwrap_or(b.t_end);
                b.config.dt = dt.or(b.config.dt);
            }
        }
        Command::Heat { t: Some(t), .. } => cfg.heat.as_mut().ok_or_else(|| missing("heat"))?.t = *t,
        Command::TransportSolve { t_end, alpha, .. } => {
            if t_end.is_some() || alpha.is_some() {
                let b = cfg.transport.as_mut().ok_or_else(|| missing("transport"))?;
                b.t_end = t_end.unwrap_or(b.t_end);
                b.alpha = alpha.unwrap_or(b.alpha);
            }
        }
        Command::Diagnose { jko_run, fd_run, .. } => {
            if jko_run.is_some() {
                cfg.diagnose.jko_run = jko_run.clone();
            }
            if fd_run.is_some() {
                cfg.diagnose.fd_run = fd_run.clone();
            }
        }
        _ => {}
    }
    cfg.validate().map_err(Failure::Config)?;
    let run = commands::Run::new(cfg)?;
    match cli.command {
        Command::CheckConditions { .. } => commands::check_conditions(&run),
        Command::Distance { .. } => commands::distance(&run, false),
        Command::Geodesic { .. } => commands::distance(&run, true),
        Command::Jko { .. } => commands::jko(&run),
        Command::FdSolve { .. } => commands::fd(&run),
        Command::Heat { .. } => commands::heat(&run),
        Command::TransportSolve { .. } => commands::transport(&run),
        Command::Compare { .. } => commands::compare(&run),
        Command::Diagnose { .. } => commands::diagnose(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(Failure::Io(m)) => {
            eprintln!("i/o error: {m}");
            ExitCode::from(EXIT_IO)
        }
    }
}
