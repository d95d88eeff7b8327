use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use htdp::harness::{aggregate, emit_plot, run_sweep, write_csv, Axis, ExperimentConfig};
use htdp::Error;

#[derive(Parser)]
#[command(
    name = "htdp",
    version,
    about = "Private stochastic optimization sweeps with heavy-tailed gradients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep. Flags override values from the config file.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    oracle: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    /// Comma-separated privacy levels.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    eps: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    k: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    delta: Option<f64>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output SVG path.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Plot abscissa: n, d, eps or k.
    #[arg(long)]
    plot_axis: Option<String>,
    #[arg(long)]
    max_phase_iterations: Option<u64>,
    /// Record wall-clock milliseconds per trial (breaks byte-identical reruns).
    #[arg(long)]
    timing: bool,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunArgs {
    fn into_config(self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.problem {
            cfg.problem = v;
        }
        if let Some(v) = self.algo {
            cfg.algo = v;
        }
        if let Some(v) = self.oracle {
            cfg.oracle = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.d {
            cfg.d = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
            cfg.rho.clear();
        }
        if let Some(v) = self.k {
            cfg.k = vec![v];
        }
        if self.delta.is_some() {
            cfg.delta = self.delta;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        if self.plot.is_some() {
            cfg.plot = self.plot;
        }
        if let Some(v) = self.plot_axis {
            cfg.plot_axis = v.parse::<Axis>()?;
        }
        if self.max_phase_iterations.is_some() {
            cfg.max_phase_iterations = self.max_phase_iterations;
        }
        cfg.timing |= self.timing;
        if cfg.problem.is_empty() || cfg.algo.is_empty() || cfg.oracle.is_empty() {
            return Err(config_error(
                "--problem, --algo and --oracle are required without --config",
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: RunArgs) -> Result<(), Error> {
    let cfg = args.into_config()?;
    let records = run_sweep(&cfg)?;
    match &cfg.out {
        Some(path) => write_csv(&records, path)?,
        None => print!("{}", htdp::harness::records_to_csv(&records)),
    }
    if let Some(path) = &cfg.plot {
        let title = format!("{} / {} / {}", cfg.problem, cfg.algo, cfg.oracle);
        emit_plot(&aggregate(&records), cfg.plot_axis, &title, path)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
