//! Command-line front end for `flowcast`: simulate the pipes system, train a
//! model, sample forecasts and score them.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "flowcast",
    version,
    about = "Probabilistic multivariate forecasting with conditional flows"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving every artifact and the effective configuration.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a pipes dataset.
    Simulate(SimulateArgs),
    /// Fit a model by maximum likelihood.
    Train(TrainArgs),
    /// Sample forecast trajectories from a checkpoint.
    Forecast(ForecastArgs),
    /// Score forecast samples against actual values.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    /// `propagating` or `static`.
    #[arg(long)]
    pub mode: Option<String>,
    /// How the noise parameter is read: `variance` or `stddev`.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub noise_param: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// rnn-realnvp, rnn-maf or transformer-maf.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Continue training from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sample trajectories on one thread.
    #[arg(long)]
    pub serial: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub actuals: Option<PathBuf>,
    #[arg(long)]
    pub start: Option<usize>,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl Cli {
    /// File values (or defaults) with the flags applied on top.
    pub fn effective_config(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        set(&mut c.output_dir, self.out_dir.clone());
        match &self.command {
            Command::Simulate(a) => {
                set(&mut c.simulate.steps, a.steps);
                set(&mut c.simulate.mode, a.mode.clone());
                set(&mut c.simulate.noise, a.noise.clone());
                set(&mut c.simulate.noise_param, a.noise_param);
            }
            Command::Train(a) => {
                if a.data.is_some() {
                    c.data.path = a.data.clone();
                }
                set(&mut c.model.kind, a.kind.clone());
                set(&mut c.data.holdout, a.holdout);
                set(&mut c.train.epochs, a.epochs);
                set(&mut c.train.batch_size, a.batch_size);
                set(&mut c.train.batches_per_epoch, a.batches_per_epoch);
                set(&mut c.train.learning_rate, a.learning_rate);
                set(&mut c.train.window, a.window);
                if a.clip_norm.is_some() {
                    c.train.clip_norm = a.clip_norm;
                }
                if a.resume.is_some() {
                    c.train.resume = a.resume.clone();
                }
            }
            Command::Forecast(a) => {
                if a.data.is_some() {
                    c.data.path = a.data.clone();
                }
                if a.checkpoint.is_some() {
                    c.forecast.checkpoint = a.checkpoint.clone();
                }
                set(&mut c.data.holdout, a.holdout);
                if a.horizon.is_some() {
                    c.forecast.horizon = a.horizon;
                }
                set(&mut c.forecast.samples, a.samples);
                if a.serial {
                    c.forecast.parallel = false;
                }
            }
            Command::Evaluate(a) => {
                if a.samples.is_some() {
                    c.evaluate.samples = a.samples.clone();
                }
                if a.actuals.is_some() {
                    c.evaluate.actuals = a.actuals.clone();
                }
                if a.start.is_some() {
                    c.evaluate.start = a.start;
                }
            }
        }
        Ok(c)
    }
}

/// Run one parsed command.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.effective_config()?;
    match &cli.command {
        Command::Simulate(_) => {
            let out = commands::simulate(&cfg)?;
            println!("wrote {}", out.dataset.display());
            print!("{}", out.summary);
        }
        Command::Train(_) => {
            let out = commands::train_model(&cfg)?;
            println!("wrote {}", out.checkpoint.display());
            println!("wrote {}", out.loss_trace.display());
        }
        Command::Forecast(_) => {
            let out = commands::forecast(&cfg)?;
            println!("wrote {}", out.samples.display());
            println!("wrote {}", out.quantiles.display());
        }
        Command::Evaluate(_) => {
            let out = commands::evaluate(&cfg)?;
            print!("{}", out.text);
            println!("wrote {}", out.report_path.display());
        }
    }
    Ok(())
}

/// Parse `args` and run; usage errors exit with 2, runtime failures with 1.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprint!("{e}");
            if matches!(e, CliError::Runtime(_)) {
                eprintln!();
            }
            e.exit_code()
        }
    }
}
