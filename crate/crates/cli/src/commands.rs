use std::fs;
use std::path::{Path, PathBuf};

use flowcast::data::{pipes_dataset, SeriesDataset};
use flowcast::forecaster::{
    checkpoint, loss_trace_csv, predict, train, ForecastSamples, Model, ScaleVector,
};
use flowcast::metrics::{cross_covariance, matrix_line, EvaluationReport};
use flowcast::par::Execution;
use flowcast::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigErrors, RunConfig};

pub const DATASET_FILE: &str = "pipes.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const QUANTILES_FILE: &str = "quantiles.csv";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug)]
pub enum CliError {
    /// Usage or configuration problem (exit code 2).
    Config(ConfigErrors),
    /// Anything that went wrong while running (exit code 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigErrors> for CliError {
    fn from(e: ConfigErrors) -> Self {
        CliError::Config(e)
    }
}

impl From<flowcast::Error> for CliError {
    fn from(e: flowcast::Error) -> Self {
        use flowcast::Error as E;
        match e {
            E::Config(_) | E::CouplingDimension { .. } | E::ZeroKeyDim => {
                CliError::Config(ConfigErrors(vec![e.to_string()]))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn prepare_output(cfg: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let path = dir.join(format!("{command}.toml"));
    fs::write(&path, cfg.to_toml()).map_err(|e| io_error(&path, e))?;
    Ok(dir)
}

fn load_dataset(path: &Path) -> Result<SeriesDataset, CliError> {
    Ok(SeriesDataset::load(path)?)
}

/// Steps used for training and as forecast history.
fn history(ds: &SeriesDataset, holdout: usize) -> Result<SeriesDataset, CliError> {
    if holdout >= ds.len() {
        return Err(CliError::Runtime(format!(
            "holdout of {holdout} steps leaves no history in a series of {} steps",
            ds.len()
        )));
    }
    Ok(ds.slice(0, ds.len() - holdout)?)
}

/// Lag-0 and lag-1 cross-covariance matrices of a `[T, D]` series as
/// `key = value` lines.
pub fn covariance_lines(prefix: &str, series: &Tensor) -> Result<String, CliError> {
    let mut s = matrix_line(
        &format!("{prefix}cross_cov_lag0"),
        &cross_covariance(series, 0)?,
    );
    s += &matrix_line(
        &format!("{prefix}cross_cov_lag1"),
        &cross_covariance(series, 1)?,
    );
    Ok(s)
}

pub struct SimulateOutput {
    pub dataset: PathBuf,
    pub summary: String,
}

pub fn simulate(cfg: &RunConfig) -> Result<SimulateOutput, CliError> {
    let pipes = cfg.check_simulate()?;
    let dir = prepare_output(cfg, "simulate")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ds = pipes_dataset(cfg.simulate.steps, &pipes, &mut rng)?;
    let path = dir.join(DATASET_FILE);
    ds.save(&path)?;
    let series = Tensor::matrix(ds.len(), ds.dim(), ds.time_major(0, ds.len()));
    let mut summary = String::new();
    if ds.len() >= 3 {
        let c0 = cross_covariance(&series, 0)?;
        summary += &format!("cov_s1_s2 = {}\n", c0.get(1, 2));
        summary += &covariance_lines("", &series)?;
    }
    Ok(SimulateOutput {
        dataset: path,
        summary,
    })
}

pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub loss_trace: PathBuf,
    pub model: Model,
}

pub fn train_model(cfg: &RunConfig) -> Result<TrainOutput, CliError> {
    let tc = cfg.check_train()?;
    let ds = load_dataset(cfg.data.path.as_deref().expect("validated"))?;
    let train_ds = history(&ds, cfg.data.holdout)?;
    let mut model = match &cfg.train.resume {
        Some(path) => {
            let m = checkpoint::load(path)?;
            if m.config.dim != train_ds.dim() {
                return Err(CliError::Runtime(format!(
                    "checkpoint {} models {} series, dataset has {}",
                    path.display(),
                    m.config.dim,
                    train_ds.dim()
                )));
            }
            m
        }
        None => Model::new(
            cfg.model_config(&train_ds),
            ScaleVector::fit(&train_ds),
            cfg.seed,
        )?,
    };
    let dir = prepare_output(cfg, "train")?;
    let mut trace = Vec::new();
    let result = train(&mut model, &train_ds, &tc, |e, _| {
        eprintln!(
            "epoch {} mean_nll {:.6} ({:.2}s)",
            e.epoch, e.mean_nll, e.wall_seconds
        );
        trace.push(e.clone());
    });
    let ckpt = dir.join(CHECKPOINT_FILE);
    let loss = dir.join(LOSS_FILE);
    // The checkpoint is written on divergence too; it holds the last finite state.
    checkpoint::save(&model, &ckpt)?;
    fs::write(&loss, loss_trace_csv(&trace)).map_err(|e| io_error(&loss, e))?;
    result?;
    Ok(TrainOutput {
        checkpoint: ckpt,
        loss_trace: loss,
        model,
    })
}

pub struct ForecastOutput {
    pub samples: PathBuf,
    pub quantiles: PathBuf,
    pub forecast: ForecastSamples,
}

pub fn forecast(cfg: &RunConfig) -> Result<ForecastOutput, CliError> {
    cfg.check_forecast()?;
    let model = checkpoint::load(cfg.forecast.checkpoint.as_deref().expect("validated"))?;
    let ds = load_dataset(cfg.data.path.as_deref().expect("validated"))?;
    let hist = history(&ds, cfg.data.holdout)?;
    let horizon = cfg.forecast.horizon.unwrap_or(cfg.data.holdout);
    let exec = if cfg.forecast.parallel {
        Execution::Parallel
    } else {
        Execution::Serial
    };
    let dir = prepare_output(cfg, "forecast")?;
    let fs_ = predict(&model, &hist, horizon, cfg.forecast.samples, cfg.seed, exec)?;
    let samples = dir.join(SAMPLES_FILE);
    let quantiles = dir.join(QUANTILES_FILE);
    fs_.save(&samples)?;
    fs::write(&quantiles, fs_.quantile_csv()).map_err(|e| io_error(&quantiles, e))?;
    Ok(ForecastOutput {
        samples,
        quantiles,
        forecast: fs_,
    })
}

pub struct EvaluateOutput {
    pub report_path: PathBuf,
    pub report: EvaluationReport,
    pub text: String,
}

pub fn evaluate(cfg: &RunConfig) -> Result<EvaluateOutput, CliError> {
    cfg.check_evaluate()?;
    let paths = ForecastSamples::load(cfg.evaluate.samples.as_deref().expect("validated"))?;
    let ds = load_dataset(cfg.evaluate.actuals.as_deref().expect("validated"))?;
    if ds.dim() != paths.dim {
        return Err(CliError::Runtime(format!(
            "samples have {} dimensions, actuals have {}",
            paths.dim,
            ds.dim()
        )));
    }
    let h = paths.horizon;
    let start = match cfg.evaluate.start {
        Some(s) => s,
        None => ds.len().checked_sub(h).ok_or_else(|| {
            CliError::Runtime(format!(
                "forecast horizon {h} exceeds the {} actual steps",
                ds.len()
            ))
        })?,
    };
    if start + h > ds.len() {
        return Err(CliError::Runtime(format!(
            "forecast covers steps [{start}, {}) but actuals end at {}",
            start + h,
            ds.len()
        )));
    }
    let actuals = Tensor::matrix(h, ds.dim(), ds.time_major(start, start + h));
    let dir = prepare_output(cfg, "evaluate")?;
    let report = EvaluationReport::compute(&paths, &actuals, Execution::Parallel)?;
    let mut text = report.to_text();
    if h >= 3 {
        text += &covariance_lines("mean_", &paths.mean())?;
        text += &covariance_lines("actual_", &actuals)?;
    }
    let report_path = dir.join(REPORT_FILE);
    fs::write(&report_path, &text).map_err(|e| io_error(&report_path, e))?;
    Ok(EvaluateOutput {
        report_path,
        report,
        text,
    })
}
