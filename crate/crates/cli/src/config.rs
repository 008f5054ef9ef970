//! Run configuration: a versioned TOML file whose values can be overridden
//! by command-line flags. Precedence is flag, then file, then default.

use std::path::{Path, PathBuf};

use flowcast::conditioner::{AttentionConfig, CellKind};
use flowcast::data::{NoiseReading, PipesConfig, PipesMode, SeriesDataset};
use flowcast::forecaster::{ModelConfig, ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub forecast: ForecastSection,
    pub simulate: SimulateSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            output_dir: PathBuf::from("out"),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            forecast: ForecastSection::default(),
            simulate: SimulateSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Final steps held out of training; forecasts start right after the
    /// remaining history.
    pub holdout: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: String,
    pub flow_blocks: usize,
    pub flow_hidden: usize,
    pub autoregressive: bool,
    pub cell: String,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub context_length: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ff_width: usize,
    pub dropout: f64,
    pub residual: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = AttentionConfig::default();
        Self {
            kind: "rnn-realnvp".into(),
            flow_blocks: 5,
            flow_hidden: 100,
            autoregressive: true,
            cell: "lstm".into(),
            rnn_hidden: 40,
            rnn_layers: 2,
            context_length: 24,
            d_model: a.d_model,
            heads: a.heads,
            encoder_layers: a.encoder_layers,
            decoder_layers: a.decoder_layers,
            ff_width: a.ff_width,
            dropout: a.dropout,
            residual: a.residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub window: usize,
    pub clip_norm: Option<f64>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            batches_per_epoch: t.batches_per_epoch,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            window: t.window,
            clip_norm: t.clip_norm,
            resume: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub checkpoint: Option<PathBuf>,
    /// Defaults to the holdout length.
    pub horizon: Option<usize>,
    pub samples: usize,
    pub parallel: bool,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            horizon: None,
            samples: 100,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub steps: usize,
    pub mode: String,
    pub noise: String,
    pub noise_param: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            mode: "propagating".into(),
            noise: "variance".into(),
            noise_param: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub samples: Option<PathBuf>,
    pub actuals: Option<PathBuf>,
    /// First actuals step compared with the forecast; defaults to the last
    /// `horizon` steps of the actuals file.
    pub start: Option<usize>,
}

/// A configuration problem. Several are collected and reported together.
#[derive(Debug, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for p in &self.0 {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn parse_cell(s: &str) -> Option<CellKind> {
    match s {
        "lstm" => Some(CellKind::Lstm),
        "gru" => Some(CellKind::Gru),
        _ => None,
    }
}

fn parse_mode(s: &str) -> Option<PipesMode> {
    match s {
        "propagating" => Some(PipesMode::Propagating),
        "static" => Some(PipesMode::Static),
        _ => None,
    }
}

fn parse_noise(s: &str) -> Option<NoiseReading> {
    match s {
        "variance" => Some(NoiseReading::Variance),
        "stddev" => Some(NoiseReading::StdDev),
        _ => None,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigErrors> {
        toml::from_str(text).map_err(|e| ConfigErrors(vec![e.to_string().trim().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigErrors> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigErrors(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::from_toml(&text).map_err(|ConfigErrors(v)| {
            ConfigErrors(
                v.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            )
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Problems shared by every command.
    fn common_problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.version != CONFIG_VERSION {
            p.push(format!(
                "version must be {CONFIG_VERSION}, got {}",
                self.version
            ));
        }
        p
    }

    pub fn check_simulate(&self) -> Result<PipesConfig, ConfigErrors> {
        let mut p = self.common_problems();
        let s = &self.simulate;
        if s.steps == 0 {
            p.push("simulate.steps must be positive".into());
        }
        let mode = parse_mode(&s.mode);
        if mode.is_none() {
            p.push(format!(
                "simulate.mode `{}` is not one of: propagating, static",
                s.mode
            ));
        }
        let noise = parse_noise(&s.noise);
        if noise.is_none() {
            p.push(format!(
                "simulate.noise `{}` is not one of: variance, stddev",
                s.noise
            ));
        }
        if !(s.noise_param.is_finite() && s.noise_param >= 0.0) {
            p.push("simulate.noise_param must be non-negative".into());
        }
        finish(p)?;
        Ok(PipesConfig {
            mode: mode.expect("checked"),
            noise: noise.expect("checked"),
            noise_param: s.noise_param,
            ..PipesConfig::default()
        })
    }

    fn model_problems(&self, p: &mut Vec<String>) {
        let m = &self.model;
        if ModelKind::parse(&m.kind).is_none() {
            p.push(format!(
                "model.kind `{}` is not one of: {}",
                m.kind,
                ModelKind::NAMES.join(", ")
            ));
        }
        if parse_cell(&m.cell).is_none() {
            p.push(format!("model.cell `{}` is not one of: lstm, gru", m.cell));
        }
        for (name, v) in [
            ("model.flow_blocks", m.flow_blocks),
            ("model.flow_hidden", m.flow_hidden),
            ("model.rnn_hidden", m.rnn_hidden),
            ("model.rnn_layers", m.rnn_layers),
            ("model.d_model", m.d_model),
            ("model.heads", m.heads),
            ("model.ff_width", m.ff_width),
        ] {
            if v == 0 {
                p.push(format!("{name} must be positive"));
            }
        }
        if m.heads > 0 && m.d_model / m.heads == 0 {
            p.push(format!(
                "model.d_model {} gives zero key width with {} heads",
                m.d_model, m.heads
            ));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            p.push("model.dropout must lie in [0, 1)".into());
        }
    }

    pub fn check_train(&self) -> Result<TrainConfig, ConfigErrors> {
        let mut p = self.common_problems();
        if self.data.path.is_none() {
            p.push("data.path is required".into());
        }
        if self.train.resume.is_none() {
            self.model_problems(&mut p);
        }
        let t = self.train_config();
        if let Err(e) = t.validate() {
            p.extend(
                e.to_string()
                    .trim_start_matches("invalid configuration: ")
                    .split("; ")
                    .map(|s| format!("train.{s}")),
            );
        }
        finish(p)?;
        Ok(t)
    }

    pub fn check_forecast(&self) -> Result<(), ConfigErrors> {
        let mut p = self.common_problems();
        if self.data.path.is_none() {
            p.push("data.path is required".into());
        }
        if self.forecast.checkpoint.is_none() {
            p.push("forecast.checkpoint is required".into());
        }
        if self.forecast.samples == 0 {
            p.push("forecast.samples must be positive".into());
        }
        if self.forecast.horizon.is_none() && self.data.holdout == 0 {
            p.push("forecast.horizon is required when data.holdout is 0".into());
        }
        finish(p)
    }

    pub fn check_evaluate(&self) -> Result<(), ConfigErrors> {
        let mut p = self.common_problems();
        if self.evaluate.samples.is_none() {
            p.push("evaluate.samples is required".into());
        }
        if self.evaluate.actuals.is_none() {
            p.push("evaluate.actuals is required".into());
        }
        finish(p)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            batches_per_epoch: t.batches_per_epoch,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            window: t.window,
            clip_norm: t.clip_norm,
            seed: self.seed,
        }
    }

    /// Model configuration for `ds`; call after [`RunConfig::check_train`].
    pub fn model_config(&self, ds: &SeriesDataset) -> ModelConfig {
        let m = &self.model;
        let kind = ModelKind::parse(&m.kind).expect("validated model kind");
        ModelConfig {
            flow_blocks: m.flow_blocks,
            flow_hidden: m.flow_hidden,
            autoregressive: m.autoregressive,
            cell: parse_cell(&m.cell).expect("validated cell"),
            rnn_hidden: m.rnn_hidden,
            rnn_layers: m.rnn_layers,
            context_length: m.context_length,
            attention: AttentionConfig {
                d_model: m.d_model,
                heads: m.heads,
                encoder_layers: m.encoder_layers,
                decoder_layers: m.decoder_layers,
                ff_width: m.ff_width,
                dropout: m.dropout,
                residual: m.residual,
            },
            ..ModelConfig::for_dataset(kind, ds)
        }
    }
}

fn finish(problems: Vec<String>) -> Result<(), ConfigErrors> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(ConfigErrors(problems))
    }
}
