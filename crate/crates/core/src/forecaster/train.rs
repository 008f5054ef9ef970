use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_window, SeriesDataset};
use crate::error::{Error, Result};
use crate::flow::Mode;
use crate::tensor::{Adam, AdamConfig, Graph};

use super::model::Model;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Window length `T`.
    pub window: usize,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            batches_per_epoch: 100,
            epochs: 40,
            learning_rate: 1e-3,
            window: 48,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive");
        }
        if self.batches_per_epoch == 0 {
            problems.push("batches_per_epoch must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push("learning_rate must be positive");
        }
        if self.window < 2 {
            problems.push("window must be at least 2");
        }
        if self.clip_norm.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            problems.push("clip_norm must be positive");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_nll: f64,
    pub wall_seconds: f64,
}

/// Random-stream for one epoch; depends only on the seed and the absolute
/// epoch index so resumed runs continue the sequence.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Maximum-likelihood training on random windows with Adam. On divergence
/// the model keeps its last finite parameters and statistics and the error
/// says where training stopped. `on_epoch` sees each finished epoch.
pub fn train(
    model: &mut Model,
    ds: &SeriesDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss, &Model),
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if ds.dim() != model.config.dim {
        return Err(Error::Config(format!(
            "dataset has {} dimensions, model expects {}",
            ds.dim(),
            model.config.dim
        )));
    }
    if ds.len() < cfg.window {
        return Err(Error::InsufficientLength(format!(
            "training series has {} steps, window needs {}",
            ds.len(),
            cfg.window
        )));
    }
    if model.config.kind.is_attention() && model.config.context_length >= cfg.window {
        return Err(Error::Config(format!(
            "context length {} must be shorter than the window {}",
            model.config.context_length, cfg.window
        )));
    }
    let builder = model.covariate_builder(ds)?;
    let history = model.scaled_history(ds);
    let mut adam = Adam::with_states(
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &model.store,
        std::mem::take(&mut model.optimizer),
    );
    let use_dropout = model.config.kind.is_attention() && model.config.attention.dropout > 0.0;
    let mut trace = Vec::with_capacity(cfg.epochs);
    model.flow.set_mode(Mode::Training);
    for _ in 0..cfg.epochs {
        let epoch = model.epochs_completed;
        let started = Instant::now();
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut total = 0.0;
        for batch in 0..cfg.batches_per_epoch {
            let diverged = |source: Error| Error::Diverged {
                epoch,
                batch,
                source: Box::new(source),
            };
            let mut windows = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let start = sample_window(ds.len(), cfg.window, &mut rng)?;
                windows
                    .push(model.make_window(ds, &builder, &history, start, cfg.window, &mut rng));
            }
            let mut g = Graph::new();
            let dropout: Option<&mut dyn RngCore> = if use_dropout { Some(&mut rng) } else { None };
            let step = model
                .negative_log_likelihood(&mut g, &windows, dropout)
                .and_then(|(loss, updates)| {
                    g.backward(loss)?;
                    Ok((g.value(loss).item(), updates))
                });
            let (loss, updates) = match step {
                Ok(v) => v,
                Err(e) => {
                    model.flow.set_mode(Mode::Inference);
                    model.optimizer = adam.states().to_vec();
                    return Err(diverged(e));
                }
            };
            model.store.zero_grad();
            model.store.accumulate_grads(&g);
            if let Some(c) = cfg.clip_norm {
                let n = model.store.grad_norm();
                if n > c {
                    model.store.scale_grads(c / n);
                }
            }
            if let Err(e) = adam.step(&mut model.store) {
                model.flow.set_mode(Mode::Inference);
                model.optimizer = adam.states().to_vec();
                return Err(diverged(e));
            }
            model.flow.commit(&updates);
            total += loss;
        }
        model.epochs_completed += 1;
        model.optimizer = adam.states().to_vec();
        let rec = EpochLoss {
            epoch,
            mean_nll: total / cfg.batches_per_epoch as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        model.flow.set_mode(Mode::Inference);
        on_epoch(&rec, model);
        model.flow.set_mode(Mode::Training);
        trace.push(rec);
    }
    model.flow.set_mode(Mode::Inference);
    Ok(trace)
}

/// Loss trace as delimiter-separated text with a header row. Wall-clock
/// time is left out so identical runs give identical files.
pub fn loss_trace_csv(trace: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,mean_nll\n");
    for e in trace {
        s.push_str(&format!("{},{}\n", e.epoch, e.mean_nll));
    }
    s
}
