use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conditioner::RnnState;
use crate::data::{CovariateBuilder, Domain, SeriesDataset};
use crate::error::{Error, Result};
use crate::flow::{standard_normal, Mode};
use crate::par::{try_for_each_mut, Execution};
use crate::tensor::Tensor;

use super::model::{Conditioner, Model};
use super::samples::ForecastSamples;

/// Trajectories handled together in one batched step.
const CHUNK: usize = 8;

struct Trajectory {
    rng: ChaCha8Rng,
    /// Scaled observations for absolute steps `[offset, now)`.
    history: Vec<f64>,
    offset: usize,
    rnn: Option<RnnState<Tensor>>,
    /// Decoder input rows produced so far (attention).
    decoder_inputs: Vec<f64>,
    output: Vec<f64>,
}

/// Stateful trajectory sampler. Every trajectory owns a random stream seeded
/// with `seed + index`, and each trajectory's arithmetic is independent of
/// how trajectories are grouped, so serial and parallel runs agree exactly.
pub struct Sampler<'m> {
    model: &'m Model,
    builder: CovariateBuilder,
    exec: Execution,
    /// Absolute index of the next step to sample.
    next: usize,
    emb: Vec<f64>,
    memory: Option<Tensor>,
    trajectories: Vec<Trajectory>,
    samples: usize,
    steps: usize,
}

impl<'m> Sampler<'m> {
    /// Warm up on the last `context_length` observations of `history` (its
    /// covariates continue past its end when dynamic features are given).
    pub fn new(
        model: &'m Model,
        history: &SeriesDataset,
        samples: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        if model.flow.mode() != Mode::Inference {
            return Err(Error::WrongMode {
                expected: Mode::Inference.name(),
                actual: model.flow.mode().name(),
            });
        }
        let builder = model.covariate_builder(history)?;
        let d = model.config.dim;
        let n = history.len();
        let warm = model.config.context_length.min(n);
        // Lags reach further back than the warm-up itself.
        let keep_from = n.saturating_sub(warm + builder.spec.max_lag());
        let mut hist = history.time_major(keep_from, n);
        model.scale.scale(&mut hist);
        let emb = model.embedding_values();
        let input_row = |t: usize, x_prev: &[f64]| -> Vec<f64> {
            let mut r = x_prev.to_vec();
            r.extend(builder.row(t, &hist, keep_from));
            r.extend_from_slice(&emb);
            r
        };
        let x_at = |t: usize| &hist[(t - keep_from) * d..(t - keep_from + 1) * d];

        let (rnn, memory, decoder_inputs) = match &model.conditioner {
            Conditioner::Rnn(rnn) => {
                let mut state = rnn.zero_state_values(1);
                for t in n - warm..n {
                    let row = input_row(t + 1, x_at(t));
                    state = rnn.step_values(&model.store, &Tensor::row_vector(row), &state)?;
                }
                (Some(state), None, Vec::new())
            }
            Conditioner::Attention(att) => {
                if warm == 0 {
                    return Err(Error::Empty(
                        "the attention conditioner needs a warm-up context; cold start is only defined for the recurrent conditioner".into(),
                    ));
                }
                let enc: Vec<f64> = (n - warm..n).flat_map(|t| input_row(t, x_at(t))).collect();
                let width = model.config.input_dim();
                let memory = att.encode_values(&model.store, &Tensor::matrix(warm, width, enc))?;
                (None, Some(memory), input_row(n, x_at(n - 1)))
            }
        };
        let tail_from = n.saturating_sub(builder.spec.max_lag());
        let tail = hist[(tail_from - keep_from) * d..].to_vec();
        let trajectories = (0..samples)
            .map(|i| Trajectory {
                rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)),
                history: tail.clone(),
                offset: tail_from,
                rnn: rnn.clone(),
                decoder_inputs: decoder_inputs.clone(),
                output: Vec::new(),
            })
            .collect();
        Ok(Self {
            model,
            builder,
            exec,
            next: n,
            emb,
            memory,
            trajectories,
            samples,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Sample `n` further steps for every trajectory.
    pub fn advance(&mut self, n: usize) -> Result<()> {
        if n == 0 {
            return Ok(());
        }
        self.builder.check_horizon(self.next + n)?;
        let model = self.model;
        let builder = &self.builder;
        let emb = &self.emb;
        let memory = self.memory.as_ref();
        let first = self.next;
        let mut chunks: Vec<&mut [Trajectory]> = self.trajectories.chunks_mut(CHUNK).collect();
        try_for_each_mut(&mut chunks, self.exec, |chunk| {
            for t in first..first + n {
                sample_step(model, builder, emb, memory, chunk, t)?;
            }
            Ok::<(), Error>(())
        })?;
        self.next += n;
        self.steps += n;
        Ok(())
    }

    pub fn finish(self) -> Result<ForecastSamples> {
        let d = self.model.config.dim;
        let data = self
            .trajectories
            .into_iter()
            .flat_map(|t| t.output)
            .collect();
        ForecastSamples::new(self.samples, self.steps, d, data)
    }
}

/// Sample step `t` for a group of trajectories.
fn sample_step(
    model: &Model,
    builder: &CovariateBuilder,
    emb: &[f64],
    memory: Option<&Tensor>,
    chunk: &mut [Trajectory],
    t: usize,
) -> Result<()> {
    let d = model.config.dim;
    let rows = chunk.len();
    let hd = model.config.cond_dim();
    let mut h = Vec::with_capacity(rows * hd);
    match &model.conditioner {
        Conditioner::Rnn(_) => {
            for tr in chunk.iter() {
                h.extend_from_slice(tr.rnn.as_ref().expect("recurrent state").top().data());
            }
        }
        Conditioner::Attention(att) => {
            let memory = memory.expect("encoder memory");
            let width = model.config.input_dim();
            for tr in chunk.iter() {
                let k = tr.decoder_inputs.len() / width;
                let inputs = Tensor::matrix(k, width, tr.decoder_inputs.clone());
                h.extend_from_slice(att.decode_last(&model.store, memory, &inputs)?.data());
            }
        }
    }
    let h = Tensor::matrix(rows, hd, h);
    let mut z = Vec::with_capacity(rows * d);
    for tr in chunk.iter_mut() {
        z.extend_from_slice(standard_normal(1, d, &mut tr.rng).data());
    }
    let x = model
        .flow
        .inverse(&model.store, &Tensor::matrix(rows, d, z), Some(&h))?;
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("sampled value at step {t}")));
    }

    // Record outputs and extend each history.
    for (r, tr) in chunk.iter_mut().enumerate() {
        let xs = x.row(r);
        tr.history.extend_from_slice(xs);
        let keep = builder.spec.max_lag() * d;
        if tr.history.len() > keep + d {
            let drop = tr.history.len() - keep;
            tr.history.drain(..drop);
            tr.offset = t + 1 - keep / d.max(1);
        }
        let mut out = xs.to_vec();
        model.scale.unscale(&mut out);
        if model.config.domain == Domain::Count {
            out.iter_mut().for_each(|v| *v = v.max(0.0).floor());
        }
        tr.output.extend(out);
    }

    // Feed the samples back for step t + 1.
    match &model.conditioner {
        Conditioner::Rnn(rnn) => {
            let width = model.config.input_dim();
            let mut input = Vec::with_capacity(rows * width);
            let mut states = Vec::with_capacity(rows);
            for (r, tr) in chunk.iter().enumerate() {
                input.extend_from_slice(x.row(r));
                input.extend(builder.row(t + 1, &tr.history, tr.offset));
                input.extend_from_slice(emb);
                states.push(tr.rnn.clone().expect("recurrent state"));
            }
            let stacked = stack_states(&states);
            let next =
                rnn.step_values(&model.store, &Tensor::matrix(rows, width, input), &stacked)?;
            for (r, tr) in chunk.iter_mut().enumerate() {
                tr.rnn = Some(next.rows(r, r + 1));
            }
        }
        Conditioner::Attention(_) => {
            for (r, tr) in chunk.iter_mut().enumerate() {
                let row = x.row(r).to_vec();
                tr.decoder_inputs.extend(row);
                let cov = builder.row(t + 1, &tr.history, tr.offset);
                tr.decoder_inputs.extend(cov);
                tr.decoder_inputs.extend_from_slice(emb);
            }
        }
    }
    Ok(())
}

fn stack_states(states: &[RnnState<Tensor>]) -> RnnState<Tensor> {
    let layers = states[0].h.len();
    let cat = |pick: &dyn Fn(&RnnState<Tensor>) -> &Tensor| {
        let parts: Vec<&Tensor> = states.iter().map(pick).collect();
        Tensor::vstack(&parts).expect("equal widths")
    };
    RnnState {
        h: (0..layers).map(|l| cat(&|s| &s.h[l])).collect(),
        c: (0..states[0].c.len()).map(|l| cat(&|s| &s.c[l])).collect(),
    }
}

/// Draw `samples` trajectories of `horizon` steps following `history`.
pub fn predict(
    model: &Model,
    history: &SeriesDataset,
    horizon: usize,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ForecastSamples> {
    let mut s = Sampler::new(model, history, samples, seed, exec)?;
    s.advance(horizon)?;
    s.finish()
}
