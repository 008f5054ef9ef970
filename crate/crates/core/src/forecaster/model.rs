use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditioner::{AttentionConditioner, AttentionConfig, CellKind, RecurrentConditioner};
use crate::data::{CovariateBuilder, CovariateSpec, Domain, SeriesDataset};
use crate::error::{Error, Result};
use crate::flow::{BatchStats, FlowKind, FlowStack};
use crate::nn::uniform;
use crate::tensor::{AdamState, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    RnnRealNvp,
    RnnMaf,
    TransformerMaf,
}

impl ModelKind {
    pub const NAMES: [&'static str; 3] = ["rnn-realnvp", "rnn-maf", "transformer-maf"];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rnn-realnvp" => Some(ModelKind::RnnRealNvp),
            "rnn-maf" => Some(ModelKind::RnnMaf),
            "transformer-maf" => Some(ModelKind::TransformerMaf),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::RnnRealNvp => "rnn-realnvp",
            ModelKind::RnnMaf => "rnn-maf",
            ModelKind::TransformerMaf => "transformer-maf",
        }
    }

    pub fn flow_kind(self) -> FlowKind {
        match self {
            ModelKind::RnnRealNvp => FlowKind::RealNvp,
            ModelKind::RnnMaf | ModelKind::TransformerMaf => FlowKind::Maf,
        }
    }

    pub fn is_attention(self) -> bool {
        self == ModelKind::TransformerMaf
    }
}

pub const SCALE_FLOOR: f64 = 1e-8;

/// Per-dimension scale: mean absolute value over the training range, floored.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleVector {
    values: Vec<f64>,
}

impl ScaleVector {
    pub fn fit(ds: &SeriesDataset) -> Self {
        let values = ds
            .values
            .iter()
            .map(|s| {
                (s.iter().map(|v| v.abs()).sum::<f64>() / s.len().max(1) as f64).max(SCALE_FLOOR)
            })
            .collect();
        Self { values }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "scales must be positive and finite: {values:?}"
            )));
        }
        Ok(Self { values })
    }

    pub fn ones(dim: usize) -> Self {
        Self {
            values: vec![1.0; dim],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Divide a time-major buffer (D columns) by the scales.
    pub fn scale(&self, data: &mut [f64]) {
        let d = self.values.len();
        for (k, v) in data.iter_mut().enumerate() {
            *v /= self.values[k % d];
        }
    }

    pub fn unscale(&self, data: &mut [f64]) {
        let d = self.values.len();
        for (k, v) in data.iter_mut().enumerate() {
            *v *= self.values[k % d];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub covariates: CovariateSpec,
    pub item_ids: Vec<usize>,
    pub domain: Domain,
    /// Number of flow blocks `K`.
    pub flow_blocks: usize,
    pub flow_hidden: usize,
    /// `false` turns MAF layers into per-dimension affine maps conditioned
    /// only on `h` (independent Gaussian emissions).
    pub autoregressive: bool,
    pub cell: CellKind,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub attention: AttentionConfig,
    /// Encoder context (attention) and inference warm-up length.
    pub context_length: usize,
}

impl ModelConfig {
    pub fn for_dataset(kind: ModelKind, ds: &SeriesDataset) -> Self {
        Self {
            kind,
            dim: ds.dim(),
            covariates: CovariateSpec::for_dataset(ds),
            item_ids: ds.item_ids.clone(),
            domain: ds.domain,
            flow_blocks: 5,
            flow_hidden: 100,
            autoregressive: true,
            cell: CellKind::Lstm,
            rnn_hidden: 40,
            rnn_layers: 2,
            attention: AttentionConfig::default(),
            context_length: 24,
        }
    }

    pub fn cond_dim(&self) -> usize {
        if self.kind.is_attention() {
            self.attention.d_model
        } else {
            self.rnn_hidden
        }
    }

    /// Conditioner input: observation plus covariates plus embeddings.
    pub fn input_dim(&self) -> usize {
        self.dim + self.covariates.width()
    }
}

#[derive(Clone, Debug)]
pub enum Conditioner {
    Rnn(RecurrentConditioner),
    Attention(AttentionConditioner),
}

/// One training window: scaled observations `[T, D]` and numeric covariates
/// `[T + 1, C]` for absolute steps `start ..= start + T`.
#[derive(Clone, Debug)]
pub struct Window {
    pub start: usize,
    pub x: Tensor,
    pub cov: Tensor,
}

fn rows_of(t: &Tensor, a: usize, b: usize) -> Tensor {
    let c = t.cols();
    Tensor::matrix(b - a, c, t.data()[a * c..b * c].to_vec())
}

fn hcat(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    Tensor::matrix(rows, cols, out)
}

/// Conditioner and flow with the scaling and categorical embeddings they
/// were trained with.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub flow: FlowStack,
    pub conditioner: Conditioner,
    pub embedding: Option<ParamId>,
    pub scale: ScaleVector,
    pub epochs_completed: usize,
    /// Optimizer moments carried across training calls; empty before the
    /// first step.
    pub optimizer: Vec<AdamState>,
}

impl Model {
    pub fn new(config: ModelConfig, scale: ScaleVector, seed: u64) -> Result<Self> {
        if scale.dim() != config.dim {
            return Err(Error::Config(format!(
                "{} scales for {} dimensions",
                scale.dim(),
                config.dim
            )));
        }
        if config.item_ids.len() != config.dim {
            return Err(Error::Config(format!(
                "{} item ids for {} dimensions",
                config.item_ids.len(),
                config.dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let spec = &config.covariates;
        let embedding = (spec.embedding_dim > 0 && spec.cardinality > 0).then(|| {
            store.add(
                "embedding",
                uniform(1, spec.cardinality * spec.embedding_dim, 1.0, &mut rng),
            )
        });
        let input_dim = config.input_dim();
        let conditioner = if config.kind.is_attention() {
            Conditioner::Attention(AttentionConditioner::new(
                &mut store,
                "attention",
                input_dim,
                config.attention.clone(),
                &mut rng,
            )?)
        } else {
            Conditioner::Rnn(RecurrentConditioner::new(
                &mut store,
                "rnn",
                config.cell,
                input_dim,
                config.rnn_hidden,
                config.rnn_layers,
                &mut rng,
            )?)
        };
        let cond = config.cond_dim();
        let flow = match config.kind.flow_kind() {
            FlowKind::RealNvp => FlowStack::real_nvp(
                &mut store,
                "flow",
                config.dim,
                cond,
                config.flow_blocks,
                config.flow_hidden,
                &mut rng,
            )?,
            FlowKind::Maf => FlowStack::maf(
                &mut store,
                "flow",
                config.dim,
                cond,
                config.flow_blocks,
                config.flow_hidden,
                config.autoregressive,
                &mut rng,
            )?,
        };
        Ok(Self {
            config,
            store,
            flow,
            conditioner,
            embedding,
            scale,
            epochs_completed: 0,
            optimizer: Vec::new(),
        })
    }

    fn embedding_index(&self) -> Vec<usize> {
        let e = self.config.covariates.embedding_dim;
        self.config
            .item_ids
            .iter()
            .flat_map(|&id| id * e..(id + 1) * e)
            .collect()
    }

    /// Embedding block `[1, D * e]` as a graph node.
    pub fn embedding_var(&self, g: &mut Graph) -> Result<Option<Var>> {
        match self.embedding {
            Some(id) => {
                let p = g.param(&self.store, id);
                Ok(Some(g.gather_cols(p, &self.embedding_index())?))
            }
            None => Ok(None),
        }
    }

    pub fn embedding_values(&self) -> Vec<f64> {
        match self.embedding {
            Some(id) => {
                let v = self.store.value(id).data();
                self.embedding_index().into_iter().map(|k| v[k]).collect()
            }
            None => Vec::new(),
        }
    }

    pub fn covariate_builder(&self, ds: &SeriesDataset) -> Result<CovariateBuilder> {
        let spec = CovariateSpec::for_dataset(ds);
        let own = &self.config.covariates;
        if spec.dim != own.dim
            || spec.freq != own.freq
            || spec.dynamic_features != own.dynamic_features
        {
            return Err(Error::Config(format!(
                "dataset ({} dims, {} frequency, {} dynamic features) does not match the model ({} dims, {}, {})",
                spec.dim, spec.freq, spec.dynamic_features, own.dim, own.freq, own.dynamic_features
            )));
        }
        Ok(CovariateBuilder::new(own.clone(), ds))
    }

    /// Scaled, time-major copy of the whole dataset.
    pub fn scaled_history(&self, ds: &SeriesDataset) -> Vec<f64> {
        let mut h = ds.time_major(0, ds.len());
        self.scale.scale(&mut h);
        h
    }

    /// Window of `len` steps at `start`. Count data is dequantized before
    /// scaling, once per window.
    pub fn make_window(
        &self,
        ds: &SeriesDataset,
        builder: &CovariateBuilder,
        history: &[f64],
        start: usize,
        len: usize,
        rng: &mut impl Rng,
    ) -> Window {
        let mut x = ds.time_major(start, start + len);
        if self.config.domain == Domain::Count {
            x = crate::flow::dequantize(&x, rng);
        }
        self.scale.scale(&mut x);
        let cov = builder.rows(start, start + len + 1, history, 0);
        Window {
            start,
            x: Tensor::matrix(len, self.config.dim, x),
            cov: Tensor::matrix(len + 1, builder.spec.numeric_width(), cov),
        }
    }

    fn with_embedding(&self, g: &mut Graph, base: Tensor, emb: Option<Var>) -> Result<Var> {
        let rows = base.rows();
        let b = g.constant(base);
        match emb {
            Some(e) => {
                let zeros = g.constant(Tensor::zeros(rows, g.dims(e).1));
                let e = g.add(zeros, e)?;
                g.concat_cols(&[b, e])
            }
            None => Ok(b),
        }
    }

    /// Conditioning rows and their targets for a batch of equal-length
    /// windows. Returns `(h, x, step index of each row)`.
    pub fn condition_windows(
        &self,
        g: &mut Graph,
        windows: &[Window],
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Var, Vec<usize>)> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Empty("no windows in batch".into()))?;
        let t_len = first.x.rows();
        if windows
            .iter()
            .any(|w| w.x.rows() != t_len || w.cov.rows() != t_len + 1)
        {
            return Err(Error::LengthMismatch(
                "windows in a batch must share one length".into(),
            ));
        }
        let b = windows.len();
        let emb = self.embedding_var(g)?;
        match &self.conditioner {
            Conditioner::Rnn(rnn) => {
                let stack = |f: &dyn Fn(&Window) -> Tensor| {
                    let parts: Vec<Tensor> = windows.iter().map(f).collect();
                    Tensor::vstack(&parts.iter().collect::<Vec<_>>())
                };
                let mut xs = Vec::with_capacity(t_len);
                let mut cs = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let xt = stack(&|w: &Window| rows_of(&w.x, t, t + 1))?;
                    xs.push(g.constant(xt));
                    let ct = stack(&|w: &Window| rows_of(&w.cov, t + 1, t + 2))?;
                    cs.push(self.with_embedding(g, ct, emb)?);
                }
                let hs = rnn.condition(g, &self.store, &xs, &cs)?;
                let h = g.concat_rows(&hs)?;
                let x = g.concat_rows(&xs)?;
                Ok((h, x, (0..t_len * b).map(|r| r / b).collect()))
            }
            Conditioner::Attention(att) => {
                let t0 = self.config.context_length;
                if t0 == 0 || t0 >= t_len {
                    return Err(Error::Config(format!(
                        "context length {t0} must lie in [1, {t_len}) for windows of {t_len} steps"
                    )));
                }
                let mut hs = Vec::with_capacity(b);
                let mut targets = Vec::with_capacity(b);
                for w in windows {
                    let enc = hcat(&[&rows_of(&w.x, 0, t0), &rows_of(&w.cov, 0, t0)]);
                    let dec = hcat(&[
                        &rows_of(&w.x, t0 - 1, t_len - 1),
                        &rows_of(&w.cov, t0, t_len),
                    ]);
                    let enc = self.with_embedding(g, enc, emb)?;
                    let dec = self.with_embedding(g, dec, emb)?;
                    hs.push(att.condition(
                        g,
                        &self.store,
                        enc,
                        dec,
                        dropout.as_deref_mut().map(|r| r as &mut dyn RngCore),
                    )?);
                    targets.push(rows_of(&w.x, t0, t_len));
                }
                let h = g.concat_rows(&hs)?;
                let x = g.constant(Tensor::vstack(&targets.iter().collect::<Vec<_>>())?);
                let p = t_len - t0;
                Ok((h, x, (0..b * p).map(|r| t0 + r % p).collect()))
            }
        }
    }

    /// Mean negative log-likelihood of the batch and the pending batch-norm
    /// statistics. The flow must be in training mode for gradient steps.
    pub fn negative_log_likelihood(
        &self,
        g: &mut Graph,
        windows: &[Window],
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Vec<(usize, BatchStats)>)> {
        let (h, x, steps) = self.condition_windows(g, windows, dropout)?;
        let hv = g.value(h);
        let cols = hv.cols();
        if let Some(r) = (0..hv.rows()).find(|&r| {
            hv.data()[r * cols..(r + 1) * cols]
                .iter()
                .any(|v| !v.is_finite())
        }) {
            return Err(Error::NonFiniteLoss { step: steps[r] });
        }
        let (lp, updates) = self.flow.log_prob(g, &self.store, x, Some(h))?;
        if let Some(r) = g.value(lp).data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step: steps[r] });
        }
        let m = g.mean(lp);
        Ok((g.neg(m), updates))
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }
}
