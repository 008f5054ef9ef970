use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::{dropout, LayerNorm, Linear};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Upper-triangular (future) positions of a `rows x cols` score matrix.
fn causal_mask(rows: usize, cols: usize) -> Vec<bool> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| j > i))
        .collect()
}

/// `softmax(Q K^T / sqrt(d_k) + M) V` for one head. Causal masking sets the
/// scores above the diagonal to `-inf` before the softmax. Returns the output
/// and the attention weights.
pub fn scaled_dot_product(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    causal: bool,
) -> Result<(Var, Var)> {
    let (tq, dk) = g.dims(q);
    let (tk, dk2) = g.dims(k);
    if dk != dk2 {
        return Err(Error::ShapeMismatch {
            op: "attention",
            left: vec![tq, dk],
            right: vec![tk, dk2],
        });
    }
    if g.dims(v).0 != tk {
        return Err(Error::ShapeMismatch {
            op: "attention values",
            left: vec![tk, dk2],
            right: vec![g.dims(v).0, g.dims(v).1],
        });
    }
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    g.counters_mut().attention_score_macs += (tq * tk * dk) as u64;
    let mut scores = g.affine(scores, 1.0 / (dk as f64).sqrt(), 0.0);
    if causal {
        scores = g.masked_fill(scores, &causal_mask(tq, tk), f64::NEG_INFINITY)?;
    }
    let weights = g.softmax_last(scores);
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

/// Multi-head attention with learned projections; head outputs are
/// concatenated and projected again.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || d_model / heads == 0 {
            return Err(Error::ZeroKeyDim);
        }
        if !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            d_model,
            d_k: d_model / heads,
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, 1.0, rng),
            key: Linear::new(store, &format!("{name}.key"), d_model, d_model, 1.0, rng),
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, 1.0, rng),
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, 1.0, rng),
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query_in: Var,
        kv_in: Var,
        causal: bool,
    ) -> Result<Var> {
        let q = self.query.forward(g, store, query_in)?;
        let k = self.key.forward(g, store, kv_in)?;
        let v = self.value.forward(g, store, kv_in)?;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * self.d_k, (h + 1) * self.d_k);
            let qh = g.slice_cols(q, a, b)?;
            let kh = g.slice_cols(k, a, b)?;
            let vh = g.slice_cols(v, a, b)?;
            outs.push(scaled_dot_product(g, qh, kh, vh, causal)?.0);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.output.forward(g, store, cat)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ff_width: usize,
    pub dropout: f64,
    /// Residual connections around every sublayer. Only turned off for probes.
    pub residual: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 8,
            encoder_layers: 3,
            decoder_layers: 3,
            ff_width: 64,
            dropout: 0.1,
            residual: true,
        }
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    inner: Linear,
    outer: Linear,
}

impl FeedForward {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let a = self.inner.forward(g, store, x)?;
        let a = g.relu(a);
        self.outer.forward(g, store, a)
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
}

/// Encoder-decoder conditioner. The encoder attends over the context window
/// without a mask; the decoder attends causally over its own inputs and
/// freely over the encoder output. Decoder position `t` reads
/// `concat(x_{t-1}, c_{t-1})`.
#[derive(Clone, Debug)]
pub struct AttentionConditioner {
    pub config: AttentionConfig,
    pub input_dim: usize,
    encoder_in: Linear,
    decoder_in: Linear,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
}

impl AttentionConditioner {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        config: AttentionConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = config.d_model;
        let ff = |store: &mut ParamStore, n: &str, rng: &mut dyn RngCore| FeedForward {
            inner: Linear::new(
                store,
                &format!("{n}.ff.inner"),
                d,
                config.ff_width,
                1.0,
                rng,
            ),
            outer: Linear::new(
                store,
                &format!("{n}.ff.outer"),
                config.ff_width,
                d,
                1.0,
                rng,
            ),
        };
        let encoder_in = Linear::new(store, &format!("{name}.encoder_in"), input_dim, d, 1.0, rng);
        let decoder_in = Linear::new(store, &format!("{name}.decoder_in"), input_dim, d, 1.0, rng);
        let mut encoder = Vec::new();
        for l in 0..config.encoder_layers {
            let n = format!("{name}.encoder.{l}");
            encoder.push(EncoderLayer {
                attn: MultiHeadAttention::new(store, &format!("{n}.attn"), d, config.heads, rng)?,
                norm1: LayerNorm::new(store, &format!("{n}.norm1"), d),
                ff: ff(store, &n, rng),
                norm2: LayerNorm::new(store, &format!("{n}.norm2"), d),
            });
        }
        let mut decoder = Vec::new();
        for l in 0..config.decoder_layers {
            let n = format!("{name}.decoder.{l}");
            decoder.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(
                    store,
                    &format!("{n}.self_attn"),
                    d,
                    config.heads,
                    rng,
                )?,
                norm1: LayerNorm::new(store, &format!("{n}.norm1"), d),
                cross_attn: MultiHeadAttention::new(
                    store,
                    &format!("{n}.cross_attn"),
                    d,
                    config.heads,
                    rng,
                )?,
                norm2: LayerNorm::new(store, &format!("{n}.norm2"), d),
                ff: ff(store, &n, rng),
                norm3: LayerNorm::new(store, &format!("{n}.norm3"), d),
            });
        }
        Ok(Self {
            config,
            input_dim,
            encoder_in,
            decoder_in,
            encoder,
            decoder,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.d_model
    }

    /// Output projections of every attention block (used by probes).
    pub fn attention_output_params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        for l in &self.encoder {
            p.push(l.attn.output.weight);
        }
        for l in &self.decoder {
            p.push(l.self_attn.output.weight);
            p.push(l.cross_attn.output.weight);
        }
        p
    }

    fn sublayer(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        out: Var,
        norm: &LayerNorm,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let out = match rng {
            Some(r) => dropout(g, out, self.config.dropout, &mut **r)?,
            None => out,
        };
        let sum = if self.config.residual {
            g.add(x, out)?
        } else {
            out
        };
        norm.forward(g, store, sum)
    }

    /// Encode `[Tc, input_dim]` context rows. Dropout is applied when `rng`
    /// is given.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        context: Var,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let (tc, w) = g.dims(context);
        if w != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "encoder input",
                left: vec![tc, w],
                right: vec![tc, self.input_dim],
            });
        }
        let mut x = self.encoder_in.forward(g, store, context)?;
        for layer in &self.encoder {
            let a = layer.attn.forward(g, store, x, x, false)?;
            x = self.sublayer(g, store, x, a, &layer.norm1, &mut rng)?;
            let f = layer.ff.forward(g, store, x)?;
            x = self.sublayer(g, store, x, f, &layer.norm2, &mut rng)?;
        }
        Ok(x)
    }

    /// Decode `[Tp, input_dim]` shifted inputs against encoder `memory`.
    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: Var,
        inputs: Var,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let (tp, w) = g.dims(inputs);
        if w != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "decoder input",
                left: vec![tp, w],
                right: vec![tp, self.input_dim],
            });
        }
        let mut y = self.decoder_in.forward(g, store, inputs)?;
        for layer in &self.decoder {
            let a = layer.self_attn.forward(g, store, y, y, true)?;
            y = self.sublayer(g, store, y, a, &layer.norm1, &mut rng)?;
            let c = layer.cross_attn.forward(g, store, y, memory, false)?;
            y = self.sublayer(g, store, y, c, &layer.norm2, &mut rng)?;
            let f = layer.ff.forward(g, store, y)?;
            y = self.sublayer(g, store, y, f, &layer.norm3, &mut rng)?;
        }
        Ok(y)
    }

    /// Conditioning for the prediction range of one sequence. `context` rows
    /// are `concat(x_t, c_t)` for the context range; `future_inputs` rows are
    /// the shifted `concat(x_{t-1}, c_{t-1})` for the prediction range.
    pub fn condition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        context: Var,
        future_inputs: Var,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let reborrow: Option<&mut dyn RngCore> = match &mut rng {
            Some(r) => Some(&mut **r),
            None => None,
        };
        let memory = self.encode(g, store, context, reborrow)?;
        self.decode(g, store, memory, future_inputs, rng)
    }

    /// Conditioning of the last decoder position only, detached. Used for
    /// step-by-step sampling.
    pub fn decode_last(
        &self,
        store: &ParamStore,
        memory: &Tensor,
        inputs: &Tensor,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = g.constant(memory.clone());
        let i = g.constant(inputs.clone());
        let y = self.decode(&mut g, store, m, i, None)?;
        let rows = g.dims(y).0;
        let last = g.slice_rows(y, rows - 1, rows)?;
        Ok(g.value(last).clone())
    }

    pub fn encode_values(&self, store: &ParamStore, context: &Tensor) -> Result<Tensor> {
        if context.is_empty() {
            return Err(Error::Empty(
                "attention conditioner needs a non-empty warm-up context".into(),
            ));
        }
        let mut g = Graph::new();
        let c = g.constant(context.clone());
        let m = self.encode(&mut g, store, c, None)?;
        Ok(g.value(m).clone())
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        p.extend(self.encoder_in.params());
        p.extend(self.decoder_in.params());
        let ln = |n: &LayerNorm| [n.gain, n.bias];
        let ffp = |f: &FeedForward| {
            f.inner
                .params()
                .into_iter()
                .chain(f.outer.params())
                .collect::<Vec<_>>()
        };
        for l in &self.encoder {
            p.extend(l.attn.params());
            p.extend(ln(&l.norm1));
            p.extend(ffp(&l.ff));
            p.extend(ln(&l.norm2));
        }
        for l in &self.decoder {
            p.extend(l.self_attn.params());
            p.extend(ln(&l.norm1));
            p.extend(l.cross_attn.params());
            p.extend(ln(&l.norm2));
            p.extend(ffp(&l.ff));
            p.extend(ln(&l.norm3));
        }
        p
    }
}
