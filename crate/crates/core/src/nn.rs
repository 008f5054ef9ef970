//! Small building blocks shared by the flow and conditioner modules.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut (impl Rng + ?Sized)) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform init in `±gain/sqrt(in_dim)`, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut (impl Rng + ?Sized),
    ) -> Self {
        let bound = gain / (in_dim.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(in_dim, out_dim, bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    /// Same as [`Linear::forward`] with `W` multiplied element-wise by a fixed
    /// 0/1 connectivity mask.
    pub fn forward_masked(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mask: &Tensor,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let m = g.constant(mask.clone());
        let wm = g.mul(w, m)?;
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, wm)?;
        g.add(xw, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Per-row normalization over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, dim)),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mu = g.mean_last(x);
        let centered = g.sub(x, mu)?;
        let sq = g.square(centered)?;
        let var = g.mean_last(sq);
        let var_eps = g.affine(var, 1.0, self.eps);
        let sd = g.sqrt(var_eps);
        let normed = g.div(centered, sd)?;
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let scaled = g.mul(normed, gain)?;
        g.add(scaled, bias)
    }
}

/// Inverted dropout: zero each entry with probability `rate` and rescale the
/// survivors by `1 / (1 - rate)`.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, rng: &mut (impl Rng + ?Sized)) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let (r, c) = g.dims(x);
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..r * c)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    let m = g.constant(Tensor::matrix(r, c, mask));
    g.mul(x, m)
}
