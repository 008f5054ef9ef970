use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// One-hidden-layer ELU network used for the coupling scale and translation.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        out_gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), in_dim, hidden, 1.0, rng),
            out: Linear::new(
                store,
                &format!("{name}.out"),
                hidden,
                out_dim,
                out_gain,
                rng,
            ),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let a = self.hidden.forward(g, store, x)?;
        let a = g.elu(a, 1.0);
        self.out.forward(g, store, a)
    }
}

/// Affine coupling bijection conditioned on `h`.
///
/// The kept block passes through unchanged; the transformed block becomes
/// `x * exp(s) + t` where `s` and `t` read the kept block concatenated with
/// `h`. Without `swap` the first `split` coordinates are kept, with `swap`
/// the last `dim - split` are kept and the first `split` are transformed.
#[derive(Clone, Debug)]
pub struct CouplingLayer {
    pub dim: usize,
    pub cond_dim: usize,
    pub split: usize,
    pub swap: bool,
    pub scale_net: Mlp,
    pub translate_net: Mlp,
    /// Learned per-coordinate bound: `s = bound * tanh(raw)`.
    pub scale_bound: ParamId,
}

impl CouplingLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cond_dim: usize,
        hidden: usize,
        swap: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::CouplingDimension { dim });
        }
        let split = dim / 2;
        let (kept, moved) = if swap {
            (dim - split, split)
        } else {
            (split, dim - split)
        };
        let in_dim = kept + cond_dim;
        Ok(Self {
            dim,
            cond_dim,
            split,
            swap,
            scale_net: Mlp::new(
                store,
                &format!("{name}.scale"),
                in_dim,
                hidden,
                moved,
                0.1,
                rng,
            ),
            translate_net: Mlp::new(
                store,
                &format!("{name}.translate"),
                in_dim,
                hidden,
                moved,
                0.1,
                rng,
            ),
            scale_bound: store.add(format!("{name}.scale_bound"), Tensor::full(1, moved, 1.0)),
        })
    }

    /// Column ranges `(kept, transformed)`.
    pub fn blocks(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        if self.swap {
            (self.split..self.dim, 0..self.split)
        } else {
            (0..self.split, self.split..self.dim)
        }
    }

    fn scale_shift(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        kept: Var,
        h: Option<Var>,
    ) -> Result<(Var, Var)> {
        let inp = match h {
            Some(h) => g.concat_cols(&[kept, h])?,
            None => kept,
        };
        let raw = self.scale_net.forward(g, store, inp)?;
        let bound = g.param(store, self.scale_bound);
        let th = g.tanh(raw);
        let s = g.mul(th, bound)?;
        let t = self.translate_net.forward(g, store, inp)?;
        Ok((s, t))
    }

    fn join(&self, g: &mut Graph, kept: Var, moved: Var) -> Result<Var> {
        if self.swap {
            g.concat_cols(&[moved, kept])
        } else {
            g.concat_cols(&[kept, moved])
        }
    }

    /// Returns `(y, logdet)` with `logdet: [B, 1]` equal to the row sums of `s`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h: Option<Var>,
    ) -> Result<(Var, Var)> {
        let (keep, moved) = self.blocks();
        let xk = g.slice_cols(x, keep.start, keep.end)?;
        let xm = g.slice_cols(x, moved.start, moved.end)?;
        let (s, t) = self.scale_shift(g, store, xk, h)?;
        let es = g.exp(s);
        let scaled = g.mul(xm, es)?;
        let ym = g.add(scaled, t)?;
        let y = self.join(g, xk, ym)?;
        let logdet = g.sum_last(s);
        Ok((y, logdet))
    }

    pub fn inverse(&self, store: &ParamStore, y: &Tensor, h: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let yv = g.constant(y.clone());
        let hv = h.map(|h| g.constant(h.clone()));
        let (keep, moved) = self.blocks();
        let yk = g.slice_cols(yv, keep.start, keep.end)?;
        let ym = g.slice_cols(yv, moved.start, moved.end)?;
        let (s, t) = self.scale_shift(&mut g, store, yk, hv)?;
        let shifted = g.sub(ym, t)?;
        let neg_s = g.neg(s);
        let es = g.exp(neg_s);
        let xm = g.mul(shifted, es)?;
        let x = self.join(&mut g, yk, xm)?;
        let out = g.value(x).clone();
        if !out.is_finite() {
            return Err(Error::NonFinite("coupling inverse".into()));
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        p.extend(self.scale_net.hidden.params());
        p.extend(self.scale_net.out.params());
        p.extend(self.translate_net.hidden.params());
        p.extend(self.translate_net.out.params());
        p.push(self.scale_bound);
        p
    }
}
