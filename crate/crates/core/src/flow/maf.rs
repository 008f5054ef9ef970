use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Masked autoregressive affine bijection `z_i = (x_i - mu_i) * exp(-alpha_i)`.
///
/// `mu_i` and `alpha_i` come from a single masked hidden layer (MADE) and see
/// only the coordinates that precede `i` in `order`, plus the conditioning
/// vector. Density evaluation is one pass; inversion takes `dim` passes.
#[derive(Clone, Debug)]
pub struct MafLayer {
    pub dim: usize,
    pub cond_dim: usize,
    /// `order[j]` is the data coordinate at autoregressive position `j`.
    pub order: Vec<usize>,
    inverse_order: Vec<usize>,
    pub hidden: Linear,
    pub shift_out: Linear,
    pub log_scale_out: Linear,
    /// Learned bound: `alpha = bound * tanh(raw)`.
    pub log_scale_bound: ParamId,
    /// Hidden unit degrees; unit `k` sees positions `< degrees[k] + 1`.
    degrees: Vec<usize>,
    in_mask: Tensor,
    out_mask: Tensor,
    autoregressive: bool,
}

fn invert(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (j, &d) in order.iter().enumerate() {
        inv[d] = j;
    }
    inv
}

impl MafLayer {
    /// Standard construction with cyclic hidden degrees `k mod dim`.
    ///
    /// With `autoregressive = false` the hidden layer ignores `x` entirely, so
    /// every coordinate is transformed independently given `h`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cond_dim: usize,
        hidden: usize,
        order: Vec<usize>,
        autoregressive: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let degrees = (0..hidden).map(|k| k % dim.max(1)).collect();
        Self::with_degrees(
            store,
            name,
            dim,
            cond_dim,
            order,
            degrees,
            autoregressive,
            rng,
        )
    }

    /// Construction with explicit hidden degrees. Masks are derived from the
    /// degrees and then checked; an assignment that would let output `i` see
    /// input `i` or later is rejected.
    #[allow(clippy::too_many_arguments)]
    pub fn with_degrees(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cond_dim: usize,
        order: Vec<usize>,
        degrees: Vec<usize>,
        autoregressive: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if dim == 0 || sorted != (0..dim).collect::<Vec<_>>() {
            return Err(Error::Config(format!(
                "MAF order {order:?} is not a permutation of 0..{dim}"
            )));
        }
        let hidden = degrees.len();
        if hidden == 0 {
            return Err(Error::Config("MAF hidden width must be positive".into()));
        }
        let in_dim = dim + cond_dim;
        // Input at position j has degree j + 1; conditioning inputs have degree 0.
        let mut in_mask = Tensor::zeros(in_dim, hidden);
        for (k, &m) in degrees.iter().enumerate() {
            for j in 0..dim {
                if autoregressive && j < m {
                    in_mask.set(j, k, 1.0);
                }
            }
            for c in 0..cond_dim {
                in_mask.set(dim + c, k, 1.0);
            }
        }
        // Output at position i (degree i + 1) reads hidden units with degree <= i.
        let mut out_mask = Tensor::zeros(hidden, dim);
        for (k, &m) in degrees.iter().enumerate() {
            for i in 0..dim {
                if m <= i {
                    out_mask.set(k, i, 1.0);
                }
            }
        }
        check_autoregressive(&in_mask, &out_mask, dim)?;
        let inverse_order = invert(&order);
        Ok(Self {
            dim,
            cond_dim,
            order,
            inverse_order,
            hidden: Linear::new(store, &format!("{name}.hidden"), in_dim, hidden, 1.0, rng),
            shift_out: Linear::new(store, &format!("{name}.shift"), hidden, dim, 0.1, rng),
            log_scale_out: Linear::new(store, &format!("{name}.log_scale"), hidden, dim, 0.1, rng),
            log_scale_bound: store
                .add(format!("{name}.log_scale_bound"), Tensor::full(1, dim, 1.0)),
            degrees,
            in_mask,
            out_mask,
            autoregressive,
        })
    }

    /// Replace the connectivity masks; used to probe mask validation.
    pub fn set_masks(&mut self, in_mask: Tensor, out_mask: Tensor) -> Result<()> {
        check_autoregressive(&in_mask, &out_mask, self.dim)?;
        self.in_mask = in_mask;
        self.out_mask = out_mask;
        Ok(())
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn in_mask(&self) -> &Tensor {
        &self.in_mask
    }

    pub fn out_mask(&self) -> &Tensor {
        &self.out_mask
    }

    pub fn is_autoregressive(&self) -> bool {
        self.autoregressive
    }

    /// Shift and log-scale in ordering space for `u` (already permuted).
    pub fn shift_log_scale(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        u: Var,
        h: Option<Var>,
    ) -> Result<(Var, Var)> {
        let inp = match h {
            Some(h) => g.concat_cols(&[u, h])?,
            None => u,
        };
        let a = self.hidden.forward_masked(g, store, inp, &self.in_mask)?;
        let a = g.elu(a, 1.0);
        let mu = self.shift_out.forward_masked(g, store, a, &self.out_mask)?;
        let raw = self
            .log_scale_out
            .forward_masked(g, store, a, &self.out_mask)?;
        let th = g.tanh(raw);
        let bound = g.param(store, self.log_scale_bound);
        let alpha = g.mul(th, bound)?;
        Ok((mu, alpha))
    }

    /// Returns `(z, logdet)` where `logdet = -sum(alpha)` per row.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h: Option<Var>,
    ) -> Result<(Var, Var)> {
        let u = g.gather_cols(x, &self.order)?;
        let (mu, alpha) = self.shift_log_scale(g, store, u, h)?;
        let centered = g.sub(u, mu)?;
        let neg = g.neg(alpha);
        let scale = g.exp(neg);
        let zu = g.mul(centered, scale)?;
        let z = g.gather_cols(zu, &self.inverse_order)?;
        let s = g.sum_last(alpha);
        let logdet = g.neg(s);
        Ok((z, logdet))
    }

    /// Sequential inversion: position `j` is recovered on pass `j`, after all
    /// earlier positions are final.
    pub fn inverse(&self, store: &ParamStore, z: &Tensor, h: Option<&Tensor>) -> Result<Tensor> {
        let (rows, dim) = z.dims();
        let mut u = Tensor::zeros(rows, dim);
        for j in 0..dim {
            let mut g = Graph::new();
            let uv = g.constant(u.clone());
            let hv = h.map(|h| g.constant(h.clone()));
            let (mu, alpha) = self.shift_log_scale(&mut g, store, uv, hv)?;
            let src = self.order[j];
            for r in 0..rows {
                let v = z.get(r, src) * g.value(alpha).get(r, j).exp() + g.value(mu).get(r, j);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("MAF inverse at position {j}")));
                }
                u.set(r, j, v);
            }
        }
        let mut x = Tensor::zeros(rows, dim);
        for r in 0..rows {
            for (j, &d) in self.order.iter().enumerate() {
                x.set(r, d, u.get(r, j));
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        p.extend(self.hidden.params());
        p.extend(self.shift_out.params());
        p.extend(self.log_scale_out.params());
        p.push(self.log_scale_bound);
        p
    }
}

/// Output position `i` may depend on input position `j` only when `j < i`.
fn check_autoregressive(in_mask: &Tensor, out_mask: &Tensor, dim: usize) -> Result<()> {
    let hidden = out_mask.rows();
    if in_mask.cols() != hidden || out_mask.cols() != dim || in_mask.rows() < dim {
        return Err(Error::ShapeMismatch {
            op: "maf masks",
            left: in_mask.shape().to_vec(),
            right: out_mask.shape().to_vec(),
        });
    }
    for i in 0..dim {
        for j in i..dim {
            let path = (0..hidden).any(|k| in_mask.get(j, k) != 0.0 && out_mask.get(k, i) != 0.0);
            if path {
                return Err(Error::MaskViolation {
                    output: i,
                    input: j,
                });
            }
        }
    }
    Ok(())
}
