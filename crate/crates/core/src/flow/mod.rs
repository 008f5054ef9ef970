//! Conditional normalizing flows `p(x | h)` over `R^D`.
//!
//! A [`FlowStack`] maps data `x` to latent `z` through an ordered list of
//! bijections and scores `x` with the change-of-variables formula against an
//! isotropic standard normal base. Sampling runs the stack backwards.

mod batchnorm;
pub mod checkpoint;
mod coupling;
mod maf;

pub use batchnorm::{BatchNormBijection, BatchStats};
pub use coupling::{CouplingLayer, Mlp};
pub use maf::MafLayer;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// `ln(2 pi)`
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Training => "training",
            Mode::Inference => "inference",
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Coupling(CouplingLayer),
    Maf(MafLayer),
    BatchNorm(BatchNormBijection),
}

impl Layer {
    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Layer::Coupling(l) => l.params(),
            Layer::Maf(l) => l.params(),
            Layer::BatchNorm(l) => l.params().to_vec(),
        }
    }
}

/// Which bijection family a stack is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowKind {
    RealNvp,
    Maf,
}

/// Output of a forward (density-direction) pass.
#[derive(Debug)]
pub struct FlowPass {
    pub z: Var,
    /// Total log-determinant per row, `[B, 1]`.
    pub logdet: Var,
    /// Batch-norm statistics to fold into the moving averages once the step is
    /// known to be good. Pairs of `(layer index, stats)`.
    pub updates: Vec<(usize, BatchStats)>,
}

#[derive(Clone, Debug)]
pub struct FlowStack {
    pub dim: usize,
    pub cond_dim: usize,
    layers: Vec<Layer>,
    mode: Mode,
}

impl FlowStack {
    pub fn new(dim: usize, cond_dim: usize) -> Self {
        Self {
            dim,
            cond_dim,
            layers: Vec::new(),
            mode: Mode::Training,
        }
    }

    /// `blocks` coupling layers with alternating halves, each followed by a
    /// batch-norm bijection.
    pub fn real_nvp(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cond_dim: usize,
        blocks: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut stack = Self::new(dim, cond_dim);
        for k in 0..blocks {
            let c = CouplingLayer::new(
                store,
                &format!("{name}.{k}.coupling"),
                dim,
                cond_dim,
                hidden,
                k % 2 == 1,
                rng,
            )?;
            stack.push(Layer::Coupling(c))?;
            stack.push(Layer::BatchNorm(BatchNormBijection::new(
                store,
                &format!("{name}.{k}.bn"),
                dim,
            )))?;
        }
        Ok(stack)
    }

    /// `blocks` MAF layers with alternately reversed orderings, each followed
    /// by a batch-norm bijection.
    #[allow(clippy::too_many_arguments)]
    pub fn maf(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cond_dim: usize,
        blocks: usize,
        hidden: usize,
        autoregressive: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut stack = Self::new(dim, cond_dim);
        for k in 0..blocks {
            let mut order: Vec<usize> = (0..dim).collect();
            if k % 2 == 1 {
                order.reverse();
            }
            let m = MafLayer::new(
                store,
                &format!("{name}.{k}.maf"),
                dim,
                cond_dim,
                hidden,
                order,
                autoregressive,
                rng,
            )?;
            stack.push(Layer::Maf(m))?;
            stack.push(Layer::BatchNorm(BatchNormBijection::new(
                store,
                &format!("{name}.{k}.bn"),
                dim,
            )))?;
        }
        Ok(stack)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build(
        kind: FlowKind,
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cond_dim: usize,
        blocks: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        match kind {
            FlowKind::RealNvp => Self::real_nvp(store, name, dim, cond_dim, blocks, hidden, rng),
            FlowKind::Maf => Self::maf(store, name, dim, cond_dim, blocks, hidden, true, rng),
        }
    }

    pub fn push(&mut self, layer: Layer) -> Result<()> {
        let (d, c) = match &layer {
            Layer::Coupling(l) => (l.dim, Some(l.cond_dim)),
            Layer::Maf(l) => (l.dim, Some(l.cond_dim)),
            Layer::BatchNorm(l) => (l.dim, None),
        };
        if d != self.dim || c.is_some_and(|c| c != self.cond_dim) {
            return Err(Error::ShapeMismatch {
                op: "flow push",
                left: vec![self.dim, self.cond_dim],
                right: vec![d, c.unwrap_or(self.cond_dim)],
            });
        }
        self.layers.push(layer);
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    fn check_inputs(&self, g: &Graph, x: Var, h: Option<Var>) -> Result<()> {
        let (rows, d) = g.dims(x);
        if d != self.dim {
            return Err(Error::ShapeMismatch {
                op: "flow input",
                left: vec![rows, d],
                right: vec![rows, self.dim],
            });
        }
        match h {
            Some(h) if g.dims(h) != (rows, self.cond_dim) => Err(Error::ShapeMismatch {
                op: "flow conditioning",
                left: vec![g.dims(h).0, g.dims(h).1],
                right: vec![rows, self.cond_dim],
            }),
            None if self.cond_dim != 0 => Err(Error::ShapeMismatch {
                op: "flow conditioning",
                left: vec![],
                right: vec![rows, self.cond_dim],
            }),
            _ => Ok(()),
        }
    }

    /// Data-to-latent pass `z = f(x | h)` with accumulated log-determinant.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h: Option<Var>,
    ) -> Result<FlowPass> {
        self.check_inputs(g, x, h)?;
        let rows = g.dims(x).0;
        let mut cur = x;
        let mut logdet = g.constant(Tensor::zeros(rows, 1));
        let mut updates = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, ld) = match layer {
                Layer::Coupling(l) => l.forward(g, store, cur, h)?,
                Layer::Maf(l) => l.forward(g, store, cur, h)?,
                Layer::BatchNorm(l) => {
                    let (y, ld, stats) = l.forward(g, store, cur, self.mode)?;
                    if let Some(s) = stats {
                        updates.push((i, s));
                    }
                    (y, ld)
                }
            };
            if !g.value(y).is_finite() || !g.value(ld).is_finite() {
                return Err(Error::NonFiniteFlow { layer: i });
            }
            logdet = g.add(logdet, ld)?;
            cur = y;
        }
        Ok(FlowPass {
            z: cur,
            logdet,
            updates,
        })
    }

    /// Per-row `log p(x | h)`, shape `[B, 1]`, plus pending batch-norm updates.
    pub fn log_prob(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h: Option<Var>,
    ) -> Result<(Var, Vec<(usize, BatchStats)>)> {
        let pass = self.forward(g, store, x, h)?;
        let base = standard_normal_log_density(g, pass.z)?;
        let lp = g.add(base, pass.logdet)?;
        if !g.value(lp).is_finite() {
            return Err(Error::NonFiniteFlow {
                layer: self.layers.len(),
            });
        }
        Ok((lp, pass.updates))
    }

    /// Fold pending batch-norm statistics into the moving averages.
    pub fn commit(&mut self, updates: &[(usize, BatchStats)]) {
        for (i, stats) in updates {
            if let Some(Layer::BatchNorm(bn)) = self.layers.get_mut(*i) {
                bn.update(stats);
            }
        }
    }

    /// Convenience: `log p(x | h)` for plain tensors (no gradients kept).
    pub fn log_prob_values(
        &self,
        store: &ParamStore,
        x: &Tensor,
        h: Option<&Tensor>,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let hv = h.map(|h| g.constant(h.clone()));
        let (lp, _) = self.log_prob(&mut g, store, xv, hv)?;
        Ok(g.value(lp).data().to_vec())
    }

    /// Latent-to-data pass `x = f^-1(z | h)`. Only defined in inference mode.
    pub fn inverse(&self, store: &ParamStore, z: &Tensor, h: Option<&Tensor>) -> Result<Tensor> {
        if self.mode != Mode::Inference {
            return Err(Error::WrongMode {
                expected: Mode::Inference.name(),
                actual: self.mode.name(),
            });
        }
        if z.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "flow inverse",
                left: z.shape().to_vec(),
                right: vec![z.rows(), self.dim],
            });
        }
        let mut cur = z.clone();
        for layer in self.layers.iter().rev() {
            cur = match layer {
                Layer::Coupling(l) => l.inverse(store, &cur, h)?,
                Layer::Maf(l) => l.inverse(store, &cur, h)?,
                Layer::BatchNorm(l) => l.inverse(store, &cur)?,
            };
        }
        Ok(cur)
    }

    /// Draw one sample per row of `h` (or `rows` unconditional samples) at full
    /// base variance.
    pub fn sample(
        &self,
        store: &ParamStore,
        h: Option<&Tensor>,
        rows: usize,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        if self.mode != Mode::Inference {
            return Err(Error::WrongMode {
                expected: Mode::Inference.name(),
                actual: self.mode.name(),
            });
        }
        let rows = h.map_or(rows, Tensor::rows);
        let z = standard_normal(rows, self.dim, rng);
        self.inverse(store, &z, h)
    }
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Row-wise `log N(z; 0, I)`, shape `[B, 1]`.
pub fn standard_normal_log_density(g: &mut Graph, z: Var) -> Result<Var> {
    let d = g.dims(z).1 as f64;
    let sq = g.square(z)?;
    let s = g.sum_last(sq);
    Ok(g.affine(s, -0.5, -0.5 * d * LN_2PI))
}

/// Add `Uniform[0, 1)` noise to integer-valued observations.
pub fn dequantize(x: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    x.iter().map(|&v| v + rng.random::<f64>()).collect()
}
