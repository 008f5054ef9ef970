use super::{Graph, Tensor};

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
    frozen: bool,
}

/// Flat registry of learnable tensors in declaration order.
///
/// Models keep [`ParamId`]s and pull values into a fresh [`Graph`] on every
/// forward pass; gradients flow back here after `backward`. Nothing in the
/// store references a graph, so parameter memory stays constant across steps.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Add the gradients a graph computed for its parameter leaves.
    pub fn accumulate_grads(&mut self, graph: &Graph) {
        for (id, var) in graph.param_vars() {
            if let Some(g) = graph.grad(var) {
                for (acc, v) in self.params[id.0].grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += v;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Flattened copy of every parameter value, in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Overwrite every parameter from a flat buffer in declaration order.
    pub fn load_flat(&mut self, data: &[f64]) -> crate::Result<()> {
        if data.len() != self.numel() {
            return Err(crate::Error::LengthMismatch(format!(
                "{} values for {} parameters",
                data.len(),
                self.numel()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&data[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub(crate) fn param_mut_parts(&mut self, id: ParamId) -> (&str, &mut Tensor, &Tensor, bool) {
        let p = &mut self.params[id.0];
        (&p.name, &mut p.value, &p.grad, p.frozen)
    }
}
