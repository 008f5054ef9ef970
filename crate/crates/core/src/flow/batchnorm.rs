use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

use super::Mode;

/// Batch statistics observed during one training-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalization used as a bijection:
/// `y = (x - mean) / sqrt(var + eps) * exp(log_gain) + bias`.
///
/// Training mode normalizes with the statistics of the current batch (and
/// differentiates through them); inference mode uses moving averages and is a
/// fixed per-coordinate affine map.
#[derive(Clone, Debug)]
pub struct BatchNormBijection {
    pub dim: usize,
    pub log_gain: ParamId,
    pub bias: ParamId,
    pub momentum: f64,
    pub eps: f64,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    recorded: bool,
}

impl BatchNormBijection {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            dim,
            log_gain: store.add(format!("{name}.log_gain"), Tensor::zeros(1, dim)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, dim)),
            momentum: 0.9,
            eps: 1e-5,
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            recorded: false,
        }
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    pub fn has_statistics(&self) -> bool {
        self.recorded
    }

    /// Overwrite the moving statistics (checkpoint restore, tests).
    pub fn set_statistics(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        if mean.len() != self.dim || var.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "batchnorm statistics",
                left: vec![self.dim],
                right: vec![mean.len(), var.len()],
            });
        }
        self.running_mean = mean;
        self.running_var = var;
        self.recorded = true;
        Ok(())
    }

    /// Fold one batch into the moving averages. The first batch initializes
    /// them directly.
    pub fn update(&mut self, stats: &BatchStats) {
        if !self.recorded {
            self.running_mean.clone_from(&stats.mean);
            self.running_var.clone_from(&stats.var);
            self.recorded = true;
            return;
        }
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    /// Returns `(y, logdet [B, 1], batch statistics in training mode)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Var, Option<BatchStats>)> {
        let (rows, _) = g.dims(x);
        let (mean, var_eps, stats) = match mode {
            Mode::Training => {
                if rows < 2 {
                    return Err(Error::BatchNorm(format!(
                        "training mode needs a batch of at least 2, got {rows}"
                    )));
                }
                let mean = g.mean_rows(x);
                let centered = g.sub(x, mean)?;
                let sq = g.square(centered)?;
                let var = g.mean_rows(sq);
                let stats = BatchStats {
                    mean: g.value(mean).data().to_vec(),
                    var: g.value(var).data().to_vec(),
                };
                let var_eps = g.affine(var, 1.0, self.eps);
                (mean, var_eps, Some(stats))
            }
            Mode::Inference => {
                if !self.recorded {
                    return Err(Error::BatchNorm(
                        "inference requested before any statistics were recorded".into(),
                    ));
                }
                let mean = g.constant(Tensor::row_vector(self.running_mean.clone()));
                let ve = self.running_var.iter().map(|v| v + self.eps).collect();
                let var_eps = g.constant(Tensor::row_vector(ve));
                (mean, var_eps, None)
            }
        };
        let sd = g.sqrt(var_eps);
        let centered = g.sub(x, mean)?;
        let normed = g.div(centered, sd)?;
        let lg = g.param(store, self.log_gain);
        let gain = g.exp(lg);
        let scaled = g.mul(normed, gain)?;
        let b = g.param(store, self.bias);
        let y = g.add(scaled, b)?;

        let log_var = g.log(var_eps);
        let half = g.affine(log_var, -0.5, 0.0);
        let per_dim = g.add(lg, half)?;
        let total = g.sum_last(per_dim);
        let zeros = g.constant(Tensor::zeros(rows, 1));
        let logdet = g.add(zeros, total)?;
        Ok((y, logdet, stats))
    }

    /// Inverse of the inference-mode map.
    pub fn inverse(&self, store: &ParamStore, y: &Tensor) -> Result<Tensor> {
        if !self.recorded {
            return Err(Error::BatchNorm(
                "inverse requested before any statistics were recorded".into(),
            ));
        }
        let lg = store.value(self.log_gain).data();
        let b = store.value(self.bias).data();
        let (rows, dim) = y.dims();
        let mut out = Vec::with_capacity(rows * dim);
        for r in 0..rows {
            for (j, &v) in y.row(r).iter().enumerate() {
                let sd = (self.running_var[j] + self.eps).sqrt();
                out.push((v - b[j]) * (-lg[j]).exp() * sd + self.running_mean[j]);
            }
        }
        Ok(Tensor::matrix(rows, dim, out))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.log_gain, self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(
        bn: &BatchNormBijection,
        store: &ParamStore,
        x: Tensor,
        mode: Mode,
    ) -> (Tensor, Tensor, Option<BatchStats>) {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let (y, ld, st) = bn.forward(&mut g, store, xv, mode).unwrap();
        (g.value(y).clone(), g.value(ld).clone(), st)
    }

    #[test]
    fn normalized_batch_is_nearly_unchanged() {
        let mut store = ParamStore::new();
        let bn = BatchNormBijection::new(&mut store, "bn", 2);
        // Per-dimension mean 0, biased variance 1.
        let x = Tensor::from_rows(&[
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        let (y, ld, _) = run(&bn, &store, x.clone(), Mode::Training);
        assert!(y.max_abs_diff(&x) < 1e-5);
        let expected = -0.5 * 2.0 * (1.0f64 + 1e-5).ln();
        for &v in ld.data() {
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_batch_stays_finite() {
        let mut store = ParamStore::new();
        let bn = BatchNormBijection::new(&mut store, "bn", 3);
        let (y, ld, st) = run(&bn, &store, Tensor::full(5, 3, 2.5), Mode::Training);
        assert!(y.is_finite() && ld.is_finite());
        assert_eq!(st.unwrap().var, vec![0.0; 3]);
    }

    #[test]
    fn training_needs_two_rows_and_inference_needs_statistics() {
        let mut store = ParamStore::new();
        let mut bn = BatchNormBijection::new(&mut store, "bn", 2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::row_vector(vec![1.0, 2.0]));
        assert!(matches!(
            bn.forward(&mut g, &store, x, Mode::Training),
            Err(Error::BatchNorm(_))
        ));
        assert!(matches!(
            bn.forward(&mut g, &store, x, Mode::Inference),
            Err(Error::BatchNorm(_))
        ));
        bn.update(&BatchStats {
            mean: vec![0.0, 1.0],
            var: vec![1.0, 4.0],
        });
        assert!(bn.forward(&mut g, &store, x, Mode::Inference).is_ok());
    }

    #[test]
    fn moving_average_uses_momentum() {
        let mut store = ParamStore::new();
        let mut bn = BatchNormBijection::new(&mut store, "bn", 1);
        bn.update(&BatchStats {
            mean: vec![1.0],
            var: vec![2.0],
        });
        bn.update(&BatchStats {
            mean: vec![3.0],
            var: vec![4.0],
        });
        assert!((bn.running_mean()[0] - (0.9 * 1.0 + 0.1 * 3.0)).abs() < 1e-15);
        assert!((bn.running_var()[0] - (0.9 * 2.0 + 0.1 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn inference_logdet_matches_formula() {
        let mut store = ParamStore::new();
        let mut bn = BatchNormBijection::new(&mut store, "bn", 2);
        store
            .value_mut(bn.log_gain)
            .data_mut()
            .copy_from_slice(&[0.3, -0.2]);
        bn.set_statistics(vec![0.5, -1.0], vec![2.0, 0.25]).unwrap();
        let (_, ld, _) = run(
            &bn,
            &store,
            Tensor::row_vector(vec![0.0, 0.0]),
            Mode::Inference,
        );
        let expected = 0.3 - 0.5 * (2.0f64 + 1e-5).ln() - 0.2 - 0.5 * (0.25f64 + 1e-5).ln();
        assert!((ld.item() - expected).abs() < 1e-14);
    }
}
