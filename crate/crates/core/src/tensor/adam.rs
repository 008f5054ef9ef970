use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and step count for one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    name: &str,
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.m.len()],
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            param: name.to_string(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every non-frozen parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let states = store
            .ids()
            .map(|id| AdamState::new(store.value(id).len()))
            .collect();
        Self { config, states }
    }

    /// Continue from saved moment estimates; falls back to fresh state when
    /// the sizes do not match the store.
    pub fn with_states(config: AdamConfig, store: &ParamStore, states: Vec<AdamState>) -> Self {
        let fits = states.len() == store.len()
            && store
                .ids()
                .zip(&states)
                .all(|(id, s)| s.m.len() == store.value(id).len() && s.v.len() == s.m.len());
        if fits {
            Self { config, states }
        } else {
            Self::new(config, store)
        }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Apply one update using the gradients accumulated in `store`. Every
    /// gradient is checked before any parameter moves, so a non-finite
    /// gradient leaves the store untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids() {
            if !store.is_frozen(id) && store.grad(id).data().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: store.name(id).to_string(),
                });
            }
        }
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (name, value, grad, frozen) = store.param_mut_parts(id);
            if frozen {
                continue;
            }
            adam_step(
                name,
                value.data_mut(),
                grad.data(),
                &mut self.states[i],
                &self.config,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![0.5, -1.0, 2.0];
        let before = p.clone();
        let mut st = AdamState::new(3);
        for _ in 0..5 {
            adam_step("w", &mut p, &[0.0; 3], &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let cfg = AdamConfig::default();
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        adam_step("w", &mut p, &[1.0], &mut st, &cfg).unwrap();
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!(((1.0 - p[0]) - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = vec![0.3, -0.7];
            let mut st = AdamState::new(2);
            let mut traj = Vec::new();
            for i in 0..20 {
                let g = [p[0] * 2.0 + i as f64 * 0.01, (p[1] - 1.0).sin()];
                adam_step("w", &mut p, &g, &mut st, &AdamConfig::default()).unwrap();
                traj.push(p.clone());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::new();
        store.add("ok", Tensor::scalar(1.0));
        let bad = store.add("flow.0.scale.w", Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut g = crate::tensor::Graph::new();
        let v = g.param(&store, bad);
        let l = g.log(v);
        let z = g.affine(l, f64::INFINITY, 0.0);
        let s = g.sum(z);
        g.backward(s).unwrap();
        store.accumulate_grads(&g);
        let err = adam.step(&mut store).unwrap_err();
        assert!(err.to_string().contains("flow.0.scale.w"));
        assert_eq!(store.value(bad).item(), 1.0);
    }
}
