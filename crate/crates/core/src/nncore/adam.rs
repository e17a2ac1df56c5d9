use super::{Gradients, NnError, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam over a fixed subset of a store's parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    /// Optimizer over every parameter currently in `store`.
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        Self::for_params(cfg, store, store.ids().collect())
    }

    pub fn for_params(cfg: AdamConfig, store: &ParamStore, ids: Vec<ParamId>) -> Self {
        let m = ids
            .iter()
            .map(|&id| Tensor::zeros(store.get(id).shape()))
            .collect();
        let v = ids
            .iter()
            .map(|&id| Tensor::zeros(store.get(id).shape()))
            .collect();
        Self {
            cfg,
            ids,
            m,
            v,
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), NnError> {
        for &id in &self.ids {
            let (p, g) = (store.get(id), grads.get(id));
            if p.shape() != g.shape() {
                return Err(NnError::ParamShape {
                    name: store.name(id).to_string(),
                    expected: p.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for (k, &id) in self.ids.iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_scalar(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    fn grad_of(store: &ParamStore, id: ParamId, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        grads.get_mut(id).data_mut()[0] = g;
        grads
    }

    /// Adam recurrence written out longhand for a scalar.
    fn adam_oracle(grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> Vec<f64> {
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut updates = Vec::new();
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            updates.push(-lr * mh / (vh.sqrt() + eps));
        }
        updates
    }

    #[test]
    fn zero_gradient_leaves_parameters_bit_identical() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![0.1, -3.7, 1e-9])).unwrap();
        let before = s.clone();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let g = Gradients::zeros_like(&s);
        adam.step(&mut s, &g).unwrap();
        assert_eq!(s, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = one_scalar(0.0);
        let cfg = AdamConfig::with_lr(0.1);
        let mut adam = Adam::new(cfg, &s);
        let g = grad_of(&s, id, 1.0);
        adam.step(&mut s, &g).unwrap();
        let expected = adam_oracle(&[1.0], 0.1, 0.9, 0.999, 1e-8)[0];
        assert!((expected + 0.1).abs() < 1e-8);
        assert!((s.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_steps_do_not_grow_the_update() {
        let (mut s, id) = one_scalar(0.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &s);
        let g = grad_of(&s, id, 1.0);
        adam.step(&mut s, &g).unwrap();
        let after_one = s.get(id).data()[0];
        let g = grad_of(&s, id, 1.0);
        adam.step(&mut s, &g).unwrap();
        let second = s.get(id).data()[0] - after_one;
        let oracle = adam_oracle(&[1.0, 1.0], 0.1, 0.9, 0.999, 1e-8);
        assert!((second - oracle[1]).abs() < 1e-15);
        assert!(oracle[1].abs() <= oracle[0].abs() * (1.0 + 1e-12));
        assert!(second.abs() <= after_one.abs() * (1.0 + 1e-12));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (mut s, _) = one_scalar(0.0);
        let mut other = ParamStore::new();
        other.add("x", Tensor::zeros(&[2])).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let err = adam
            .step(&mut s, &Gradients::zeros_like(&other))
            .unwrap_err();
        assert!(matches!(err, NnError::ParamShape { .. }));
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn subset_optimizer_ignores_other_parameters() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::scalar(1.0)).unwrap();
        let b = s.add("b", Tensor::scalar(1.0)).unwrap();
        let mut grads = Gradients::zeros_like(&s);
        grads.get_mut(a).data_mut()[0] = 1.0;
        grads.get_mut(b).data_mut()[0] = 1.0;
        let mut adam = Adam::for_params(AdamConfig::with_lr(0.1), &s, vec![a]);
        adam.step(&mut s, &grads).unwrap();
        assert!(s.get(a).data()[0] < 1.0);
        assert_eq!(s.get(b).data()[0], 1.0);
    }

    proptest::proptest! {
        #[test]
        fn zero_gradient_is_a_no_op_for_any_values(
            vals in proptest::collection::vec(-1e6f64..1e6, 1..20),
            lr in 1e-5f64..1.0,
        ) {
            let mut s = ParamStore::new();
            s.add("p", Tensor::vector(vals)).unwrap();
            let before = s.clone();
            let mut adam = Adam::new(AdamConfig::with_lr(lr), &s);
            let g = Gradients::zeros_like(&s);
        adam.step(&mut s, &g).unwrap();
            proptest::prop_assert_eq!(s, before);
        }
    }
}
