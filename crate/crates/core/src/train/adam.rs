use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of a flat slice at step `t >= 1`.
pub fn adam_update<F: Scalar>(
    param: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    lr: f64,
    t: u64,
    cfg: &AdamConfig,
) {
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    // lr * m_hat / (sqrt(v_hat) + eps), with the corrections folded in
    let step = F::of(lr / c1);
    let sc2 = F::of(c2.sqrt());
    let eps = F::of(cfg.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (F::one() - b1) * g;
        v[i] = b2 * v[i] + (F::one() - b2) * g * g;
        param[i] -= step * m[i] / (v[i].sqrt() / sc2 + eps);
    }
}

/// Adam without weight decay over every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<F: Scalar> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = |s: &ParamStore<F>| s.iter().map(|(_, p)| vec![F::zero(); p.value().len()]).collect();
        Self { config, t: 0, m: zeros(store), v: zeros(store) }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply the accumulated gradients. A non-finite gradient anywhere
    /// aborts the update before any parameter changes.
    pub fn step(&mut self, store: &mut ParamStore<F>, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Invalid("optimizer state does not match parameters".into()));
        }
        for (_, p) in store.iter() {
            if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at index {i} is {}; step {} skipped",
                    p.name,
                    p.grad.data()[i].as_f64(),
                    self.t + 1
                )));
            }
        }
        self.t += 1;
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let grad = std::mem::replace(&mut p.grad, crate::tensor::Tensor::zeros(&[0]));
            adam_update(p.value_mut().data_mut(), grad.data(), &mut self.m[k], &mut self.v[k], lr, self.t, &self.config);
            p.grad = grad;
        }
        Ok(())
    }
}
