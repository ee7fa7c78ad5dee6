use serde::{Deserialize, Serialize};

use crate::error::{KernelError, Result};
use crate::params::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Applies one bias-corrected Adam update to every parameter in `store`.
///
/// Every parameter must have a gradient; the store is left untouched if one
/// is missing.
pub fn optimizer_step(store: &mut ParamStore, grads: &Gradients, config: &AdamConfig) -> Result<()> {
    for id in store.ids() {
        let Some(g) = grads.get(id) else {
            return Err(KernelError::MissingGradient(store.name(id).to_string()));
        };
        if g.shape() != store.get(id).shape() {
            return Err(KernelError::Shape {
                op: "optimizer_step",
                detail: format!(
                    "gradient {:?} for `{}` of shape {:?}",
                    g.shape(),
                    store.name(id),
                    store.get(id).shape()
                ),
            });
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = grads.get(id).expect("checked above").data();
        let (value, moments) = store.value_and_moments_mut(id);
        for (((p, m), v), &gi) in value
            .data_mut()
            .iter_mut()
            .zip(moments.first.iter_mut())
            .zip(moments.second.iter_mut())
            .zip(g)
        {
            *m = config.beta1 * *m + (1.0 - config.beta1) * gi;
            *v = config.beta2 * *v + (1.0 - config.beta2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
