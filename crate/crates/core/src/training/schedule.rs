use std::f64::consts::PI;

use crate::autodiff::ParamStore;
use crate::error::{LidError, Result};

/// Cosine-annealed learning rate from `lr_init` at step 0 to `lr_min` at
/// `total_steps`, held at `lr_min` afterwards.
pub fn cosine_lr(step: u64, lr_init: f64, lr_min: f64, total_steps: u64) -> f64 {
    let total = total_steps.max(1);
    if step >= total {
        return lr_min;
    }
    let progress = step as f64 / total as f64;
    lr_min + (lr_init - lr_min) * 0.5 * (1.0 + (PI * progress).cos())
}

/// Plain SGD, `p ← p − lr·g`, using the gradients accumulated in `store`.
/// Non-trainable parameters are left alone.
pub fn sgd_step(store: &mut ParamStore, lr: f64) -> Result<()> {
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        let param = store.get_mut(id);
        let name = param.name().to_string();
        let (value, grad) = param.value_and_grad_mut();
        let grad = grad.ok_or_else(|| LidError::Contract(format!("no gradient for trainable parameter `{name}`")))?;
        if grad.shape() != value.shape() {
            return Err(LidError::ParamShape {
                name,
                expected: value.shape().to_vec(),
                found: grad.shape().to_vec(),
            });
        }
        let lr = lr as f32;
        for (p, g) in value.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * g;
        }
    }
    Ok(())
}
