use std::f64::consts::PI;

use super::{HeadParams, TrainConfig};

/// Adam hyperparameters with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: HeadParams,
    pub v: HeadParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(like: &HeadParams) -> Self {
        OptimizerState {
            m: HeadParams::zeros(like.dim, like.hidden, like.n_classes),
            v: HeadParams::zeros(like.dim, like.hidden, like.n_classes),
            step: 0,
        }
    }
}

/// One AdamW update of a flat tensor. `step` is the 1-based step count used
/// for bias correction; `decay` selects whether weight decay applies.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    hp: &AdamW,
    decay: bool,
) {
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    let shrink = 1.0 - lr * hp.weight_decay;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        if decay {
            *p *= shrink;
        }
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// Applies one AdamW step to every tensor; weight matrices are decayed,
/// biases are not.
pub fn optimizer_step(
    params: &mut HeadParams,
    grads: &HeadParams,
    state: &mut OptimizerState,
    lr: f64,
    hp: &AdamW,
) {
    assert!(
        params.same_shape(grads),
        "gradient shape does not match parameters"
    );
    state.step += 1;
    let step = state.step;
    let OptimizerState { m, v, .. } = state;
    for ((((p, decay), (g, _)), (m, _)), (v, _)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m.tensors_mut())
        .zip(v.tensors_mut())
    {
        adamw_update(p, g, m, v, step, lr, hp, decay);
    }
}

/// Cosine-annealed learning rate for `epoch` in `0..=n_max`.
pub fn cosine_lr(epoch: usize, config: &TrainConfig) -> f64 {
    let t = epoch as f64 / config.n_max.max(1) as f64;
    let c = 0.5 * (1.0 + (PI * t).cos());
    // convex form keeps both endpoints exact
    config.lr_max * c + config.lr_min * (1.0 - c)
}
