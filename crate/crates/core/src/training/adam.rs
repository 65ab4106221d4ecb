use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first: ModelParams,
    pub second: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

/// Rescale `grads` so their global L2 norm is at most `max_norm` (0 disables
/// clipping). Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale_in_place(max_norm / norm);
    }
    norm
}

/// One bias-corrected Adam update after global-norm clipping. Non-finite
/// gradients abort the step before anything is modified. Returns the
/// pre-clipping gradient norm.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    opt: &mut OptimizerState,
    tc: &TrainConfig,
) -> Result<f64> {
    if !grads.is_finite() {
        return Err(Error::non_finite("gradients", Some(opt.step as usize)));
    }
    let mut g = grads.clone();
    let norm = clip_global_norm(&mut g, tc.clip_norm);

    opt.step += 1;
    let gs = g.arrays();
    let ms = opt.first.arrays_mut();
    let vs = opt.second.arrays_mut();
    let ps = params.arrays_mut();
    if gs.len() != ps.len() || ms.len() != ps.len() || vs.len() != ps.len() {
        return Err(Error::Argument("optimizer state does not mirror parameters".into()));
    }
    for ((((_, p), (_, gr)), (_, m)), (_, v)) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        if p.shape() != gr.shape() {
            return Err(Error::dim("adam_step", p.shape(), gr.shape()));
        }
        adam_update(
            p.data_mut(),
            gr.data(),
            m.data_mut(),
            v.data_mut(),
            opt.step,
            tc,
        );
    }
    Ok(norm)
}

/// Elementwise Adam update for step `t` (1-based) on flat slices.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    t: u64,
    tc: &TrainConfig,
) {
    let (b1, b2) = (tc.beta1, tc.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(first).zip(second) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= tc.learning_rate * mhat / (vhat.sqrt() + tc.adam_eps);
    }
}
