//! Global-norm clipping and Adam with the max-of-second-moment variant.


use crate::error::{Error, Result};
use crate::linalg::scale;
use crate::scalar::Scalar;

use super::{LossConfig, ParamSet};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moments and their running max, aligned with
/// `ParamSet::tensors` order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F: Scalar> {
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub vhat: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParamSet<F>) -> AdamState<F> {
        let zeros: Vec<Vec<F>> =
            params.tensors().iter().map(|t| vec![F::zero(); t.len()]).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros.clone(), vhat: zeros }
    }

    pub fn matches(&self, params: &ParamSet<F>) -> bool {
        let tensors = params.tensors();
        for moments in [&self.m, &self.v, &self.vhat] {
            if moments.len() != tensors.len()
                || moments.iter().zip(&tensors).any(|(a, b)| a.len() != b.len())
            {
                return false;
            }
        }
        true
    }
}

/// Scales `grads` down to global L2 norm `max_norm` when they exceed it;
/// returns the pre-clip norm.
pub fn clip_global_norm<F: Scalar>(grads: &mut ParamSet<F>, max_norm: F) -> F {
    let norm = grads.global_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            scale(t, s);
        }
    }
    norm
}

/// Clips `grads` in place, then takes one Adam step at `cfg.lr` with
/// bias-corrected moments and `vhat = max(vhat, v)` in the denominator.
/// Returns the pre-clip gradient norm.
pub fn apply_update<F: Scalar>(
    params: &mut ParamSet<F>,
    state: &mut AdamState<F>,
    grads: &mut ParamSet<F>,
    cfg: &LossConfig,
) -> Result<F> {
    if !params.same_shape(grads) {
        return Err(Error::Usage("gradient shapes do not match parameters".into()));
    }
    if !state.matches(params) {
        return Err(Error::Usage("optimizer state does not match parameters".into()));
    }
    let pre_clip = clip_global_norm(grads, F::fl(cfg.clip_norm));
    state.step += 1;
    let b1 = F::fl(ADAM_BETA1);
    let b2 = F::fl(ADAM_BETA2);
    let eps = F::fl(ADAM_EPS);
    let one = F::one();
    let t = state.step.min(1_000_000) as i32;
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let step_size = F::fl(cfg.lr) / bc1;
    let sqrt_bc2 = bc2.sqrt();
    let gs = grads.tensors();
    for (k, p) in params.tensors_mut().into_iter().enumerate() {
        let g = gs[k];
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        let vh = &mut state.vhat[k];
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            if v[i] > vh[i] {
                vh[i] = v[i];
            }
            let denom = vh[i].sqrt() / sqrt_bc2 + eps;
            p[i] = p[i] - step_size * m[i] / denom;
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric("non-finite parameters after update".into()));
    }
    Ok(pre_clip)
}
