//! Central finite-difference probes for verifying the analytic gradients.

use crate::error::Result;
use crate::learner::{forward, LossConfig, ParamSet, Trajectory};
use crate::scalar::Scalar;

/// Central finite differences of `loss` with step `h`, one probe per
/// parameter. `params` is restored before returning.
pub fn fd_grads<F, L>(params: &mut ParamSet<F>, h: f64, mut loss: L) -> ParamSet<F>
where
    F: Scalar,
    L: FnMut(&ParamSet<F>) -> F,
{
    let hf = F::fl(h);
    let two = F::fl(2.0);
    let mut g = params.zeros_like();
    let num_tensors = params.tensors().len();
    for ti in 0..num_tensors {
        let len = params.tensors()[ti].len();
        for i in 0..len {
            let orig = params.tensors()[ti][i];
            params.tensors_mut()[ti][i] = orig + hf;
            let lp = loss(params);
            params.tensors_mut()[ti][i] = orig - hf;
            let lm = loss(params);
            params.tensors_mut()[ti][i] = orig;
            g.tensors_mut()[ti][i] = (lp - lm) / (two * hf);
        }
    }
    g
}

/// Worst relative disagreement between two gradient sets, with the
/// denominator floored at 1e-4 so near-zero entries compare absolutely.
pub fn max_rel_err<F: Scalar>(a: &ParamSet<F>, b: &ParamSet<F>) -> f64 {
    let floor = 1e-4;
    let mut worst = 0.0f64;
    for (ta, tb) in a.tensors().iter().zip(b.tensors()) {
        for (&x, &y) in ta.iter().zip(tb.iter()) {
            let xa = x.to_f64_exact();
            let ya = y.to_f64_exact();
            let denom = xa.abs().max(ya.abs()).max(floor);
            worst = worst.max((xa - ya).abs() / denom);
        }
    }
    worst
}

/// Advantages `R_t - V(s_t)` evaluated at `params`, to be held constant
/// while probing the actor term.
pub fn frozen_advantages<F: Scalar>(
    params: &ParamSet<F>,
    traj: &Trajectory<F>,
    cfg: &LossConfig,
) -> Result<Vec<F>> {
    let returns = traj.returns(F::fl(cfg.gamma));
    let mut adv = Vec::with_capacity(traj.steps.len());
    for (t, step) in traj.steps.iter().enumerate() {
        let fwd = forward(params, &step.observation, traj.instruction)?;
        adv.push(returns[t] - fwd.value);
    }
    Ok(adv)
}

/// The scalar episode objective with the actor term weighted by
/// pre-computed advantages: `Σ_t [−log π(a_t)·adv_t + (R_t − V)² − β·H]`.
pub fn ac_scalar_loss<F: Scalar>(
    params: &ParamSet<F>,
    traj: &Trajectory<F>,
    cfg: &LossConfig,
    frozen_adv: &[F],
) -> Result<F> {
    let beta = F::fl(cfg.entropy_beta);
    let returns = traj.returns(F::fl(cfg.gamma));
    let mut total = F::zero();
    for (t, step) in traj.steps.iter().enumerate() {
        let fwd = forward(params, &step.observation, traj.instruction)?;
        let logp = fwd.probs[step.action].ln();
        let mut entropy = F::zero();
        for &p in &fwd.probs {
            if p > F::zero() {
                entropy = entropy - p * p.ln();
            }
        }
        let delta = returns[t] - fwd.value;
        total = total - logp * frozen_adv[t] + delta * delta - beta * entropy;
    }
    Ok(total)
}
