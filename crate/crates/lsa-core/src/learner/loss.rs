//! Actor-critic and contrastive losses with analytic gradients.
//!
//! The actor term treats the advantage as a constant weight, so only
//! `-log π(a)` and the entropy bonus push gradient through the policy path,
//! while the squared error pushes through the value path; both meet in the
//! shared encoder. The contrastive term routes through the projection head
//! and encoder only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::scalar::Scalar;

use super::{forward, project, Linear, ParamSet, Trajectory, NORM_EPS, NUM_ACTIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
    pub entropy_beta: f64,
    pub supcon_eta: f64,
    pub supcon_tau: f64,
    pub lr: f64,
    pub clip_norm: f64,
    pub supcon_batch: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.99,
            entropy_beta: 0.01,
            supcon_eta: 0.5,
            supcon_tau: 0.07,
            lr: 7e-5,
            clip_norm: 10.0,
            supcon_batch: 80,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "loss.gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        for (name, v) in [
            ("loss.entropy_beta", self.entropy_beta),
            ("loss.supcon_eta", self.supcon_eta),
            ("loss.supcon_tau", self.supcon_tau),
            ("loss.lr", self.lr),
            ("loss.clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{} must be positive, got {}", name, v)));
            }
        }
        if self.supcon_batch < 2 {
            return Err(Error::Config(format!(
                "loss.supcon_batch must be >= 2, got {}",
                self.supcon_batch
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcDiagnostics<F: Scalar> {
    /// `Σ_t −log π(a_t) · (R_t − V_t)`, advantage held constant.
    pub policy_loss: F,
    /// `Σ_t (R_t − V_t)²`.
    pub value_loss: F,
    /// `Σ_t H(π(·|s_t))`.
    pub entropy_sum: F,
    pub steps: usize,
}

impl<F: Scalar> AcDiagnostics<F> {
    pub fn entropy_mean(&self) -> F {
        if self.steps == 0 {
            F::zero()
        } else {
            self.entropy_sum / F::fl(self.steps as f64)
        }
    }

    pub fn rl_loss(&self, entropy_beta: F) -> F {
        self.policy_loss + self.value_loss - entropy_beta * self.entropy_sum
    }
}

fn linear_backward<F: Scalar>(
    lin: &Linear<F>,
    x: &[F],
    dy: &[F],
    gw: &mut [F],
    gb: &mut [F],
    mut dx: Option<&mut [F]>,
) {
    debug_assert_eq!(dy.len(), lin.out_dim);
    for o in 0..lin.out_dim {
        let d = dy[o];
        gb[o] += d;
        if d != F::zero() {
            let row = o * lin.in_dim..(o + 1) * lin.in_dim;
            axpy(&mut gw[row.clone()], d, x);
            if let Some(dx) = dx.as_deref_mut() {
                axpy(dx, d, &lin.w[row]);
            }
        }
    }
}

fn relu_mask_in_place<F: Scalar>(grad: &mut [F], out: &[F]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= F::zero() {
            *g = F::zero();
        }
    }
}

/// Gradients of the per-episode objective
/// `Σ_t [−log π(a_t|s_t)·(R_t − V(s_t)) − β·H(π) + (R_t − V(s_t))²]`.
pub fn actor_critic_grads<F: Scalar>(
    params: &ParamSet<F>,
    traj: &Trajectory<F>,
    cfg: &LossConfig,
) -> Result<(ParamSet<F>, AcDiagnostics<F>)> {
    if traj.steps.is_empty() {
        return Err(Error::Usage("trajectory must be non-empty".into()));
    }
    let beta = F::fl(cfg.entropy_beta);
    let returns = traj.returns(F::fl(cfg.gamma));
    let fdim = params.feature_dim;
    let mut g = params.zeros_like();
    let mut diag = AcDiagnostics {
        policy_loss: F::zero(),
        value_loss: F::zero(),
        entropy_sum: F::zero(),
        steps: traj.steps.len(),
    };
    let embed_row = params.embed_row(traj.instruction);
    let mut dfeat = vec![F::zero(); fdim];
    let mut dh2 = vec![F::zero(); fdim];
    let mut dh1 = vec![F::zero(); fdim];
    let mut du = vec![F::zero(); fdim];
    for (t, step) in traj.steps.iter().enumerate() {
        if step.action >= NUM_ACTIONS {
            return Err(Error::Usage(format!("action {} out of range", step.action)));
        }
        let fwd = forward(params, &step.observation, traj.instruction)?;
        let adv = returns[t] - fwd.value;

        let mut entropy = F::zero();
        let mut logp = [F::zero(); NUM_ACTIONS];
        for k in 0..NUM_ACTIONS {
            let p = fwd.probs[k];
            if p > F::zero() {
                logp[k] = p.ln();
                entropy = entropy - p * logp[k];
            }
        }
        diag.policy_loss = diag.policy_loss - logp[step.action] * adv;
        diag.value_loss = diag.value_loss + adv * adv;
        diag.entropy_sum = diag.entropy_sum + entropy;

        let mut dlogits = [F::zero(); NUM_ACTIONS];
        for k in 0..NUM_ACTIONS {
            let p = fwd.probs[k];
            let indicator = if k == step.action { F::one() } else { F::zero() };
            let mut d = adv * (p - indicator);
            if p > F::zero() {
                d = d + beta * p * (logp[k] + entropy);
            }
            dlogits[k] = d;
        }
        let dvalue = [F::fl(2.0) * (fwd.value - returns[t])];

        dfeat.iter_mut().for_each(|x| *x = F::zero());
        linear_backward(
            &params.policy,
            &fwd.feature,
            &dlogits,
            &mut g.policy.w,
            &mut g.policy.b,
            Some(&mut dfeat),
        );
        linear_backward(
            &params.value,
            &fwd.feature,
            &dvalue,
            &mut g.value.w,
            &mut g.value.b,
            Some(&mut dfeat),
        );

        for i in 0..fdim {
            dh2[i] = dfeat[i] * fwd.gate[i];
            let dgate = dfeat[i] * fwd.h2[i];
            du[i] = dgate * fwd.gate[i] * (F::one() - fwd.gate[i]);
        }
        let grow = traj.instruction * fdim;
        linear_backward(
            &params.gate,
            embed_row,
            &du,
            &mut g.gate.w,
            &mut g.gate.b,
            Some(&mut g.embed[grow..grow + fdim]),
        );

        relu_mask_in_place(&mut dh2, &fwd.h2);
        dh1.iter_mut().for_each(|x| *x = F::zero());
        linear_backward(&params.enc2, &fwd.h1, &dh2, &mut g.enc2.w, &mut g.enc2.b, Some(&mut dh1));
        relu_mask_in_place(&mut dh1, &fwd.h1);
        linear_backward(&params.enc1, &step.observation, &dh1, &mut g.enc1.w, &mut g.enc1.b, None);
    }
    if !g.is_finite() {
        return Err(Error::Numeric("non-finite actor-critic gradient".into()));
    }
    Ok((g, diag))
}

/// Contrastive loss and embedding gradients for unit embeddings `z` with
/// integer classes, averaged over anchors that have at least one positive.
pub fn supcon_from_embeddings<F: Scalar>(
    z: &[Vec<F>],
    classes: &[usize],
    tau: F,
) -> Result<(F, Vec<Vec<F>>)> {
    let n = z.len();
    if n < 2 {
        return Err(Error::Usage("contrastive batch needs >= 2 entries".into()));
    }
    if classes.len() != n {
        return Err(Error::Usage("classes and embeddings disagree in length".into()));
    }
    if !(tau > F::zero()) {
        return Err(Error::Usage("tau must be > 0".into()));
    }
    let dim = z[0].len();
    let mut sims = vec![F::zero(); n * n];
    for j in 0..n {
        debug_assert_eq!(z[j].len(), dim);
        for k in 0..j {
            let s = crate::linalg::dot(&z[j], &z[k]) / tau;
            sims[j * n + k] = s;
            sims[k * n + j] = s;
        }
    }

    let valid: Vec<usize> = (0..n)
        .filter(|&j| (0..n).any(|k| k != j && classes[k] == classes[j]))
        .collect();
    let mut dz = vec![vec![F::zero(); dim]; n];
    if valid.is_empty() {
        return Ok((F::zero(), dz));
    }
    let n_valid = F::fl(valid.len() as f64);

    let mut loss = F::zero();
    for &j in &valid {
        let row = &sims[j * n..(j + 1) * n];
        let mut mx = F::neg_infinity();
        for k in 0..n {
            if k != j && row[k] > mx {
                mx = row[k];
            }
        }
        let mut sumexp = F::zero();
        for k in 0..n {
            if k != j {
                sumexp = sumexp + (row[k] - mx).exp();
            }
        }
        let lse = mx + sumexp.ln();

        let positives: Vec<usize> =
            (0..n).filter(|&k| k != j && classes[k] == classes[j]).collect();
        let p_count = F::fl(positives.len() as f64);
        let mut pos_sum = F::zero();
        for &p in &positives {
            pos_sum = pos_sum + row[p];
        }
        loss = loss + lse - pos_sum / p_count;

        for k in 0..n {
            if k == j {
                continue;
            }
            let sigma = (row[k] - mx).exp() / sumexp;
            let pos_share = if classes[k] == classes[j] {
                F::one() / p_count
            } else {
                F::zero()
            };
            let coef = (sigma - pos_share) / (n_valid * tau);
            if coef != F::zero() {
                axpy(&mut dz[j], coef, &z[k]);
                axpy(&mut dz[k], coef, &z[j]);
            }
        }
    }
    Ok((loss / n_valid, dz))
}

/// Contrastive loss over goal observations, with gradients through the
/// projection head and encoder.
pub fn supcon_loss_and_grads<F: Scalar>(
    params: &ParamSet<F>,
    items: &[(&[F], usize)],
    tau: F,
) -> Result<(F, ParamSet<F>)> {
    if items.len() < 2 {
        return Err(Error::Usage("contrastive batch needs >= 2 entries".into()));
    }
    let mut projections = Vec::with_capacity(items.len());
    for (obs, _) in items {
        projections.push(project(params, obs)?);
    }
    let zs: Vec<Vec<F>> = projections.iter().map(|p| p.z.clone()).collect();
    let classes: Vec<usize> = items.iter().map(|(_, c)| *c).collect();
    let (loss, dz) = supcon_from_embeddings(&zs, &classes, tau)?;

    let fdim = params.feature_dim;
    let eps = F::fl(NORM_EPS);
    let mut g = params.zeros_like();
    let mut dpre = vec![F::zero(); params.proj_dim];
    let mut dh2 = vec![F::zero(); fdim];
    let mut dh1 = vec![F::zero(); fdim];
    for (i, pf) in projections.iter().enumerate() {
        if dz[i].iter().all(|&x| x == F::zero()) {
            continue;
        }
        if pf.norm > eps {
            let zdz = crate::linalg::dot(&pf.z, &dz[i]);
            for (d, (&dzk, &zk)) in dpre.iter_mut().zip(dz[i].iter().zip(&pf.z)) {
                *d = (dzk - zk * zdz) / pf.norm;
            }
        } else {
            for (d, &dzk) in dpre.iter_mut().zip(&dz[i]) {
                *d = dzk / eps;
            }
        }
        dh2.iter_mut().for_each(|x| *x = F::zero());
        linear_backward(&params.proj, &pf.h2, &dpre, &mut g.proj.w, &mut g.proj.b, Some(&mut dh2));
        relu_mask_in_place(&mut dh2, &pf.h2);
        dh1.iter_mut().for_each(|x| *x = F::zero());
        linear_backward(&params.enc2, &pf.h1, &dh2, &mut g.enc2.w, &mut g.enc2.b, Some(&mut dh1));
        relu_mask_in_place(&mut dh1, &pf.h1);
        linear_backward(&params.enc1, items[i].0, &dh1, &mut g.enc1.w, &mut g.enc1.b, None);
    }
    if !g.is_finite() {
        return Err(Error::Numeric("non-finite contrastive gradient".into()));
    }
    Ok((loss, g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedDiagnostics<F: Scalar> {
    pub ac: AcDiagnostics<F>,
    pub supcon_loss: F,
    pub rl_loss: F,
    pub total_loss: F,
}

/// One learner update's worth of gradients: actor-critic over the episode
/// plus `supcon_eta` times the contrastive gradients over `items`. An empty
/// `items` slice skips the contrastive term.
pub fn combined_grads<F: Scalar>(
    params: &ParamSet<F>,
    traj: &Trajectory<F>,
    items: &[(&[F], usize)],
    cfg: &LossConfig,
) -> Result<(ParamSet<F>, CombinedDiagnostics<F>)> {
    let (mut g, ac) = actor_critic_grads(params, traj, cfg)?;
    let supcon_loss = if items.is_empty() {
        F::zero()
    } else {
        let (ls, gs) = supcon_loss_and_grads(params, items, F::fl(cfg.supcon_tau))?;
        g.add_scaled(&gs, F::fl(cfg.supcon_eta));
        ls
    };
    let rl_loss = ac.rl_loss(F::fl(cfg.entropy_beta));
    let total_loss = rl_loss + F::fl(cfg.supcon_eta) * supcon_loss;
    Ok((g, CombinedDiagnostics { ac, supcon_loss, rl_loss, total_loss }))
}
