//! Actor-critic model: a two-layer encoder whose features are gated by an
//! instruction embedding, with policy, value, and contrastive projection
//! heads. Gradients are written out by hand; see `loss` for the losses and
//! `optim` for the update rule.

pub mod loss;
pub mod optim;

pub use loss::{
    actor_critic_grads, combined_grads, supcon_from_embeddings, supcon_loss_and_grads,
    AcDiagnostics, CombinedDiagnostics, LossConfig,
};
pub use optim::{apply_update, clip_global_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq, softmax_in_place};
use crate::scalar::Scalar;

pub const NUM_ACTIONS: usize = Action::ALL.len();

/// Norm floor for the L2-normalized projection output.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub proj_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { feature_dim: 64, proj_dim: 32 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 1 {
            return Err(Error::Config("model.feature_dim must be >= 1".into()));
        }
        if self.proj_dim < 1 {
            return Err(Error::Config("model.proj_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Dense affine map, row-major `w[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F: Scalar> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub w: Vec<F>,
    pub b: Vec<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Linear<F> {
        Linear {
            out_dim,
            in_dim,
            w: vec![F::zero(); out_dim * in_dim],
            b: vec![F::zero(); out_dim],
        }
    }

    /// Uniform init on (-k, k) with k = 1/sqrt(in_dim), for weights and bias.
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Linear<F> {
        let k = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || F::fl((2.0 * rng.random::<f64>() - 1.0) * k);
        let w = (0..out_dim * in_dim).map(|_| draw()).collect();
        let b = (0..out_dim).map(|_| draw()).collect();
        Linear { out_dim, in_dim, w, b }
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| self.b[o] + dot(&self.w[o * self.in_dim..(o + 1) * self.in_dim], x))
            .collect()
    }
}

/// All trainable tensors. The `tensors`/`tensors_mut` order is the canonical
/// one used by the optimizer, the clipper, and the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F: Scalar> {
    pub obs_dim: usize,
    pub num_targets: usize,
    pub feature_dim: usize,
    pub proj_dim: usize,
    pub enc1: Linear<F>,
    pub enc2: Linear<F>,
    pub embed: Vec<F>,
    pub gate: Linear<F>,
    pub policy: Linear<F>,
    pub value: Linear<F>,
    pub proj: Linear<F>,
}

pub const TENSOR_NAMES: [&str; 13] = [
    "enc1.w", "enc1.b", "enc2.w", "enc2.b", "embed", "gate.w", "gate.b", "policy.w", "policy.b",
    "value.w", "value.b", "proj.w", "proj.b",
];

impl<F: Scalar> ParamSet<F> {
    pub fn zeros(obs_dim: usize, num_targets: usize, cfg: &ModelConfig) -> ParamSet<F> {
        let f = cfg.feature_dim;
        ParamSet {
            obs_dim,
            num_targets,
            feature_dim: f,
            proj_dim: cfg.proj_dim,
            enc1: Linear::zeros(f, obs_dim),
            enc2: Linear::zeros(f, f),
            embed: vec![F::zero(); num_targets * f],
            gate: Linear::zeros(f, f),
            policy: Linear::zeros(NUM_ACTIONS, f),
            value: Linear::zeros(1, f),
            proj: Linear::zeros(cfg.proj_dim, f),
        }
    }

    pub fn init(
        obs_dim: usize,
        num_targets: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> ParamSet<F> {
        let f = cfg.feature_dim;
        let ke = 1.0 / (f as f64).sqrt();
        let enc1 = Linear::init(f, obs_dim, rng);
        let enc2 = Linear::init(f, f, rng);
        let embed = (0..num_targets * f)
            .map(|_| F::fl((2.0 * rng.random::<f64>() - 1.0) * ke))
            .collect();
        ParamSet {
            obs_dim,
            num_targets,
            feature_dim: f,
            proj_dim: cfg.proj_dim,
            enc1,
            enc2,
            embed,
            gate: Linear::init(f, f, rng),
            policy: Linear::init(NUM_ACTIONS, f, rng),
            value: Linear::init(1, f, rng),
            proj: Linear::init(cfg.proj_dim, f, rng),
        }
    }

    pub fn zeros_like(&self) -> ParamSet<F> {
        let cfg = ModelConfig { feature_dim: self.feature_dim, proj_dim: self.proj_dim };
        ParamSet::zeros(self.obs_dim, self.num_targets, &cfg)
    }

    pub fn tensors(&self) -> [&[F]; 13] {
        [
            &self.enc1.w, &self.enc1.b, &self.enc2.w, &self.enc2.b, &self.embed, &self.gate.w,
            &self.gate.b, &self.policy.w, &self.policy.b, &self.value.w, &self.value.b,
            &self.proj.w, &self.proj.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<F>; 13] {
        [
            &mut self.enc1.w, &mut self.enc1.b, &mut self.enc2.w, &mut self.enc2.b,
            &mut self.embed, &mut self.gate.w, &mut self.gate.b, &mut self.policy.w,
            &mut self.policy.b, &mut self.value.w, &mut self.value.b, &mut self.proj.w,
            &mut self.proj.b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &ParamSet<F>) -> bool {
        self.obs_dim == other.obs_dim
            && self.num_targets == other.num_targets
            && self.feature_dim == other.feature_dim
            && self.proj_dim == other.proj_dim
    }

    /// `self += s * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ParamSet<F>, s: F) {
        debug_assert!(self.same_shape(other));
        let theirs = other.tensors();
        for (mine, t) in self.tensors_mut().into_iter().zip(theirs) {
            crate::linalg::axpy(mine, s, t);
        }
    }

    pub fn global_norm(&self) -> F {
        self.tensors()
            .iter()
            .map(|t| norm_sq(t))
            .fold(F::zero(), |acc, x| acc + x)
            .sqrt()
    }

    pub fn embed_row(&self, target: usize) -> &[F] {
        &self.embed[target * self.feature_dim..(target + 1) * self.feature_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward<F: Scalar> {
    pub h1: Vec<F>,
    pub h2: Vec<F>,
    pub gate: Vec<F>,
    pub feature: Vec<F>,
    pub probs: Vec<F>,
    pub value: F,
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn relu_in_place<F: Scalar>(v: &mut [F]) {
    for x in v {
        if *x < F::zero() {
            *x = F::zero();
        }
    }
}

fn encode<F: Scalar>(params: &ParamSet<F>, obs: &[F]) -> (Vec<F>, Vec<F>) {
    let mut h1 = params.enc1.forward(obs);
    relu_in_place(&mut h1);
    let mut h2 = params.enc2.forward(&h1);
    relu_in_place(&mut h2);
    (h1, h2)
}

/// Policy/value pass with instruction gating.
pub fn forward<F: Scalar>(
    params: &ParamSet<F>,
    obs: &[F],
    instruction: usize,
) -> Result<Forward<F>> {
    if obs.len() != params.obs_dim {
        return Err(Error::Usage(format!(
            "observation has {} features, model expects {}",
            obs.len(),
            params.obs_dim
        )));
    }
    if instruction >= params.num_targets {
        return Err(Error::Usage(format!(
            "instruction {} out of range for {} targets",
            instruction, params.num_targets
        )));
    }
    let (h1, h2) = encode(params, obs);
    let u = params.gate.forward(params.embed_row(instruction));
    let gate: Vec<F> = u.into_iter().map(sigmoid).collect();
    let feature: Vec<F> = h2.iter().zip(&gate).map(|(&h, &g)| h * g).collect();
    let mut probs = params.policy.forward(&feature);
    softmax_in_place(&mut probs);
    let value = params.value.forward(&feature)[0];
    if !value.is_finite() || probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite forward output (value {:?}) for instruction {}",
            value, instruction
        )));
    }
    Ok(Forward { h1, h2, gate, feature, probs, value })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjForward<F: Scalar> {
    pub h1: Vec<F>,
    pub h2: Vec<F>,
    pub pre: Vec<F>,
    pub z: Vec<F>,
    pub norm: F,
}

/// Contrastive pass: encoder then projection head, L2-normalized. The gate
/// path is not involved.
pub fn project<F: Scalar>(params: &ParamSet<F>, obs: &[F]) -> Result<ProjForward<F>> {
    if obs.len() != params.obs_dim {
        return Err(Error::Usage(format!(
            "observation has {} features, model expects {}",
            obs.len(),
            params.obs_dim
        )));
    }
    let (h1, h2) = encode(params, obs);
    let pre = params.proj.forward(&h2);
    let norm = norm_sq(&pre).sqrt().max(F::fl(NORM_EPS));
    let z: Vec<F> = pre.iter().map(|&p| p / norm).collect();
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite projection output".into()));
    }
    Ok(ProjForward { h1, h2, pre, z, norm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajStep<F: Scalar> {
    pub observation: Vec<F>,
    pub action: usize,
    pub reward: F,
    pub probs: Vec<F>,
    pub value: F,
}

/// One rollout under a fixed instruction. `bootstrap` carries the value
/// estimate of the successor state when the rollout was cut short without
/// reaching a terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F: Scalar> {
    pub instruction: usize,
    pub steps: Vec<TrajStep<F>>,
    pub bootstrap: Option<F>,
}

impl<F: Scalar> Trajectory<F> {
    pub fn returns(&self, gamma: F) -> Vec<F> {
        let rewards: Vec<F> = self.steps.iter().map(|s| s.reward).collect();
        compute_returns(&rewards, gamma, self.bootstrap)
    }
}

/// Discounted returns by backward recursion; the tail is `bootstrap` (or 0).
pub fn compute_returns<F: Scalar>(rewards: &[F], gamma: F, bootstrap: Option<F>) -> Vec<F> {
    let mut out = vec![F::zero(); rewards.len()];
    let mut acc = bootstrap.unwrap_or_else(F::zero);
    for (i, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}
