//! Scheduling: focused-target selection, adaptive sampling ratios, batch
//! apportionment, and active query distributions.
//!
//! Success rates come from per-target windows of recent episode outcomes with
//! Laplace smoothing, so fresh targets start at 1/2. The focused target is
//! the one whose rate rose the most relative to the previous cadence
//! snapshot. Query weights grow as a target's share of stored goals shrinks.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::softmax_in_place;
use crate::scalar::Scalar;

/// Floor applied to storage proportions and score gaps.
pub const EPS_D: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Lsa,
    Uniform,
    Scoregap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryingMode {
    Lsa,
    Random,
    Scoregap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub m: f64,
    pub tau_a: f64,
    pub refresh_interval: u64,
    pub window: usize,
    pub mode_sampling: SamplingMode,
    pub mode_querying: QueryingMode,
    pub scoregap_reference: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            m: 0.7,
            tau_a: 60.0,
            refresh_interval: 50,
            window: 100,
            mode_sampling: SamplingMode::Lsa,
            mode_querying: QueryingMode::Lsa,
            scoregap_reference: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.m) {
            return Err(Error::Config(format!(
                "schedule.m must lie in [0, 1], got {}",
                self.m
            )));
        }
        if !(self.tau_a > 0.0) {
            return Err(Error::Config(format!(
                "schedule.tau_a must be > 0, got {}",
                self.tau_a
            )));
        }
        if self.refresh_interval < 1 {
            return Err(Error::Config("schedule.refresh_interval must be >= 1".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("schedule.window must be >= 1".into()));
        }
        if !(self.scoregap_reference > 0.0) {
            return Err(Error::Config(format!(
                "schedule.scoregap_reference must be > 0, got {}",
                self.scoregap_reference
            )));
        }
        Ok(())
    }
}

/// Windowed per-target success statistics with Laplace smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetStats<F: Scalar> {
    window: usize,
    outcomes: Vec<VecDeque<bool>>,
    successes: Vec<usize>,
    w_prev: Vec<F>,
}

impl<F: Scalar> TargetStats<F> {
    pub fn new(num_targets: usize, window: usize) -> TargetStats<F> {
        TargetStats {
            window,
            outcomes: vec![VecDeque::with_capacity(window); num_targets],
            successes: vec![0; num_targets],
            w_prev: vec![F::fl(0.5); num_targets],
        }
    }

    pub fn num_targets(&self) -> usize {
        self.outcomes.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn record_outcome(&mut self, target: usize, success: bool) -> Result<()> {
        let q = self
            .outcomes
            .get_mut(target)
            .ok_or_else(|| Error::Usage(format!("target {} out of range", target)))?;
        if q.len() == self.window {
            if q.pop_front() == Some(true) {
                self.successes[target] -= 1;
            }
        }
        q.push_back(success);
        if success {
            self.successes[target] += 1;
        }
        Ok(())
    }

    /// Smoothed success rate `(successes + 1) / (window_len + 2)`.
    pub fn rate(&self, target: usize) -> F {
        let n = self.outcomes[target].len();
        F::fl((self.successes[target] + 1) as f64) / F::fl((n + 2) as f64)
    }

    pub fn rates(&self) -> Vec<F> {
        (0..self.num_targets()).map(|t| self.rate(t)).collect()
    }

    pub fn prev_rates(&self) -> &[F] {
        &self.w_prev
    }

    /// Freezes the current rates as the reference for the next cadence.
    pub fn snapshot(&mut self) {
        self.w_prev = self.rates();
    }

    pub fn outcome_counts(&self) -> Vec<usize> {
        self.outcomes.iter().map(|q| q.len()).collect()
    }

    /// Raw window contents plus snapshot, for checkpointing.
    pub fn to_parts(&self) -> (usize, Vec<Vec<bool>>, Vec<F>) {
        (
            self.window,
            self.outcomes.iter().map(|q| q.iter().copied().collect()).collect(),
            self.w_prev.clone(),
        )
    }

    pub fn from_parts(window: usize, outcomes: Vec<Vec<bool>>, w_prev: Vec<F>) -> Result<TargetStats<F>> {
        if outcomes.len() != w_prev.len() {
            return Err(Error::Checkpoint("target stats sections disagree".into()));
        }
        let successes = outcomes
            .iter()
            .map(|o| o.iter().filter(|&&s| s).count())
            .collect();
        Ok(TargetStats {
            window,
            outcomes: outcomes.into_iter().map(VecDeque::from).collect(),
            successes,
            w_prev,
        })
    }
}

/// Target whose success rate rose the most since the previous snapshot;
/// ties break to the lowest id.
pub fn focused_target<F: Scalar>(w: &[F], w_prev: &[F]) -> usize {
    let mut best = 0usize;
    let mut best_ratio = F::neg_infinity();
    for (x, (&cur, &prev)) in w.iter().zip(w_prev).enumerate() {
        let ratio = cur / prev;
        if ratio > best_ratio {
            best_ratio = ratio;
            best = x;
        }
    }
    best
}

/// Sampling ratio vector: mass `m` on the focused target over a uniform base.
pub fn sampling_ratios<F: Scalar>(num_targets: usize, m: F, focused: usize) -> Vec<F> {
    let base = (F::one() - m) / F::fl(num_targets as f64);
    let mut b = vec![base; num_targets];
    b[focused] = b[focused] + m;
    b
}

/// Integer apportionment of `total` draws proportional to `weights`
/// (largest-remainder; remainder ties break to the lowest index). A
/// non-positive weight sum is treated as uniform.
pub fn apportion<F: Scalar>(total: usize, weights: &[F]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 || total == 0 {
        return vec![0; n];
    }
    let sum: f64 = weights.iter().map(|w| w.to_f64_exact().max(0.0)).sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        weights
            .iter()
            .map(|w| w.to_f64_exact().max(0.0) / sum * total as f64)
            .collect()
    } else {
        vec![total as f64 / n as f64; n]
    };
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// SupCon batch composition for the given sampling ratios.
pub fn batch_composition<F: Scalar>(ratios: &[F], batch: usize) -> Result<Vec<usize>> {
    let sum: f64 = ratios.iter().map(|r| r.to_f64_exact()).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Usage(format!(
            "sampling ratios must sum to 1 within 1e-9, got {}",
            sum
        )));
    }
    if ratios.iter().any(|r| *r < F::zero()) {
        return Err(Error::Usage("sampling ratios must be non-negative".into()));
    }
    Ok(apportion(batch, ratios))
}

/// Active query distribution: softmax over `1 / (max(d, eps) * tau_a)` with
/// max subtraction, so vanishing storage shares dominate without overflow.
pub fn query_distribution<F: Scalar>(d: &[F], tau_a: F) -> Result<Vec<F>> {
    if d.is_empty() {
        return Err(Error::Usage("query distribution needs >= 1 target".into()));
    }
    if !(tau_a > F::zero()) {
        return Err(Error::Usage("tau_a must be > 0".into()));
    }
    let eps = F::fl(EPS_D);
    let mut a: Vec<F> = d
        .iter()
        .map(|&dx| F::one() / (dx.max(eps) * tau_a))
        .collect();
    softmax_in_place(&mut a);
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("query distribution is not finite".into()));
    }
    Ok(a)
}

/// Baseline weights proportional to how far each success rate sits below a
/// reference score.
pub fn scoregap_weights<F: Scalar>(w: &[F], reference: F) -> Vec<F> {
    let eps = F::fl(EPS_D);
    let gaps: Vec<F> = w.iter().map(|&wx| (reference - wx).max(eps)).collect();
    let sum: F = gaps.iter().copied().sum();
    gaps.into_iter().map(|g| g / sum).collect()
}

/// Draws a target index from a distribution.
pub fn sample_instruction<F: Scalar>(a: &[F], rng: &mut ChaCha8Rng) -> usize {
    let u = F::fl(rng.random::<f64>());
    let mut cum = F::zero();
    for (x, &p) in a.iter().enumerate() {
        cum = cum + p;
        if u < cum {
            return x;
        }
    }
    a.len() - 1
}

/// Cadence-refreshed scheduling state shared by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduler<F: Scalar> {
    config: ScheduleConfig,
    pub stats: TargetStats<F>,
    focused: usize,
    ratios: Vec<F>,
    composition: Vec<usize>,
    query: Vec<F>,
    last_refresh: u64,
}

impl<F: Scalar> Scheduler<F> {
    pub fn new(config: ScheduleConfig, num_targets: usize) -> Result<Scheduler<F>> {
        config.validate()?;
        if num_targets < 1 {
            return Err(Error::Usage("scheduler needs >= 1 target".into()));
        }
        let uniform = vec![F::one() / F::fl(num_targets as f64); num_targets];
        let stats = TargetStats::new(num_targets, config.window);
        Ok(Scheduler {
            config,
            stats,
            focused: 0,
            ratios: uniform.clone(),
            composition: vec![0; num_targets],
            query: uniform,
            last_refresh: 0,
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn focused(&self) -> usize {
        self.focused
    }

    pub fn ratios(&self) -> &[F] {
        &self.ratios
    }

    pub fn composition(&self) -> &[usize] {
        &self.composition
    }

    pub fn query(&self) -> &[F] {
        &self.query
    }

    pub fn last_refresh(&self) -> u64 {
        self.last_refresh
    }

    /// Recomputes focused target, sampling ratios, batch composition, and
    /// query distribution from current stats and storage proportions, then
    /// snapshots the rates for the next cadence.
    pub fn refresh(&mut self, t: u64, d: &[F], supcon_batch: usize) -> Result<()> {
        let w = self.stats.rates();
        self.focused = focused_target(&w, self.stats.prev_rates());
        self.ratios = match self.config.mode_sampling {
            SamplingMode::Lsa => {
                sampling_ratios(self.stats.num_targets(), F::fl(self.config.m), self.focused)
            }
            SamplingMode::Uniform => {
                vec![F::one() / F::fl(self.stats.num_targets() as f64); self.stats.num_targets()]
            }
            SamplingMode::Scoregap => {
                scoregap_weights(&w, F::fl(self.config.scoregap_reference))
            }
        };
        self.composition = apportion(supcon_batch, &self.ratios);
        self.query = match self.config.mode_querying {
            QueryingMode::Lsa => query_distribution(d, F::fl(self.config.tau_a))?,
            QueryingMode::Random => {
                vec![F::one() / F::fl(self.stats.num_targets() as f64); self.stats.num_targets()]
            }
            QueryingMode::Scoregap => scoregap_weights(&w, F::fl(self.config.scoregap_reference)),
        };
        self.stats.snapshot();
        self.last_refresh = t;
        Ok(())
    }

    /// For checkpoint restore.
    pub fn restore(
        &mut self,
        stats: TargetStats<F>,
        focused: usize,
        ratios: Vec<F>,
        composition: Vec<usize>,
        query: Vec<F>,
        last_refresh: u64,
    ) {
        self.stats = stats;
        self.focused = focused;
        self.ratios = ratios;
        self.composition = composition;
        self.query = query;
        self.last_refresh = last_refresh;
    }
}
