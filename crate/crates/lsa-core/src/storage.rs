//! Goal storage: a bounded FIFO of successful goal observations, indexed per
//! target so contrastive batches can be drawn with replacement.
//!
//! Eviction is global-oldest-first regardless of target, which is what makes
//! the per-target share `d_x` drift once one target floods the buffer.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sched::apportion;

#[derive(Debug, Clone, PartialEq)]
pub struct GoalEntry<F: Scalar> {
    pub target: usize,
    pub features: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct GoalStorage<F: Scalar> {
    capacity: usize,
    order: VecDeque<Arc<GoalEntry<F>>>,
    per_target: Vec<VecDeque<Arc<GoalEntry<F>>>>,
    sample_counts: Vec<u64>,
    insert_counts: Vec<u64>,
}

impl<F: Scalar> GoalStorage<F> {
    pub fn new(num_targets: usize, capacity: usize) -> Result<GoalStorage<F>> {
        if num_targets < 1 {
            return Err(Error::Usage("storage needs >= 1 target".into()));
        }
        if capacity < 1 {
            return Err(Error::Config("storage capacity must be >= 1".into()));
        }
        Ok(GoalStorage {
            capacity,
            order: VecDeque::new(),
            per_target: vec![VecDeque::new(); num_targets],
            sample_counts: vec![0; num_targets],
            insert_counts: vec![0; num_targets],
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_targets(&self) -> usize {
        self.per_target.len()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn count(&self, target: usize) -> usize {
        self.per_target[target].len()
    }

    /// Stored-goal counts `M_x`.
    pub fn counts(&self) -> Vec<usize> {
        self.per_target.iter().map(|q| q.len()).collect()
    }

    /// Cumulative draws `k_x` served by `sample_batch`.
    pub fn sample_counts(&self) -> &[u64] {
        &self.sample_counts
    }

    /// Cumulative inserts `M_x` since construction; eviction never lowers it.
    pub fn insert_counts(&self) -> &[u64] {
        &self.insert_counts
    }

    /// Storage shares `d_x = M_x / total`; uniform while empty.
    pub fn proportions(&self) -> Vec<F> {
        let total = self.order.len();
        if total == 0 {
            let n = self.num_targets();
            return vec![F::one() / F::fl(n as f64); n];
        }
        self.per_target
            .iter()
            .map(|q| F::fl(q.len() as f64) / F::fl(total as f64))
            .collect()
    }

    pub fn latest(&self, target: usize) -> Option<Arc<GoalEntry<F>>> {
        self.per_target[target].back().cloned()
    }

    /// Up to `n` most recent entries for `target`, newest first.
    pub fn latest_n(&self, target: usize, n: usize) -> Vec<Arc<GoalEntry<F>>> {
        self.per_target[target].iter().rev().take(n).cloned().collect()
    }

    pub fn insert(&mut self, entry: GoalEntry<F>) -> Result<()> {
        if entry.target >= self.num_targets() {
            return Err(Error::Usage(format!(
                "goal target {} out of range",
                entry.target
            )));
        }
        let entry = Arc::new(entry);
        self.insert_counts[entry.target] += 1;
        self.order.push_back(Arc::clone(&entry));
        self.per_target[entry.target].push_back(entry);
        if self.order.len() > self.capacity {
            let evicted = self.order.pop_front().expect("non-empty");
            let q = &mut self.per_target[evicted.target];
            let front = q.pop_front().expect("indexed entry present");
            debug_assert!(Arc::ptr_eq(&front, &evicted));
        }
        Ok(())
    }

    /// Draws, with replacement, `composition[x]` entries for each target `x`,
    /// in ascending target order. Quota aimed at empty targets is reassigned
    /// across non-empty ones proportionally to their requested quotas (or to
    /// their stored counts when those quotas are all zero).
    pub fn sample_batch(
        &mut self,
        composition: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Arc<GoalEntry<F>>>> {
        if composition.len() != self.num_targets() {
            return Err(Error::Usage(format!(
                "composition has {} entries for {} targets",
                composition.len(),
                self.num_targets()
            )));
        }
        if self.order.is_empty() {
            return Err(Error::EmptyStorage);
        }
        let mut final_counts = vec![0usize; self.num_targets()];
        let mut leftover = 0usize;
        for (x, &want) in composition.iter().enumerate() {
            if self.count(x) > 0 {
                final_counts[x] = want;
            } else {
                leftover += want;
            }
        }
        if leftover > 0 {
            let nonempty: Vec<usize> =
                (0..self.num_targets()).filter(|&x| self.count(x) > 0).collect();
            let mut weights: Vec<f64> =
                nonempty.iter().map(|&x| composition[x] as f64).collect();
            if weights.iter().sum::<f64>() <= 0.0 {
                weights = nonempty.iter().map(|&x| self.count(x) as f64).collect();
            }
            let extra = apportion(leftover, &weights);
            for (i, &x) in nonempty.iter().enumerate() {
                final_counts[x] += extra[i];
            }
        }
        let mut batch = Vec::with_capacity(final_counts.iter().sum());
        for (x, &n) in final_counts.iter().enumerate() {
            let q = &self.per_target[x];
            for _ in 0..n {
                let i = rng.random_range(0..q.len());
                batch.push(Arc::clone(&q[i]));
            }
            self.sample_counts[x] += n as u64;
        }
        Ok(batch)
    }

    /// Entries in global insertion order plus counters, for checkpointing.
    pub fn to_parts(&self) -> StorageParts<F> {
        StorageParts {
            capacity: self.capacity,
            num_targets: self.num_targets(),
            entries: self.order.iter().map(|e| (**e).clone()).collect(),
            sample_counts: self.sample_counts.clone(),
            insert_counts: self.insert_counts.clone(),
        }
    }

    pub fn from_parts(parts: StorageParts<F>) -> Result<GoalStorage<F>> {
        if parts.sample_counts.len() != parts.num_targets
            || parts.insert_counts.len() != parts.num_targets
        {
            return Err(Error::Checkpoint("storage counter length mismatch".into()));
        }
        if parts.entries.len() > parts.capacity {
            return Err(Error::Checkpoint("storage holds more than capacity".into()));
        }
        let mut s = GoalStorage::new(parts.num_targets, parts.capacity)?;
        for e in parts.entries {
            s.insert(e)?;
        }
        s.sample_counts = parts.sample_counts;
        s.insert_counts = parts.insert_counts;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageParts<F: Scalar> {
    pub capacity: usize,
    pub num_targets: usize,
    pub entries: Vec<GoalEntry<F>>,
    pub sample_counts: Vec<u64>,
    pub insert_counts: Vec<u64>,
}
