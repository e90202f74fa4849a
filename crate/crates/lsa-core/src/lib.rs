//! Core library for L-SA: a gridworld navigation lab where one agent learns
//! several goals at once, with adaptive sampling of contrastive batches and
//! active querying of which goal to practice next.
//!
//! Math-heavy modules are generic over [`Scalar`]; training code uses the
//! [`Real`] (f64) aliases below.

pub mod config;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod sched;
pub mod storage;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training precision.
pub type Real = f64;
pub type Params = learner::ParamSet<Real>;
pub type Optimizer = learner::AdamState<Real>;
pub type Storage = storage::GoalStorage<Real>;
pub type Stats = sched::TargetStats<Real>;
pub type Observation = env::Observation<Real>;
pub type Trajectory = learner::Trajectory<Real>;
