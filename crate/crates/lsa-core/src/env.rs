//! Multi-target gridworld navigation with egocentric observations.
//!
//! The agent starts at the grid center facing north. Targets are placed by
//! rejection sampling; targets tagged `Hard` must spawn at least
//! `hard_min_dist` Chebyshev cells away from the start. An episode ends on
//! target contact (success or wrong target) or on timeout.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Spawn-distance class of a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Normal,
    Hard,
}

/// Agent orientation; the window is rotated so this points "up".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    /// Unit step in world coordinates (x east, y south).
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Heading::North => 0,
            Heading::East => 1,
            Heading::South => 2,
            Heading::West => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    TurnLeft,
    TurnRight,
    GoStraight,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::TurnLeft, Action::TurnRight, Action::GoStraight];

    pub fn index(self) -> usize {
        match self {
            Action::TurnLeft => 0,
            Action::TurnRight => 1,
            Action::GoStraight => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

/// Additive reward components; the per-step cost applies to every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardScheme {
    pub success: f64,
    pub wrong_target: f64,
    pub timeout: f64,
    pub per_step: f64,
}

impl Default for RewardScheme {
    fn default() -> Self {
        RewardScheme {
            success: 10.0,
            wrong_target: -1.0,
            timeout: -0.1,
            per_step: -0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub grid_size: usize,
    pub num_targets: usize,
    pub difficulty: Vec<Difficulty>,
    pub hard_min_dist: usize,
    pub time_limit: usize,
    pub window_radius: usize,
    pub rewards: RewardScheme,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            grid_size: 15,
            num_targets: 4,
            difficulty: vec![
                Difficulty::Normal,
                Difficulty::Normal,
                Difficulty::Hard,
                Difficulty::Hard,
            ],
            hard_min_dist: 6,
            time_limit: 30,
            window_radius: 2,
            rewards: RewardScheme::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_targets < 2 {
            return Err(Error::Config(format!(
                "env.num_targets must be >= 2, got {}",
                self.num_targets
            )));
        }
        if self.difficulty.len() != self.num_targets {
            return Err(Error::Config(format!(
                "env.difficulty must list one entry per target ({} targets, {} entries)",
                self.num_targets,
                self.difficulty.len()
            )));
        }
        if self.grid_size < 2 {
            return Err(Error::Config(format!(
                "env.grid_size must be >= 2, got {}",
                self.grid_size
            )));
        }
        if self.grid_size < 2 * self.hard_min_dist + 1 {
            return Err(Error::Config(format!(
                "env.grid_size must be >= 2*hard_min_dist+1 so hard spawns exist ({} < {})",
                self.grid_size,
                2 * self.hard_min_dist + 1
            )));
        }
        if self.num_targets > self.grid_size * self.grid_size - 1 {
            return Err(Error::Config(format!(
                "env.num_targets = {} does not fit a {0}x{0} grid minus the start cell",
                self.num_targets
            )));
        }
        if self.time_limit < 1 {
            return Err(Error::Config("env.time_limit must be >= 1".into()));
        }
        Ok(())
    }

    /// Grid center where every episode starts.
    pub fn start(&self) -> (i32, i32) {
        let c = (self.grid_size / 2) as i32;
        (c, c)
    }

    /// Flattened observation length: window cells x (targets + out-of-bounds
    /// channel) plus the 4-way heading one-hot.
    pub fn observation_len(&self) -> usize {
        let side = 2 * self.window_radius + 1;
        side * side * (self.num_targets + 1) + 4
    }
}

pub fn chebyshev(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub agent: (i32, i32),
    pub heading: Heading,
    pub targets: Vec<(i32, i32)>,
    pub instruction: usize,
    pub step_count: usize,
    pub done: bool,
    /// Reserved for stochastic dynamics; placement already consumed from it.
    pub rng: ChaCha8Rng,
}

impl PartialEq for EpisodeState {
    fn eq(&self, other: &Self) -> bool {
        self.agent == other.agent
            && self.heading == other.heading
            && self.targets == other.targets
            && self.instruction == other.instruction
            && self.step_count == other.step_count
            && self.done == other.done
            && self.rng.get_seed() == other.rng.get_seed()
            && self.rng.get_stream() == other.rng.get_stream()
            && self.rng.get_word_pos() == other.rng.get_word_pos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation<F: Scalar> {
    pub features: Vec<F>,
}

impl<F: Scalar> Observation<F> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeResult {
    Ongoing,
    Success,
    WrongTarget,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<F: Scalar> {
    pub observation: Observation<F>,
    pub reward: F,
    pub result: EpisodeResult,
    pub terminal: bool,
}

const PLACEMENT_ATTEMPT_CAP: usize = 10_000;

/// Starts an episode: places targets by rejection sampling and returns the
/// initial state with its observation.
pub fn reset<F: Scalar>(
    config: &EnvConfig,
    seed: u64,
    instruction: usize,
) -> Result<(EpisodeState, Observation<F>)> {
    config.validate()?;
    if instruction >= config.num_targets {
        return Err(Error::Usage(format!(
            "instruction {} out of range for {} targets",
            instruction, config.num_targets
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = config.start();
    let g = config.grid_size as i32;
    let mut targets: Vec<(i32, i32)> = Vec::with_capacity(config.num_targets);
    let mut attempts = 0usize;
    while targets.len() < config.num_targets {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPT_CAP {
            return Err(Error::Config(format!(
                "target placement failed after {} attempts",
                PLACEMENT_ATTEMPT_CAP
            )));
        }
        let cell = (rng.random_range(0..g), rng.random_range(0..g));
        if cell == start {
            continue;
        }
        if config.difficulty[targets.len()] == Difficulty::Hard
            && chebyshev(cell, start) < config.hard_min_dist as i32
        {
            continue;
        }
        if targets.contains(&cell) {
            continue;
        }
        targets.push(cell);
    }
    let state = EpisodeState {
        agent: start,
        heading: Heading::North,
        targets,
        instruction,
        step_count: 0,
        done: false,
        rng,
    };
    let obs = observe(config, &state);
    Ok((state, obs))
}

/// Builds the egocentric observation: an occupancy window rotated heading-up
/// (per-cell channels: one per target class, then out-of-bounds), followed by
/// the heading one-hot.
pub fn observe<F: Scalar>(config: &EnvConfig, state: &EpisodeState) -> Observation<F> {
    let r = config.window_radius as i32;
    let side = (2 * r + 1) as usize;
    let chans = config.num_targets + 1;
    let mut features = vec![F::zero(); side * side * chans + 4];
    let fwd = state.heading.delta();
    let right = state.heading.right().delta();
    let g = config.grid_size as i32;
    for i in 0..side {
        for j in 0..side {
            let f = r - i as i32;
            let l = j as i32 - r;
            let wx = state.agent.0 + f * fwd.0 + l * right.0;
            let wy = state.agent.1 + f * fwd.1 + l * right.1;
            let base = (i * side + j) * chans;
            if wx < 0 || wy < 0 || wx >= g || wy >= g {
                features[base + config.num_targets] = F::one();
            } else {
                for (t, &pos) in state.targets.iter().enumerate() {
                    if pos == (wx, wy) {
                        features[base + t] = F::one();
                    }
                }
            }
        }
    }
    features[side * side * chans + state.heading.index()] = F::one();
    Observation { features }
}

/// Advances one step. Contact with any target ends the episode; the time
/// limit ends it otherwise. Rewards compose additively with the step cost.
pub fn step<F: Scalar>(
    config: &EnvConfig,
    state: &mut EpisodeState,
    action: Action,
) -> Result<StepOutcome<F>> {
    if state.done {
        return Err(Error::Usage("step called on a finished episode".into()));
    }
    state.step_count += 1;
    match action {
        Action::TurnLeft => state.heading = state.heading.left(),
        Action::TurnRight => state.heading = state.heading.right(),
        Action::GoStraight => {
            let d = state.heading.delta();
            let g = config.grid_size as i32;
            let nx = state.agent.0 + d.0;
            let ny = state.agent.1 + d.1;
            if nx >= 0 && ny >= 0 && nx < g && ny < g {
                state.agent = (nx, ny);
            }
        }
    }
    let contact = state.targets.iter().position(|&p| p == state.agent);
    let result = match contact {
        Some(t) if t == state.instruction => EpisodeResult::Success,
        Some(_) => EpisodeResult::WrongTarget,
        None if state.step_count >= config.time_limit => EpisodeResult::Timeout,
        None => EpisodeResult::Ongoing,
    };
    let bonus = match result {
        EpisodeResult::Success => config.rewards.success,
        EpisodeResult::WrongTarget => config.rewards.wrong_target,
        EpisodeResult::Timeout => config.rewards.timeout,
        EpisodeResult::Ongoing => 0.0,
    };
    state.done = result != EpisodeResult::Ongoing;
    Ok(StepOutcome {
        observation: observe(config, state),
        reward: F::fl(config.rewards.per_step + bonus),
        result,
        terminal: state.done,
    })
}

/// Success-rate Monte-Carlo estimate for a fixed instruction under an
/// arbitrary policy. Each episode re-rolls target placement.
pub fn success_estimate_with_policy<P>(
    config: &EnvConfig,
    target: usize,
    episodes: usize,
    seed: u64,
    mut policy: P,
) -> Result<f64>
where
    P: FnMut(&mut ChaCha8Rng, &EpisodeState, &Observation<f64>) -> Action,
{
    if episodes == 0 {
        return Err(Error::Usage("success estimate needs >= 1 episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for _ in 0..episodes {
        let ep_seed = rng.next_u64();
        let (mut state, mut obs) = reset::<f64>(config, ep_seed, target)?;
        loop {
            let action = policy(&mut rng, &state, &obs);
            let out = step::<f64>(config, &mut state, action)?;
            if out.terminal {
                if out.result == EpisodeResult::Success {
                    wins += 1;
                }
                break;
            }
            obs = out.observation;
        }
    }
    Ok(wins as f64 / episodes as f64)
}

/// Success-rate estimate under uniformly random actions.
pub fn random_success_estimate(
    config: &EnvConfig,
    target: usize,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    success_estimate_with_policy(config, target, episodes, seed, |rng, _, _| {
        Action::from_index(rng.random_range(0..Action::ALL.len())).unwrap()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRow {
    pub hard_min_dist: usize,
    pub normal_rate: f64,
    pub hard_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub config: EnvConfig,
    pub rows: Vec<CalibrationRow>,
}

/// Sweeps `hard_min_dist` upward until the random agent's mean Normal-target
/// success rate is at least `ratio` times its mean Hard-target success rate.
pub fn calibrate(
    base: &EnvConfig,
    episodes: usize,
    ratio: f64,
    seed: u64,
) -> Result<CalibrationReport> {
    base.validate()?;
    if episodes == 0 {
        return Err(Error::Usage("calibrate needs >= 1 episode per target".into()));
    }
    let normals: Vec<usize> = (0..base.num_targets)
        .filter(|&t| base.difficulty[t] == Difficulty::Normal)
        .collect();
    let hards: Vec<usize> = (0..base.num_targets)
        .filter(|&t| base.difficulty[t] == Difficulty::Hard)
        .collect();
    if normals.is_empty() || hards.is_empty() {
        return Err(Error::Calibration(
            "difficulty must tag at least one normal and one hard target".into(),
        ));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut dist = 1usize;
    while base.grid_size >= 2 * dist + 1 {
        let mut cfg = base.clone();
        cfg.hard_min_dist = dist;
        let mut rate_for = |targets: &[usize]| -> Result<f64> {
            let mut acc = 0.0;
            for &t in targets {
                acc += random_success_estimate(&cfg, t, episodes, seeder.next_u64())?;
            }
            Ok(acc / targets.len() as f64)
        };
        let normal_rate = rate_for(&normals)?;
        let hard_rate = rate_for(&hards)?;
        rows.push(CalibrationRow {
            hard_min_dist: dist,
            normal_rate,
            hard_rate,
        });
        if normal_rate > 0.0 && normal_rate >= ratio * hard_rate {
            return Ok(CalibrationReport { config: cfg, rows });
        }
        dist += 1;
    }
    Err(Error::Calibration(format!(
        "no hard_min_dist up to {} reaches a {}x normal:hard ratio",
        (base.grid_size - 1) / 2,
        ratio
    )))
}
