//! Training orchestration: warmup collection, per-worker episode loops with
//! active querying, locked shared-parameter updates, cadenced scheduler
//! refreshes, metrics snapshots, and checkpoints.
//!
//! Workers reserve a unique update ticket `T` before each episode, so the
//! counter never skips or repeats; the worker holding a cadence-divisible
//! ticket performs that boundary's refresh/snapshot/checkpoint after its
//! update commits. At most one shared lock is held at a time.

pub mod checkpoint;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard, RwLock};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::{self, Action, EnvConfig, EpisodeResult};
use crate::error::{Error, Result};
use crate::learner::{
    apply_update, combined_grads, forward, AdamState, ParamSet, Trajectory, TrajStep,
};
use crate::metrics::{self, EvalSummary, MetricsRecord, CSV_HEADER};
use crate::sched::{sample_instruction, Scheduler, TargetStats};
use crate::storage::{GoalEntry, GoalStorage};

use checkpoint::{CheckpointState, RngPos, StatsParts};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const AUDIT_FILE: &str = "audit.log";

/// Warmup aborts after this many consecutive successless episodes.
pub const WARMUP_WATCHDOG: u64 = 1_000_000;

const EVAL_SEED_SALT: u64 = 0x4556_414c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub num_workers: usize,
    pub total_updates: u64,
    pub warmup: u64,
    pub eval_interval: u64,
    pub checkpoint_interval: u64,
    pub seed: u64,
    pub storage_capacity: usize,
    pub eval_episodes: usize,
    pub log_wallclock: bool,
    pub audit: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            num_workers: 4,
            total_updates: 200_000,
            warmup: 1000,
            eval_interval: 1000,
            checkpoint_interval: 10_000,
            seed: 0,
            storage_capacity: 10_000,
            eval_episodes: 500,
            log_wallclock: false,
            audit: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_workers < 1 {
            return Err(Error::Config("trainer.num_workers must be >= 1".into()));
        }
        if self.eval_interval < 1 {
            return Err(Error::Config("trainer.eval_interval must be >= 1".into()));
        }
        if self.checkpoint_interval < 1 {
            return Err(Error::Config("trainer.checkpoint_interval must be >= 1".into()));
        }
        if self.storage_capacity < 1 {
            return Err(Error::Config("trainer.storage_capacity must be >= 1".into()));
        }
        if self.warmup >= self.storage_capacity as u64 {
            return Err(Error::Config(format!(
                "trainer.storage_capacity ({}) must exceed trainer.warmup ({}) or warmup \
                 can never finish",
                self.storage_capacity, self.warmup
            )));
        }
        if self.eval_episodes < 1 {
            return Err(Error::Config("trainer.eval_episodes must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub config_path: PathBuf,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub final_t: u64,
    pub wallclock_s: f64,
    pub final_eval: EvalSummary,
    /// Records appended by this invocation (a resumed run reports only the
    /// new ones; the CSV on disk accumulates across phases).
    pub records: Vec<MetricsRecord>,
}

/// Random-action collection until the store holds more than `t_warm` goals.
pub fn warmup(
    config: &EnvConfig,
    storage: &mut GoalStorage<f64>,
    t_warm: u64,
    rng: &mut ChaCha8Rng,
) -> Result<u64> {
    let mut episodes = 0u64;
    let mut since_success = 0u64;
    while (storage.len() as u64) <= t_warm {
        if since_success >= WARMUP_WATCHDOG {
            return Err(Error::Calibration(format!(
                "no warmup success in {} consecutive episodes; the environment looks \
                 unreachable for a random agent",
                WARMUP_WATCHDOG
            )));
        }
        let instruction = rng.random_range(0..config.num_targets);
        let seed = rng.next_u64();
        let (mut state, _) = env::reset::<f64>(config, seed, instruction)?;
        episodes += 1;
        let mut succeeded = false;
        loop {
            let action = Action::ALL[rng.random_range(0..Action::ALL.len())];
            let out = env::step::<f64>(config, &mut state, action)?;
            if out.terminal {
                if out.result == EpisodeResult::Success {
                    storage.insert(GoalEntry {
                        target: instruction,
                        features: out.observation.features,
                    })?;
                    succeeded = true;
                }
                break;
            }
        }
        if succeeded {
            since_success = 0;
        } else {
            since_success += 1;
        }
    }
    Ok(episodes)
}

/// One on-policy episode under a parameter snapshot. Returns the trajectory,
/// the terminal result, and the goal observation when the episode succeeded.
fn run_episode(
    config: &EnvConfig,
    params: &ParamSet<f64>,
    instruction: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory<f64>, EpisodeResult, Option<Vec<f64>>)> {
    let seed = rng.next_u64();
    let (mut state, mut obs) = env::reset::<f64>(config, seed, instruction)?;
    let mut steps = Vec::new();
    loop {
        let fwd = forward(params, &obs.features, instruction)?;
        let action_index = sample_instruction(&fwd.probs, rng);
        let action = Action::from_index(action_index).expect("sampled action in range");
        let out = env::step(config, &mut state, action)?;
        steps.push(TrajStep {
            observation: std::mem::take(&mut obs.features),
            action: action_index,
            reward: out.reward,
            probs: fwd.probs,
            value: fwd.value,
        });
        if out.terminal {
            let goal = if out.result == EpisodeResult::Success {
                Some(out.observation.features)
            } else {
                None
            };
            return Ok((Trajectory { instruction, steps, bootstrap: None }, out.result, goal));
        }
        obs = out.observation;
    }
}

struct LearnerState {
    params: ParamSet<f64>,
    opt: AdamState<f64>,
}

struct SchedState {
    scheduler: Scheduler<f64>,
    query_counts: Vec<u64>,
}

struct MetricsSink {
    path: PathBuf,
    writer: BufWriter<File>,
    records: Vec<MetricsRecord>,
}

impl MetricsSink {
    fn open(path: &Path) -> Result<MetricsSink> {
        let has_rows = std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(Error::io(path))?;
        let mut writer = BufWriter::new(file);
        if !has_rows {
            writeln!(writer, "{}", CSV_HEADER).map_err(Error::io(path))?;
            writer.flush().map_err(Error::io(path))?;
        }
        Ok(MetricsSink { path: path.to_path_buf(), writer, records: Vec::new() })
    }

    fn append(&mut self, record: MetricsRecord) -> Result<()> {
        record.validate()?;
        metrics::write_csv_rows(&mut self.writer, std::slice::from_ref(&record))
            .map_err(Error::io(&self.path))?;
        self.writer.flush().map_err(Error::io(&self.path))?;
        self.records.push(record);
        Ok(())
    }
}

struct Shared<'a> {
    config: &'a RunConfig,
    total: u64,
    counter: AtomicU64,
    learner: RwLock<LearnerState>,
    storage: Mutex<GoalStorage<f64>>,
    sched: Mutex<SchedState>,
    rng_slots: Mutex<Vec<RngPos>>,
    sink: Mutex<MetricsSink>,
    audit: Option<Mutex<BufWriter<File>>>,
    abort: Mutex<Option<String>>,
    start: Instant,
    checkpoint_path: PathBuf,
    config_hash: [u8; 32],
}

fn lock<'t, T>(m: &'t Mutex<T>) -> Result<MutexGuard<'t, T>> {
    m.lock()
        .map_err(|_| Error::Worker("shared state poisoned by a worker panic".into()))
}

impl<'a> Shared<'a> {
    fn reserve(&self) -> Option<u64> {
        let mut cur = self.counter.load(Ordering::SeqCst);
        loop {
            if cur >= self.total || self.aborted() {
                return None;
            }
            match self.counter.compare_exchange_weak(
                cur,
                cur + 1,
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => return Some(cur + 1),
                Err(now) => cur = now,
            }
        }
    }

    fn aborted(&self) -> bool {
        self.abort.lock().map(|a| a.is_some()).unwrap_or(true)
    }

    fn request_abort(&self, message: String) {
        if let Ok(mut slot) = self.abort.lock() {
            slot.get_or_insert(message);
        }
    }

    fn abort_message(&self) -> Option<String> {
        self.abort.lock().map(|a| a.clone()).unwrap_or(None)
    }
}

fn check_storage(s: &GoalStorage<f64>) -> Result<()> {
    let total: usize = s.counts().iter().sum();
    if total != s.len() || s.len() > s.capacity() {
        return Err(Error::Worker(format!(
            "storage invariant violated: per-target counts sum to {}, {} entries, capacity {}",
            total,
            s.len(),
            s.capacity()
        )));
    }
    Ok(())
}

fn build_record(shared: &Shared, t: u64) -> Result<MetricsRecord> {
    let (w, b, a, focused, query_counts) = {
        let s = lock(&shared.sched)?;
        (
            s.scheduler.stats.rates(),
            s.scheduler.ratios().to_vec(),
            s.scheduler.query().to_vec(),
            s.scheduler.focused(),
            s.query_counts.clone(),
        )
    };
    let (d, k, m) = {
        let st = lock(&shared.storage)?;
        check_storage(&st)?;
        (st.proportions(), st.sample_counts().to_vec(), st.insert_counts().to_vec())
    };
    let richness = m
        .iter()
        .zip(&k)
        .map(|(&mm, &kk)| metrics::sample_richness(mm, kk))
        .collect();
    let q_total: u64 = query_counts.iter().sum();
    let query_cum = query_counts
        .iter()
        .map(|&c| if q_total == 0 { None } else { Some(c as f64 / q_total as f64) })
        .collect();
    let k_total: u64 = k.iter().sum();
    let sample_cum = k
        .iter()
        .map(|&c| if k_total == 0 { None } else { Some(c as f64 / k_total as f64) })
        .collect();
    let wallclock_s = if shared.config.trainer.log_wallclock {
        Some(shared.start.elapsed().as_secs_f64())
    } else {
        None
    };
    Ok(MetricsRecord {
        t,
        w,
        k,
        m,
        d,
        b,
        a,
        focused,
        query_counts,
        richness,
        query_cum,
        sample_cum,
        wallclock_s,
    })
}

fn save_checkpoint(shared: &Shared, t: u64) -> Result<()> {
    let (params, optimizer) = {
        let l = shared
            .learner
            .read()
            .map_err(|_| Error::Worker("shared state poisoned by a worker panic".into()))?;
        (l.params.clone(), l.opt.clone())
    };
    let storage = lock(&shared.storage)?.to_parts();
    let worker_rngs = lock(&shared.rng_slots)?.clone();
    let stats = {
        let s = lock(&shared.sched)?;
        let (window, outcomes, w_prev) = s.scheduler.stats.to_parts();
        StatsParts {
            window,
            outcomes,
            w_prev,
            focused: s.scheduler.focused(),
            ratios: s.scheduler.ratios().to_vec(),
            composition: s.scheduler.composition().to_vec(),
            query: s.scheduler.query().to_vec(),
            last_refresh: s.scheduler.last_refresh(),
            query_counts: s.query_counts.clone(),
            worker_rngs,
        }
    };
    let state = CheckpointState { params, optimizer, storage, stats, counter: t };
    checkpoint::save(&shared.checkpoint_path, &state, &shared.config_hash)
}

fn worker_loop(shared: &Shared, slot: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let env_cfg = &shared.config.env;
    let loss_cfg = &shared.config.loss;
    let refresh_interval = shared.config.schedule.refresh_interval;
    let trainer_cfg = &shared.config.trainer;
    while let Some(t) = shared.reserve() {
        let (instruction, composition) = {
            let mut s = lock(&shared.sched)?;
            let x = sample_instruction(s.scheduler.query(), rng);
            s.query_counts[x] += 1;
            (x, s.scheduler.composition().to_vec())
        };

        let params = {
            let l = shared
                .learner
                .read()
                .map_err(|_| Error::Worker("shared state poisoned by a worker panic".into()))?;
            l.params.clone()
        };

        let (traj, result, goal) = run_episode(env_cfg, &params, instruction, rng)?;
        let success = result == EpisodeResult::Success;

        lock(&shared.sched)?
            .scheduler
            .stats
            .record_outcome(instruction, success)?;

        let inserted = goal.is_some();
        let batch = {
            let mut st = lock(&shared.storage)?;
            if let Some(features) = goal {
                st.insert(GoalEntry { target: instruction, features })?;
            }
            st.sample_batch(&composition, rng)?
        };
        if let Some(audit) = &shared.audit {
            let mut out = lock(audit)?;
            writeln!(out, "t={} outcome={:?} inserted={}", t, result, inserted)
                .map_err(Error::io(Path::new(AUDIT_FILE)))?;
        }

        let items: Vec<(&[f64], usize)> =
            batch.iter().map(|e| (e.features.as_slice(), e.target)).collect();
        let (mut grads, _diag) = combined_grads(&params, &traj, &items, loss_cfg)?;
        {
            let mut l = shared
                .learner
                .write()
                .map_err(|_| Error::Worker("shared state poisoned by a worker panic".into()))?;
            let LearnerState { params, opt } = &mut *l;
            apply_update(params, opt, &mut grads, loss_cfg)?;
        }

        {
            let mut slots = lock(&shared.rng_slots)?;
            slots[slot] = RngPos {
                seed: rng.get_seed(),
                stream: rng.get_stream(),
                word_pos: rng.get_word_pos(),
            };
        }

        if t % refresh_interval == 0 {
            let d = lock(&shared.storage)?.proportions();
            lock(&shared.sched)?
                .scheduler
                .refresh(t, &d, loss_cfg.supcon_batch)?;
        }
        if t % trainer_cfg.eval_interval == 0 {
            let record = build_record(shared, t)?;
            lock(&shared.sink)?.append(record)?;
        }
        if t % trainer_cfg.checkpoint_interval == 0 {
            save_checkpoint(shared, t)?;
        }
    }
    Ok(())
}

fn rng_from_pos(pos: &RngPos) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::from_seed(pos.seed);
    r.set_stream(pos.stream);
    r.set_word_pos(pos.word_pos);
    r
}

/// Fresh training run: init, warmup, worker loops, final checkpoint + eval.
pub fn train(config: &RunConfig) -> Result<RunArtifacts> {
    train_impl(config, None)
}

/// Continues a checkpointed run under the identical configuration. Metrics
/// rows append to the existing file; with one worker the continuation is
/// bit-identical to an uninterrupted run.
pub fn resume(config: &RunConfig, checkpoint_path: &Path) -> Result<RunArtifacts> {
    let state = checkpoint::load(checkpoint_path, &config.config_hash()?)?;
    train_impl(config, Some(state))
}

fn train_impl(config: &RunConfig, start_state: Option<CheckpointState>) -> Result<RunArtifacts> {
    config.validate()?;
    let start = Instant::now();
    let env_cfg = &config.env;
    let obs_dim = env_cfg.observation_len();
    let n = env_cfg.num_targets;
    let tc = &config.trainer;

    let run_dir = config.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(Error::io(&run_dir))?;
    let config_path = run_dir.join(CONFIG_FILE);
    std::fs::write(&config_path, config.to_toml_string()?).map_err(Error::io(&config_path))?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let checkpoint_path = run_dir.join(CHECKPOINT_FILE);

    let (learner_state, storage, sched_state, rng_slots, start_t) = match start_state {
        None => {
            let mut rng0 = ChaCha8Rng::seed_from_u64(tc.seed);
            rng0.set_stream(0);
            let params = ParamSet::init(obs_dim, n, &config.model, &mut rng0);
            let opt = AdamState::new(&params);
            let mut storage = GoalStorage::new(n, tc.storage_capacity)?;
            warmup(env_cfg, &mut storage, tc.warmup, &mut rng0)?;
            let mut scheduler = Scheduler::new(config.schedule.clone(), n)?;
            scheduler.refresh(0, &storage.proportions(), config.loss.supcon_batch)?;
            let rng_slots: Vec<RngPos> = (1..=tc.num_workers)
                .map(|w| {
                    let mut r = ChaCha8Rng::seed_from_u64(tc.seed);
                    r.set_stream(w as u64);
                    RngPos {
                        seed: r.get_seed(),
                        stream: r.get_stream(),
                        word_pos: r.get_word_pos(),
                    }
                })
                .collect();
            (
                LearnerState { params, opt },
                storage,
                SchedState { scheduler, query_counts: vec![0; n] },
                rng_slots,
                0u64,
            )
        }
        Some(cs) => {
            if cs.params.obs_dim != obs_dim
                || cs.params.num_targets != n
                || cs.params.feature_dim != config.model.feature_dim
                || cs.params.proj_dim != config.model.proj_dim
            {
                return Err(Error::Checkpoint(
                    "checkpoint model shape does not match the configuration".into(),
                ));
            }
            if cs.stats.worker_rngs.len() != tc.num_workers {
                return Err(Error::Checkpoint(format!(
                    "checkpoint has {} worker rng states, config wants {}",
                    cs.stats.worker_rngs.len(),
                    tc.num_workers
                )));
            }
            let storage = GoalStorage::from_parts(cs.storage)?;
            let stats =
                TargetStats::from_parts(cs.stats.window, cs.stats.outcomes, cs.stats.w_prev)?;
            let mut scheduler = Scheduler::new(config.schedule.clone(), n)?;
            scheduler.restore(
                stats,
                cs.stats.focused,
                cs.stats.ratios,
                cs.stats.composition,
                cs.stats.query,
                cs.stats.last_refresh,
            );
            (
                LearnerState { params: cs.params, opt: cs.optimizer },
                storage,
                SchedState { scheduler, query_counts: cs.stats.query_counts },
                cs.stats.worker_rngs,
                cs.counter,
            )
        }
    };

    let sink = MetricsSink::open(&metrics_path)?;
    let audit = if tc.audit {
        let path = run_dir.join(AUDIT_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(Error::io(&path))?;
        Some(Mutex::new(BufWriter::new(file)))
    } else {
        None
    };

    let shared = Shared {
        config,
        total: tc.total_updates,
        counter: AtomicU64::new(start_t),
        learner: RwLock::new(learner_state),
        storage: Mutex::new(storage),
        sched: Mutex::new(sched_state),
        rng_slots: Mutex::new(rng_slots),
        sink: Mutex::new(sink),
        audit,
        abort: Mutex::new(None),
        start,
        checkpoint_path: checkpoint_path.clone(),
        config_hash: config.config_hash()?,
    };

    if start_t < tc.total_updates {
        if tc.num_workers == 1 {
            let pos = lock(&shared.rng_slots)?[0].clone();
            let mut rng = rng_from_pos(&pos);
            if let Err(e) = worker_loop(&shared, 0, &mut rng) {
                shared.request_abort(e.to_string());
            }
        } else {
            std::thread::scope(|scope| {
                for slot in 0..tc.num_workers {
                    let shared = &shared;
                    scope.spawn(move || {
                        let pos = match lock(&shared.rng_slots) {
                            Ok(slots) => slots[slot].clone(),
                            Err(e) => {
                                shared.request_abort(e.to_string());
                                return;
                            }
                        };
                        let mut rng = rng_from_pos(&pos);
                        let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| {
                            worker_loop(shared, slot, &mut rng)
                        }));
                        match outcome {
                            Ok(Ok(())) => {}
                            Ok(Err(e)) => shared.request_abort(e.to_string()),
                            Err(payload) => {
                                let msg = payload
                                    .downcast_ref::<&str>()
                                    .map(|s| s.to_string())
                                    .or_else(|| payload.downcast_ref::<String>().cloned())
                                    .unwrap_or_else(|| "worker panicked".into());
                                shared.request_abort(format!("worker panic: {}", msg));
                            }
                        }
                    });
                }
            });
        }
    }

    if let Some(audit) = &shared.audit {
        if let Ok(mut out) = audit.lock() {
            let _ = out.flush();
        }
    }
    if let Some(message) = shared.abort_message() {
        return Err(Error::Worker(message));
    }

    let final_t = shared.counter.load(Ordering::SeqCst);
    save_checkpoint(&shared, final_t)?;
    {
        let st = lock(&shared.storage)?;
        check_storage(&st)?;
    }
    let params = shared
        .learner
        .read()
        .map_err(|_| Error::Worker("shared state poisoned by a worker panic".into()))?
        .params
        .clone();
    let final_eval =
        metrics::evaluate(&params, env_cfg, tc.eval_episodes, tc.seed ^ EVAL_SEED_SALT)?;
    let records = std::mem::take(&mut lock(&shared.sink)?.records);
    Ok(RunArtifacts {
        run_dir,
        config_path,
        metrics_path,
        checkpoint_path,
        final_t,
        wallclock_s: start.elapsed().as_secs_f64(),
        final_eval,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Difficulty;
    use tempfile::tempdir;

    fn tiny_config(dir: &Path, name: &str) -> RunConfig {
        let mut c = RunConfig::default();
        c.name = name.to_string();
        c.out_dir = dir.to_path_buf();
        c.env = EnvConfig {
            grid_size: 5,
            num_targets: 2,
            difficulty: vec![Difficulty::Normal, Difficulty::Normal],
            hard_min_dist: 1,
            time_limit: 8,
            window_radius: 1,
            ..EnvConfig::default()
        };
        c.model.feature_dim = 8;
        c.model.proj_dim = 4;
        c.loss.supcon_batch = 6;
        c.schedule.refresh_interval = 5;
        c.schedule.window = 20;
        c.trainer = TrainerConfig {
            num_workers: 1,
            total_updates: 40,
            warmup: 3,
            eval_interval: 10,
            checkpoint_interval: 20,
            seed: 1,
            storage_capacity: 50,
            eval_episodes: 20,
            log_wallclock: false,
            audit: false,
        };
        c
    }

    #[test]
    fn trainer_config_rejects_warmup_beyond_capacity() {
        let mut tc = TrainerConfig::default();
        tc.warmup = 10_000;
        assert!(tc.validate().is_err());
        tc.warmup = 9_999;
        assert!(tc.validate().is_ok());
    }

    #[test]
    fn warmup_fills_just_past_threshold_and_is_deterministic() {
        use rand::SeedableRng;
        let env = tiny_config(Path::new("unused"), "x").env;
        for t_warm in [0u64, 5] {
            let mut storage = GoalStorage::new(2, 50).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let episodes = warmup(&env, &mut storage, t_warm, &mut rng).unwrap();
            assert_eq!(storage.len() as u64, t_warm + 1);
            assert!(episodes as usize >= storage.len());

            let mut storage2 = GoalStorage::new(2, 50).unwrap();
            let mut rng2 = ChaCha8Rng::seed_from_u64(9);
            warmup(&env, &mut storage2, t_warm, &mut rng2).unwrap();
            assert_eq!(storage.to_parts(), storage2.to_parts());
        }
    }

    #[test]
    fn tiny_run_writes_all_artifacts() {
        let dir = tempdir().unwrap();
        let config = tiny_config(dir.path(), "tiny");
        let artifacts = train(&config).unwrap();
        assert_eq!(artifacts.final_t, 40);
        assert_eq!(artifacts.records.len(), 4);
        assert!(artifacts.checkpoint_path.exists());
        assert!(artifacts.config_path.exists());
        let text = std::fs::read_to_string(&artifacts.metrics_path).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 2);
        assert!(text.starts_with(CSV_HEADER));
        for r in &artifacts.records {
            r.validate().unwrap();
            assert!(r.wallclock_s.is_none());
        }
        let reparsed = crate::config::RunConfig::load(&artifacts.config_path).unwrap();
        assert_eq!(&reparsed, &config);
    }

    #[test]
    fn zero_budget_emits_header_only_metrics_and_initial_checkpoint() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config(dir.path(), "zero");
        config.trainer.total_updates = 0;
        let artifacts = train(&config).unwrap();
        assert_eq!(artifacts.final_t, 0);
        assert!(artifacts.records.is_empty());
        let text = std::fs::read_to_string(&artifacts.metrics_path).unwrap();
        assert_eq!(text, format!("{}\n", CSV_HEADER));
        let state = checkpoint::load(&artifacts.checkpoint_path, &config.config_hash().unwrap())
            .unwrap();
        assert_eq!(state.counter, 0);
        assert_eq!(state.storage.entries.len() as u64, config.trainer.warmup + 1);
    }

    #[test]
    fn reruns_are_reproducible() {
        let dir = tempdir().unwrap();
        let config = tiny_config(dir.path(), "rep");
        let a = train(&config).unwrap();
        let metrics_a = std::fs::read(&a.metrics_path).unwrap();
        let checkpoint_a = std::fs::read(&a.checkpoint_path).unwrap();
        std::fs::remove_dir_all(&a.run_dir).unwrap();
        let b = train(&config).unwrap();
        let metrics_b = std::fs::read(&b.metrics_path).unwrap();
        let checkpoint_b = std::fs::read(&b.checkpoint_path).unwrap();
        assert_eq!(metrics_a, metrics_b);
        assert_eq!(checkpoint_a, checkpoint_b);
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_eval, b.final_eval);
    }

    #[test]
    fn four_workers_complete_and_respect_invariants() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config(dir.path(), "mw");
        config.trainer.num_workers = 4;
        config.trainer.total_updates = 60;
        let artifacts = train(&config).unwrap();
        assert_eq!(artifacts.final_t, 60);
        assert_eq!(artifacts.records.len(), 6);
        for r in &artifacts.records {
            r.validate().unwrap();
        }
        let state = checkpoint::load(&artifacts.checkpoint_path, &config.config_hash().unwrap())
            .unwrap();
        assert_eq!(state.stats.worker_rngs.len(), 4);
        let total_outcomes: usize = state.stats.outcomes.iter().map(|q| q.len()).sum();
        assert!(total_outcomes >= 60.min(20 * 2));
    }
}
