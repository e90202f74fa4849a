//! Run configuration: nested sections with TOML files, dotted-path
//! overrides, and a stable hash binding checkpoints to their config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::learner::{LossConfig, ModelConfig};
use crate::sched::ScheduleConfig;
use crate::trainer::TrainerConfig;

pub const OUT_ENV_VAR: &str = "LSA_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub loss: LossConfig,
    pub trainer: TrainerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            out_dir: PathBuf::from("runs"),
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            loss: LossConfig::default(),
            trainer: TrainerConfig::default(),
        }
    }
}

fn name_is_safe(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize config: {}", e)))
    }

    /// Applies `key=value` pairs where the key is a dotted path like
    /// `schedule.m`. Values parse as TOML scalars, falling back to a plain
    /// string. Unknown keys and type mismatches are reported by name.
    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut table = toml::Table::try_from(&*self)
            .map_err(|e| Error::Config(format!("serialize config: {}", e)))?;
        for (key, raw) in overrides {
            let value = parse_toml_scalar(raw);
            let mut segments = key.split('.').peekable();
            let mut cursor = &mut table;
            loop {
                let seg = segments
                    .next()
                    .ok_or_else(|| Error::Config(format!("empty override key {:?}", key)))?;
                if seg.is_empty() {
                    return Err(Error::Config(format!("malformed override key {:?}", key)));
                }
                if segments.peek().is_none() {
                    cursor.insert(seg.to_string(), value);
                    break;
                }
                let entry = cursor
                    .entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                cursor = entry.as_table_mut().ok_or_else(|| {
                    Error::Config(format!("override {:?}: `{}` is not a section", key, seg))
                })?;
            }
        }
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override: {}", e.message())))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !name_is_safe(&self.name) {
            return Err(Error::Config(format!(
                "name {:?} must be non-empty, not start with '.', and use only \
                 letters, digits, '-', '_', '.'",
                self.name
            )));
        }
        self.env.validate()?;
        self.model.validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        self.trainer.validate()?;
        Ok(())
    }

    /// Canonical JSON used for hashing; field order is fixed by the struct.
    pub fn canonical_json(&self) -> Result<String> {
        serde_json::to_string(self)
            .map_err(|e| Error::Config(format!("serialize config: {}", e)))
    }

    /// Hash of the fields that determine state evolution. Labels (`name`,
    /// `out_dir`) and stopping/reporting knobs (`total_updates`,
    /// `eval_interval`, `checkpoint_interval`, `eval_episodes`,
    /// `log_wallclock`, `audit`) are excluded so a checkpoint can be resumed
    /// under a longer budget or different logging cadence; everything that
    /// changes the trajectory of params/storage/stats stays covered.
    pub fn config_hash(&self) -> Result<[u8; 32]> {
        let mut value = serde_json::to_value(self)
            .map_err(|e| Error::Config(format!("serialize config: {}", e)))?;
        let obj = value.as_object_mut().expect("config serializes to an object");
        obj.remove("name");
        obj.remove("out_dir");
        if let Some(trainer) = obj.get_mut("trainer").and_then(|t| t.as_object_mut()) {
            for key in [
                "total_updates",
                "eval_interval",
                "checkpoint_interval",
                "eval_episodes",
                "log_wallclock",
                "audit",
            ] {
                trainer.remove(key);
            }
        }
        let json = serde_json::to_string(&value)
            .map_err(|e| Error::Config(format!("serialize config: {}", e)))?;
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        Ok(hasher.finalize().into())
    }

    /// Output root: the `LSA_OUT` environment variable wins over `out_dir`.
    pub fn resolve_out_root(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV_VAR) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve_out_root().join(&self.name)
    }
}

fn parse_toml_scalar(raw: &str) -> toml::Value {
    let probe = format!("x = {}", raw);
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").expect("probe key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(key: &str, value: &str) -> (String, String) {
        (key.to_string(), value.to_string())
    }

    #[test]
    fn empty_file_gives_full_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.schedule.m, 0.7);
        assert_eq!(c.schedule.tau_a, 60.0);
        assert_eq!(c.schedule.refresh_interval, 50);
        assert_eq!(c.loss.supcon_tau, 0.07);
        assert_eq!(c.loss.supcon_eta, 0.5);
        assert_eq!(c.loss.gamma, 0.99);
        assert_eq!(c.loss.lr, 7e-5);
        assert_eq!(c.loss.entropy_beta, 0.01);
        assert_eq!(c.loss.clip_norm, 10.0);
        assert_eq!(c.loss.supcon_batch, 80);
        assert_eq!(c.trainer.warmup, 1000);
        c.validate().unwrap();
    }

    #[test]
    fn override_beats_file_value() {
        let mut c = RunConfig::from_toml_str("[schedule]\nm = 0.3\n").unwrap();
        assert_eq!(c.schedule.m, 0.3);
        c.apply_overrides(&[ov("schedule.m", "1.0")]).unwrap();
        assert_eq!(c.schedule.m, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn out_of_range_override_fails_validation_by_name() {
        let mut c = RunConfig::default();
        c.apply_overrides(&[ov("schedule.m", "1.5")]).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("schedule.m"), "message was {:?}", err);
    }

    #[test]
    fn unknown_keys_are_rejected_with_candidates() {
        let err = RunConfig::from_toml_str("[schedule]\nmm = 1.0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown field"), "message was {:?}", err);
        assert!(err.contains("tau_a"), "message was {:?}", err);

        let mut c = RunConfig::default();
        let err = c
            .apply_overrides(&[ov("schedule.mm", "1.0")])
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown field"), "message was {:?}", err);
    }

    #[test]
    fn type_mismatch_is_an_error() {
        let mut c = RunConfig::default();
        assert!(c.apply_overrides(&[ov("schedule.m", "\"high\"")]).is_err());
    }

    #[test]
    fn string_overrides_fall_back_to_bare_strings() {
        let mut c = RunConfig::default();
        c.apply_overrides(&[ov("name", "trial-3"), ov("trainer.seed", "9")])
            .unwrap();
        assert_eq!(c.name, "trial-3");
        assert_eq!(c.trainer.seed, 9);
    }

    #[test]
    fn enum_overrides_parse() {
        let mut c = RunConfig::default();
        c.apply_overrides(&[
            ov("schedule.mode_sampling", "uniform"),
            ov("schedule.mode_querying", "random"),
        ])
        .unwrap();
        assert_eq!(c.schedule.mode_sampling, crate::sched::SamplingMode::Uniform);
        assert_eq!(c.schedule.mode_querying, crate::sched::QueryingMode::Random);
    }

    #[test]
    fn unsafe_names_fail_validation() {
        for bad in ["", "a/b", "..", ".hidden", "a b"] {
            let mut c = RunConfig::default();
            c.name = bad.to_string();
            assert!(c.validate().is_err(), "{:?} should be rejected", bad);
        }
        let mut c = RunConfig::default();
        c.name = "ok-run_1.2".into();
        c.validate().unwrap();
    }

    #[test]
    fn hash_tracks_dynamics_fields_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        b.loss.lr = 8e-5;
        assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
        let mut c = a.clone();
        c.trainer.seed += 1;
        assert_ne!(a.config_hash().unwrap(), c.config_hash().unwrap());
        let mut d = a.clone();
        d.env.grid_size += 2;
        assert_ne!(a.config_hash().unwrap(), d.config_hash().unwrap());
        let mut e = a.clone();
        e.trainer.num_workers += 1;
        assert_ne!(a.config_hash().unwrap(), e.config_hash().unwrap());

        let mut same = a.clone();
        same.name = "other".into();
        same.out_dir = PathBuf::from("elsewhere");
        same.trainer.total_updates *= 2;
        same.trainer.eval_interval = 7;
        same.trainer.checkpoint_interval = 13;
        same.trainer.eval_episodes = 9;
        same.trainer.log_wallclock = true;
        same.trainer.audit = true;
        assert_eq!(a.config_hash().unwrap(), same.config_hash().unwrap());
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let mut c = RunConfig::default();
        c.apply_overrides(&[ov("schedule.m", "0.9"), ov("env.grid_size", "9")])
            .unwrap();
        let text = c.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn out_root_prefers_environment() {
        let mut c = RunConfig::default();
        c.out_dir = PathBuf::from("some/dir");
        c.name = "r1".into();
        std::env::remove_var(OUT_ENV_VAR);
        assert_eq!(c.run_dir(), PathBuf::from("some/dir/r1"));
        std::env::set_var(OUT_ENV_VAR, "/tmp/elsewhere");
        assert_eq!(c.run_dir(), PathBuf::from("/tmp/elsewhere/r1"));
        std::env::remove_var(OUT_ENV_VAR);
    }
}
