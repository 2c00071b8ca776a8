//! Run configuration: one JSON file, located by flag or `SYNFAITH_CONFIG`,
//! with command-line overrides applied on top.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use synfaith_core::perturb::PerturbationSchedule;
use synfaith_core::shapley::DEFAULT_BACKGROUND_PLAYERS;

use crate::error::{AppError, Result};
use crate::protocol::Endpoint;

pub const CONFIG_ENV: &str = "SYNFAITH_CONFIG";

/// Either a point count for a uniform grid or explicit thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Points(usize),
    Thresholds(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schedule: ScheduleSpec,
    /// Background macro-players of the ground-truth game (`C`).
    #[serde(alias = "C")]
    pub background_players: usize,
    pub seed: u64,
    /// Default endpoint for manifest entries bound to a remote model.
    pub endpoint: Option<Endpoint>,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub timeout_ms: u64,
    /// Extra attempts after a timed-out request.
    pub retries: u32,
    /// Requests allowed in flight on one concurrent connection.
    pub max_in_flight: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::Points(11),
            background_players: DEFAULT_BACKGROUND_PLAYERS,
            seed: 11,
            endpoint: None,
            output_dir: PathBuf::from("out"),
            workers: 1,
            timeout_ms: 30_000,
            retries: 1,
            max_in_flight: 16,
        }
    }
}

impl Config {
    /// Reads `path`, or the file named by `SYNFAITH_CONFIG`, or returns defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(AppError::io(&p))?;
                let config: Config = serde_json::from_str(&text).map_err(AppError::json(&p))?;
                config.validate()?;
                Ok(config)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        if self.workers == 0 {
            return Err(AppError::Validation("workers must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(AppError::Validation("max_in_flight must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(AppError::Validation("timeout_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<PerturbationSchedule> {
        Ok(match &self.schedule {
            ScheduleSpec::Points(p) => PerturbationSchedule::uniform(*p)?,
            ScheduleSpec::Thresholds(t) => PerturbationSchedule::new(t.clone())?,
        })
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: Config = serde_json::from_str(r#"{"seed": 3, "schedule": [0.0, 0.5, 1.0]}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.background_players, 6);
        assert_eq!(c.schedule().unwrap().intervals(), 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"sed": 3}"#).is_err());
    }

    #[test]
    fn bad_schedule_rejected() {
        let c = Config { schedule: ScheduleSpec::Thresholds(vec![0.0, 0.7, 0.5, 1.0]), ..Config::default() };
        assert!(c.validate().is_err());
        let c = Config { workers: 0, ..Config::default() };
        assert!(c.validate().is_err());
    }
}
