//! Service configuration, read from a TOML file.
//!
//! Every key is optional; omitted keys take the defaults below.
//!
//! ```toml
//! bind = "127.0.0.1"
//! port = 8080
//! glucometer_port = 7070
//! db_path = "glucoach.db"
//! session_ttl_minutes = 720
//! kcal_per_step = 0.04
//!
//! [thresholds]
//! normal_from = 70
//!
//! [schedule]
//! area_bonus = 3
//! ```

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BandThresholds, DomainError, DEFAULT_KCAL_PER_STEP};
use crate::goals::{AdherencePolicy, GoalBounds};
use crate::rewards::RewardSchedule;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error(transparent)]
    Invalid(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: IpAddr,
    pub port: u16,
    /// TCP port for the glucometer line protocol; disabled when absent.
    pub glucometer_port: Option<u16>,
    /// SQLite file; an in-memory store is used when absent.
    pub db_path: Option<PathBuf>,
    pub session_ttl_minutes: i64,
    pub kcal_per_step: f64,
    pub nutrition_timeout_ms: u64,
    pub rules_path: Option<PathBuf>,
    pub foods_path: Option<PathBuf>,
    pub education_path: Option<PathBuf>,
    pub thresholds: BandThresholds,
    pub schedule: RewardSchedule,
    pub goal_bounds: GoalBounds,
    pub adherence: AdherencePolicy,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            glucometer_port: None,
            db_path: None,
            session_ttl_minutes: 12 * 60,
            kcal_per_step: DEFAULT_KCAL_PER_STEP,
            nutrition_timeout_ms: 2000,
            rules_path: None,
            foods_path: None,
            education_path: None,
            thresholds: BandThresholds::default(),
            schedule: RewardSchedule::default(),
            goal_bounds: GoalBounds::default(),
            adherence: AdherencePolicy::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        self.thresholds.validate()?;
        self.schedule.validate()?;
        let invalid = |field, reason: String| Err(DomainError::Invalid { field, reason });
        if !(self.kcal_per_step > 0.0 && self.kcal_per_step.is_finite()) {
            return invalid(
                "kcal_per_step",
                format!("{} must be > 0", self.kcal_per_step),
            );
        }
        if self.session_ttl_minutes <= 0 {
            return invalid("session_ttl_minutes", "must be > 0".into());
        }
        if self.adherence.medication_window_minutes < 0 {
            return invalid("adherence.medication_window_minutes", "must be >= 0".into());
        }
        let b = &self.goal_bounds;
        if b.bg_min >= b.bg_max || b.steps_min > b.steps_max || !(b.kcal_min <= b.kcal_max) {
            return invalid("goal_bounds", format!("min must not exceed max: {b:?}"));
        }
        Ok(())
    }

    pub fn http_addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }

    pub fn glucometer_addr(&self) -> Option<SocketAddr> {
        self.glucometer_port
            .map(|port| SocketAddr::new(self.bind, port))
    }

    pub fn nutrition_timeout(&self) -> Duration {
        Duration::from_millis(self.nutrition_timeout_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let config: Config = toml::from_str("port = 9000\n[schedule]\narea_bonus = 5\n").unwrap();
        assert_eq!(config.port, 9000);
        assert_eq!(config.schedule.area_bonus, 5);
        assert_eq!(config.schedule.kcal_per_point, 10.0);
        assert_eq!(config.thresholds, BandThresholds::default());
        config.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(toml::from_str::<Config>("prot = 1").is_err());
        let config: Config = toml::from_str("[thresholds]\nnormal_from = 200\n").unwrap();
        assert!(config.validate().is_err());
        let config: Config = toml::from_str("kcal_per_step = 0.0").unwrap();
        assert!(config.validate().is_err());
    }
}
