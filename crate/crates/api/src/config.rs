use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use navsim_core::scenario::Scenario;
use thiserror::Error;

use crate::store::LogPolicy;

pub const BIND_ENV: &str = "NAVSIM_BIND";
pub const SECRET_ENV: &str = "NAVSIM_PROVISIONING_SECRET";
pub const LOG_POLICY_ENV: &str = "NAVSIM_LOG_POLICY";
pub const DATA_DIR_ENV: &str = "NAVSIM_DATA_DIR";

const DEMO: &str = include_str!("demo.json");

/// Open room with a pillar and a bench, used when no scenario is given.
pub fn demo_scenario() -> Scenario {
    Scenario::from_json(DEMO).expect("demo scenario is valid")
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{SECRET_ENV} is not set; export a provisioning secret before starting the service")]
    MissingSecret,
    #[error("invalid {name}: {message}")]
    Invalid { name: &'static str, message: String },
}

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub bind: SocketAddr,
    pub provisioning_secret: Vec<u8>,
    pub data_dir: PathBuf,
    pub log_policy: LogPolicy,
    /// World every activated robot is simulated in.
    pub scenario: Scenario,
    pub seed: u64,
    /// Sim seconds per wall second.
    pub time_scale: f64,
    pub token_ttl: Duration,
    pub heartbeat: Duration,
    pub teleop_deadman: Duration,
    pub teleop_rate_hz: f64,
    pub diag_max_failures: u32,
    pub diag_lockout: Duration,
}

impl ApiConfig {
    pub fn new(provisioning_secret: impl Into<Vec<u8>>, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            provisioning_secret: provisioning_secret.into(),
            data_dir: data_dir.into(),
            log_policy: LogPolicy::default(),
            scenario: demo_scenario(),
            seed: 0,
            time_scale: 1.0,
            token_ttl: Duration::from_secs(3600),
            heartbeat: Duration::from_secs(15),
            teleop_deadman: Duration::from_millis(500),
            teleop_rate_hz: 20.0,
            diag_max_failures: 5,
            diag_lockout: Duration::from_secs(60),
        }
    }

    /// Reads bind address, secret, log policy and data directory from the environment.
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let secret = get(SECRET_ENV).filter(|s| !s.is_empty()).ok_or(ConfigError::MissingSecret)?;
        let mut cfg = Self::new(secret, get(DATA_DIR_ENV).unwrap_or_else(|| "navsim-data".into()));
        if let Some(bind) = get(BIND_ENV) {
            cfg.bind = bind.parse().map_err(|e: std::net::AddrParseError| ConfigError::Invalid {
                name: BIND_ENV,
                message: e.to_string(),
            })?;
        }
        if let Some(p) = get(LOG_POLICY_ENV) {
            cfg.log_policy = p.parse().map_err(|message| ConfigError::Invalid {
                name: LOG_POLICY_ENV,
                message,
            })?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn lookup(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let m: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| m.get(k).cloned()
    }

    #[test]
    fn secret_is_required() {
        assert!(matches!(ApiConfig::from_lookup(lookup(&[])), Err(ConfigError::MissingSecret)));
        assert!(matches!(ApiConfig::from_lookup(lookup(&[(SECRET_ENV, "")])), Err(ConfigError::MissingSecret)));
    }

    #[test]
    fn env_overrides() {
        let cfg = ApiConfig::from_lookup(lookup(&[
            (SECRET_ENV, "abc"),
            (BIND_ENV, "0.0.0.0:9000"),
            (LOG_POLICY_ENV, "record"),
            (DATA_DIR_ENV, "/tmp/x"),
        ]))
        .unwrap();
        assert_eq!(cfg.bind.port(), 9000);
        assert!(cfg.log_policy.opt_in_recording);
        assert_eq!(cfg.data_dir, PathBuf::from("/tmp/x"));
        assert!(ApiConfig::from_lookup(lookup(&[(SECRET_ENV, "a"), (LOG_POLICY_ENV, "all")])).is_err());
    }

    #[test]
    fn demo_world_is_valid() {
        let s = demo_scenario();
        assert!(s.validate().is_ok());
    }
}
