//! Durable append-only record store. Critical events only, unless the
//! operator opted in to telemetry recording.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::events::unix_ms;

pub const STORE_FILE: &str = "records.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LogPolicy {
    /// Persist pose, scan and teleop telemetry as well.
    pub opt_in_recording: bool,
}

impl FromStr for LogPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "critical" => Ok(Self { opt_in_recording: false }),
            "record" => Ok(Self { opt_in_recording: true }),
            other => Err(format!("expected critical or record, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Critical,
    Telemetry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub ts_ms: u64,
    pub level: Level,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robot: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub account: Option<String>,
    #[serde(skip_serializing_if = "Value::is_null", default)]
    pub detail: Value,
}

pub struct Store {
    path: PathBuf,
    policy: LogPolicy,
    file: Mutex<File>,
}

impl Store {
    pub fn open(dir: &Path, policy: LogPolicy) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(STORE_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            policy,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn policy(&self) -> LogPolicy {
        self.policy
    }

    pub fn critical(&self, kind: &str, robot: Option<&str>, account: Option<&str>, detail: Value) {
        self.append(Level::Critical, kind, robot, account, detail);
    }

    /// Dropped unless recording was opted in.
    pub fn telemetry(&self, kind: &str, robot: &str, detail: Value) {
        if self.policy.opt_in_recording {
            self.append(Level::Telemetry, kind, Some(robot), None, detail);
        }
    }

    fn append(&self, level: Level, kind: &str, robot: Option<&str>, account: Option<&str>, detail: Value) {
        let rec = Record {
            ts_ms: unix_ms(),
            level,
            kind: kind.to_string(),
            robot: robot.map(str::to_string),
            account: account.map(str::to_string),
            detail,
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = f.write_all(line.as_bytes()) {
            tracing::error!(error = %e, "store append failed");
        }
    }

    pub fn read_all(&self) -> io::Result<Vec<Record>> {
        read_records(&self.path)
    }
}

pub fn read_records(path: &Path) -> io::Result<Vec<Record>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(io::Error::other))
        .collect()
}
