use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::Instant;

use serde_json::json;
use tokio::sync::broadcast;

use crate::auth::{Accounts, Scope, Session, Sessions};
use crate::config::ApiConfig;
use crate::error::ApiError;
use crate::events::{unix_ms, AccessEvent, AccessKind, ServerEvent};
use crate::store::Store;
use crate::teleop::ControlArbiter;
use crate::worker::{RobotHandle, WorkerConfig};

#[derive(Default)]
pub struct DiagGuard {
    failures: u32,
    locked_until: Option<Instant>,
}

pub struct RobotEntry {
    pub identifier: String,
    pub owner: String,
    activated: AtomicBool,
    pub events: broadcast::Sender<ServerEvent>,
    runtime: OnceLock<RobotHandle>,
    pub control: ControlArbiter,
    pub diag: Mutex<DiagGuard>,
}

impl RobotEntry {
    pub fn activated(&self) -> bool {
        self.activated.load(Ordering::SeqCst)
    }

    pub fn runtime(&self) -> Result<&RobotHandle, ApiError> {
        self.runtime.get().ok_or(ApiError::Unavailable)
    }

    pub fn notify(&self, account_id: Option<&str>, kind: AccessKind) -> AccessEvent {
        let e = AccessEvent {
            account_id: account_id.map(str::to_string),
            robot_identifier: self.identifier.clone(),
            kind,
            timestamp: unix_ms(),
        };
        let _ = self.events.send(ServerEvent::Access(e.clone()));
        e
    }
}

pub struct Inner {
    pub config: ApiConfig,
    pub accounts: Mutex<Accounts>,
    pub sessions: Mutex<Sessions>,
    pub robots: RwLock<HashMap<String, Arc<RobotEntry>>>,
    pub store: Arc<Store>,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl std::ops::Deref for AppState {
    type Target = Inner;

    fn deref(&self) -> &Inner {
        &self.0
    }
}

pub fn valid_identifier(id: &str) -> bool {
    let mut chars = id.chars();
    id.len() <= 64
        && chars.next().is_some_and(|c| c.is_ascii_alphanumeric())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl AppState {
    pub fn new(config: ApiConfig) -> Result<Self, ApiError> {
        let store = Store::open(&config.data_dir, config.log_policy).map_err(ApiError::internal)?;
        Ok(Self(Arc::new(Inner {
            config,
            accounts: Mutex::new(Accounts::default()),
            sessions: Mutex::new(Sessions::default()),
            robots: RwLock::new(HashMap::new()),
            store: Arc::new(store),
        })))
    }

    pub fn session(&self, token: &str) -> Result<Session, ApiError> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).lookup(token)
    }

    pub fn issue(&self, account_id: Option<String>, robot: Option<String>, scope: Scope) -> (String, Session) {
        let ttl = self.config.token_ttl;
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).issue(account_id, robot, scope, ttl)
    }

    pub fn robot(&self, id: &str) -> Option<Arc<RobotEntry>> {
        self.robots.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn robots_of(&self, account_id: &str) -> Vec<Arc<RobotEntry>> {
        let mut out: Vec<_> = self
            .robots
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .filter(|r| r.owner == account_id)
            .cloned()
            .collect();
        out.sort_by(|a, b| a.identifier.cmp(&b.identifier));
        out
    }

    pub fn bind_robot(&self, id: &str, owner: &str) -> Result<Arc<RobotEntry>, ApiError> {
        if !valid_identifier(id) {
            return Err(ApiError::BadRequest("robot_identifier must be 1-64 of [A-Za-z0-9._-] starting alphanumeric".into()));
        }
        let mut robots = self.robots.write().unwrap_or_else(|e| e.into_inner());
        if robots.contains_key(id) {
            return Err(ApiError::Conflict("robot already bound".into()));
        }
        let entry = Arc::new(RobotEntry {
            identifier: id.to_string(),
            owner: owner.to_string(),
            activated: AtomicBool::new(false),
            events: broadcast::channel(256).0,
            runtime: OnceLock::new(),
            control: ControlArbiter::default(),
            diag: Mutex::new(DiagGuard::default()),
        });
        robots.insert(id.to_string(), entry.clone());
        Ok(entry)
    }

    /// Marks the robot activated and starts its simulation thread once.
    pub fn activate(&self, entry: &RobotEntry) {
        entry.runtime.get_or_init(|| {
            RobotHandle::spawn(
                &self.config.scenario,
                WorkerConfig {
                    robot_identifier: entry.identifier.clone(),
                    seed: self.config.seed,
                    time_scale: self.config.time_scale,
                    deadman: self.config.teleop_deadman,
                },
                entry.events.clone(),
                self.store.clone(),
            )
        });
        entry.activated.store(true, Ordering::SeqCst);
    }

    /// Resolves `id` for `session`, enforcing ownership, activation and scope.
    pub fn authorize(&self, session: &Session, id: &str, scope: Scope) -> Result<Arc<RobotEntry>, ApiError> {
        let entry = self.robot(id).ok_or_else(|| ApiError::NotFound(format!("robot {id}")))?;
        let allowed = match (&session.robot, &session.account_id) {
            (Some(r), _) => r == id,
            (None, Some(a)) => *a == entry.owner,
            (None, None) => false,
        };
        if !allowed {
            return Err(ApiError::Forbidden("not the robot owner"));
        }
        if !entry.activated() {
            return Err(ApiError::Forbidden("robot not activated"));
        }
        if scope == Scope::Control && session.scope != Scope::Control {
            return Err(ApiError::Forbidden("control scope required"));
        }
        Ok(entry)
    }

    /// Announces a control-scope grant on every robot the account owns.
    pub fn announce_grant(&self, account_id: &str) {
        for r in self.robots_of(account_id) {
            r.notify(Some(account_id), AccessKind::SessionGranted);
            self.store.critical("session_granted", Some(&r.identifier), Some(account_id), serde_json::Value::Null);
        }
    }

    /// Checks a diag key with per-robot lockout after repeated failures.
    pub fn check_diag(&self, entry: &RobotEntry, key: &str) -> Result<(), ApiError> {
        let mut g = entry.diag.lock().unwrap_or_else(|e| e.into_inner());
        let now = Instant::now();
        if g.locked_until.is_some_and(|t| now < t) {
            return Err(ApiError::Locked);
        }
        let expected = crate::provision::diag_key(&self.config.provisioning_secret, &entry.identifier);
        if crate::provision::constant_time_eq(&expected, key) {
            g.failures = 0;
            return Ok(());
        }
        g.failures += 1;
        self.store.critical("diag_denied", Some(&entry.identifier), None, json!({ "failures": g.failures }));
        if g.failures >= self.config.diag_max_failures {
            g.failures = 0;
            g.locked_until = Some(now + self.config.diag_lockout);
            self.store.critical("diag_lockout", Some(&entry.identifier), None, json!({ "seconds": self.config.diag_lockout.as_secs_f64() }));
        }
        Err(ApiError::Forbidden("invalid diag key"))
    }
}
