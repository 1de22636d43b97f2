//! Per-robot simulation thread. All robot-affecting requests go through its
//! command queue; readers get the latest snapshot without blocking it.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use navsim_core::executive::{ExecError, GoalState, OperatingMode};
use navsim_core::geometry::{KinodynamicLimits, Pose2D, VelocityCommand};
use navsim_core::grid::OccupancyGrid;
use navsim_core::runtime::{Robot, RuntimeError, Snapshot};
use navsim_core::scenario::Scenario;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use crate::error::ApiError;
use crate::events::ServerEvent;
use crate::store::Store;

type Reply<T> = oneshot::Sender<T>;

pub enum Command {
    SetGoal(Pose2D, Reply<Result<u64, ExecError>>),
    CancelGoal(Reply<GoalState>),
    SetMode(OperatingMode, Reply<Result<(), ExecError>>),
    Teleop(VelocityCommand),
    ReleaseTeleop,
    StartMapping(Reply<Result<(), RuntimeError>>),
    ConfirmMapping(PathBuf, Reply<Result<u64, RuntimeError>>),
    DiscardMapping(Reply<Result<(), RuntimeError>>),
    Map(Reply<OccupancyGrid>),
    Diagnostics(Reply<Diagnostics>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleHealth {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sim_time: f64,
    pub modules: Vec<ModuleHealth>,
    pub last_errors: Vec<String>,
}

pub struct WorkerConfig {
    pub robot_identifier: String,
    pub seed: u64,
    pub time_scale: f64,
    pub deadman: Duration,
}

pub struct RobotHandle {
    tx: mpsc::Sender<Command>,
    snapshot: Arc<RwLock<Arc<Snapshot>>>,
    pub limits: KinodynamicLimits,
}

impl RobotHandle {
    pub fn spawn(scenario: &Scenario, cfg: WorkerConfig, events: broadcast::Sender<ServerEvent>, store: Arc<Store>) -> Self {
        let mut robot = Robot::new(scenario, cfg.seed);
        // The wall-clock deadman below replaces the sim-time one.
        robot.teleop_deadman = None;
        let limits = scenario.robot.limits;
        let snapshot = Arc::new(RwLock::new(Arc::new(robot.snapshot())));
        let (tx, rx) = mpsc::channel();
        let shared = snapshot.clone();
        thread::Builder::new()
            .name(format!("robot-{}", cfg.robot_identifier))
            .spawn(move || Worker::new(robot, cfg, events, store, shared).run(rx))
            .expect("spawn robot thread");
        Self { tx, snapshot, limits }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn send(&self, cmd: Command) -> Result<(), ApiError> {
        self.tx.send(cmd).map_err(|_| ApiError::Unavailable)
    }

    pub async fn request<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.send(make(tx))?;
        rx.await.map_err(|_| ApiError::Unavailable)
    }
}

struct Worker {
    robot: Robot,
    cfg: WorkerConfig,
    events: broadcast::Sender<ServerEvent>,
    store: Arc<Store>,
    shared: Arc<RwLock<Arc<Snapshot>>>,
    last_teleop: Option<Instant>,
    last_errors: VecDeque<String>,
    next_record: f64,
}

impl Worker {
    fn new(robot: Robot, cfg: WorkerConfig, events: broadcast::Sender<ServerEvent>, store: Arc<Store>, shared: Arc<RwLock<Arc<Snapshot>>>) -> Self {
        Self {
            robot,
            cfg,
            events,
            store,
            shared,
            last_teleop: None,
            last_errors: VecDeque::new(),
            next_record: 0.0,
        }
    }

    fn run(mut self, rx: mpsc::Receiver<Command>) {
        let started = Instant::now();
        let t0 = self.robot.sim_time();
        loop {
            let elapsed = self.robot.sim_time() - t0;
            let due = started + Duration::from_secs_f64(elapsed / self.cfg.time_scale);
            loop {
                let wait = due.saturating_duration_since(Instant::now());
                match rx.recv_timeout(wait) {
                    Ok(cmd) => self.handle(cmd),
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            }
            if self.last_teleop.is_some_and(|t| t.elapsed() > self.cfg.deadman) {
                self.robot.release_teleop();
                self.last_teleop = None;
            }
            self.robot.tick();
            self.publish();
        }
    }

    fn handle(&mut self, cmd: Command) {
        let r = &mut self.robot;
        match cmd {
            Command::SetGoal(goal, reply) => {
                let out = r.set_goal(goal);
                self.respond(reply, out);
            }
            Command::CancelGoal(reply) => {
                r.cancel_goal();
                let out = r.executive().status().state;
                self.respond(reply, out);
            }
            Command::SetMode(mode, reply) => {
                if mode != OperatingMode::Teleop {
                    self.last_teleop = None;
                }
                let out = r.set_mode(mode);
                self.respond(reply, out);
            }
            Command::Teleop(c) => {
                if r.teleop(c).is_ok() {
                    self.last_teleop = Some(Instant::now());
                }
                self.publish();
            }
            Command::ReleaseTeleop => {
                r.release_teleop();
                self.last_teleop = None;
                self.publish();
            }
            Command::StartMapping(reply) => {
                let out = r.start_mapping();
                self.respond(reply, out);
            }
            Command::ConfirmMapping(path, reply) => {
                let out = r.confirm_mapping(Some(&path)).map(|_| r.map_revision());
                self.respond(reply, out);
            }
            Command::DiscardMapping(reply) => {
                let out = r.discard_mapping();
                self.respond(reply, out);
            }
            Command::Map(reply) => {
                let out = r.static_map().clone();
                self.respond(reply, out);
            }
            Command::Diagnostics(reply) => {
                let out = self.diagnostics();
                self.respond(reply, out);
            }
        }
    }

    /// Publishes first so a client that reads status after the reply sees the change.
    fn respond<T>(&mut self, reply: Reply<T>, out: T) {
        self.publish();
        // A dropped receiver only means the client went away.
        let _ = reply.send(out);
    }

    fn publish(&mut self) {
        let id = self.cfg.robot_identifier.clone();
        let id = id.as_str();
        let snap = Arc::new(self.robot.snapshot());
        if snap.sim_time >= self.next_record {
            self.next_record = snap.sim_time + 1.0;
            self.store.telemetry("status", id, json!(&*snap));
        }
        *self.shared.write().unwrap_or_else(|e| e.into_inner()) = snap;
        for e in self.robot.take_events() {
            let Some(ev) = ServerEvent::from_robot(&e) else { continue };
            match &ev {
                ServerEvent::GoalState { goal_id, state: GoalState::Aborted, reason } => {
                    let reason = reason.clone().unwrap_or_default();
                    self.store.critical("goal_aborted", Some(id), None, json!({ "goal_id": goal_id, "reason": reason }));
                    self.note_error(format!("goal {goal_id} aborted: {reason}"));
                }
                ServerEvent::Divergence { count } => {
                    self.store.critical("divergence", Some(id), None, json!({ "count": count }));
                    self.note_error(format!("localization diverged ({count})"));
                }
                ServerEvent::LowBattery { fraction, docking } => {
                    self.store.critical("low_battery", Some(id), None, json!({ "fraction": fraction, "docking": docking }));
                }
                ServerEvent::Mode { mode: OperatingMode::Estop } => {
                    self.store.critical("estop", Some(id), None, serde_json::Value::Null);
                }
                _ => {}
            }
            // No subscribers is fine.
            let _ = self.events.send(ev);
        }
    }

    fn note_error(&mut self, e: String) {
        if self.last_errors.len() == 10 {
            self.last_errors.pop_front();
        }
        self.last_errors.push_back(e);
    }

    fn diagnostics(&self) -> Diagnostics {
        let r = &self.robot;
        let snap = r.snapshot();
        let status = r.executive().status();
        let mut modules = vec![ModuleHealth {
            name: "simulator".into(),
            ok: r.collisions() == 0,
            detail: format!("tick {}, collisions {}", r.sim().state().tick, r.collisions()),
        }];
        modules.push(match r.localizer() {
            Some(_) => ModuleHealth {
                name: "localization".into(),
                ok: snap.particles > 0,
                detail: format!("{} particles, {} divergence events", snap.particles, r.divergence_events()),
            },
            None => ModuleHealth {
                name: "localization".into(),
                ok: true,
                detail: "ground truth".into(),
            },
        });
        modules.push(ModuleHealth {
            name: "executive".into(),
            ok: status.state != GoalState::Aborted,
            detail: format!("mode {:?}, goal {:?}, {} gate rejections", snap.mode, status.state, r.executive().gate_rejections),
        });
        modules.push(ModuleHealth {
            name: "battery".into(),
            ok: snap.battery.fraction > r.executive().config.low_battery,
            detail: format!("{:.0}%{}", snap.battery.fraction * 100.0, if snap.battery.charging { ", charging" } else { "" }),
        });
        modules.push(ModuleHealth {
            name: "mapping".into(),
            ok: true,
            detail: format!("revision {}{}", snap.map_revision, if snap.mapping { ", session open" } else { "" }),
        });
        Diagnostics {
            sim_time: snap.sim_time,
            modules,
            last_errors: self.last_errors.iter().cloned().collect(),
        }
    }
}
