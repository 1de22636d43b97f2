//! Goal lifecycle linking the global and local planners: replanning,
//! recovery, teleop arbitration, the safety gate and low-battery docking.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::Costmap;
use crate::geometry::{angle_diff, Footprint, KinodynamicLimits, Pose2D, VelocityCommand};
use crate::planner::global::{plan_with, GlobalPlannerConfig, Path, PlanError};
use crate::planner::local::{forward_simulate, goal_reached, CollisionCheck, CycleKind, CycleRecord, LocalPlanError, LocalPlanner};
use crate::sim::BatteryState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GoalState {
    Idle,
    Planning,
    Controlling,
    Recovery,
    Succeeded,
    Aborted,
    Preempted,
}

impl GoalState {
    pub const ALL: [GoalState; 7] = [
        GoalState::Idle,
        GoalState::Planning,
        GoalState::Controlling,
        GoalState::Recovery,
        GoalState::Succeeded,
        GoalState::Aborted,
        GoalState::Preempted,
    ];

    pub fn is_active(&self) -> bool {
        matches!(self, GoalState::Planning | GoalState::Controlling | GoalState::Recovery)
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, GoalState::Succeeded | GoalState::Aborted | GoalState::Preempted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalEvent {
    NewGoal,
    PlanSucceeded,
    PlanFailed,
    GoalInCollision,
    NoValidCommand,
    Stagnated,
    GoalReached,
    RecoveryExhausted,
    Preempt,
}

impl GoalEvent {
    pub const ALL: [GoalEvent; 9] = [
        GoalEvent::NewGoal,
        GoalEvent::PlanSucceeded,
        GoalEvent::PlanFailed,
        GoalEvent::GoalInCollision,
        GoalEvent::NoValidCommand,
        GoalEvent::Stagnated,
        GoalEvent::GoalReached,
        GoalEvent::RecoveryExhausted,
        GoalEvent::Preempt,
    ];
}

use GoalState as S;

/// Rows follow `GoalState::ALL`, columns follow `GoalEvent::ALL`.
const TABLE: [[GoalState; 9]; 7] = [
    // Idle
    [S::Planning, S::Idle, S::Idle, S::Idle, S::Idle, S::Idle, S::Idle, S::Idle, S::Idle],
    // Planning
    [S::Planning, S::Controlling, S::Recovery, S::Aborted, S::Planning, S::Planning, S::Succeeded, S::Planning, S::Preempted],
    // Controlling
    [S::Planning, S::Controlling, S::Recovery, S::Aborted, S::Recovery, S::Recovery, S::Succeeded, S::Controlling, S::Preempted],
    // Recovery
    [S::Planning, S::Controlling, S::Recovery, S::Aborted, S::Recovery, S::Recovery, S::Succeeded, S::Aborted, S::Preempted],
    // Succeeded
    [S::Planning, S::Succeeded, S::Succeeded, S::Succeeded, S::Succeeded, S::Succeeded, S::Succeeded, S::Succeeded, S::Succeeded],
    // Aborted
    [S::Planning, S::Aborted, S::Aborted, S::Aborted, S::Aborted, S::Aborted, S::Aborted, S::Aborted, S::Aborted],
    // Preempted
    [S::Planning, S::Preempted, S::Preempted, S::Preempted, S::Preempted, S::Preempted, S::Preempted, S::Preempted, S::Preempted],
];

pub fn transition(state: GoalState, event: GoalEvent) -> GoalState {
    let r = GoalState::ALL.iter().position(|s| *s == state).unwrap_or(0);
    let c = GoalEvent::ALL.iter().position(|e| *e == event).unwrap_or(0);
    TABLE[r][c]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OperatingMode {
    Autonomous,
    Teleop,
    Docking,
    Estop,
}

impl std::str::FromStr for OperatingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "AUTONOMOUS" => Ok(OperatingMode::Autonomous),
            "TELEOP" => Ok(OperatingMode::Teleop),
            "DOCKING" => Ok(OperatingMode::Docking),
            "ESTOP" => Ok(OperatingMode::Estop),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalStatus {
    pub state: GoalState,
    pub goal: Option<Pose2D>,
    pub goal_id: u64,
    pub attempts: u32,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("operation not allowed in mode {0:?}")]
    Mode(OperatingMode),
    #[error("goal pose is not finite")]
    InvalidGoal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Notice {
    GoalState { goal_id: u64, state: GoalState, reason: Option<String> },
    ModeChanged { mode: OperatingMode },
    LowBattery { fraction: f64, docking: bool },
    DockReached,
    ChargeComplete { fraction: f64 },
    SafetyRejected { v: f64, omega: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutiveConfig {
    pub control_period: f64,
    pub replan_period: f64,
    pub stagnation_window: f64,
    pub stagnation_distance: f64,
    /// Travel after which the recovery sequence starts over.
    pub recovery_reset_distance: f64,
    pub safety_horizon: f64,
    pub safety_granularity: f64,
    pub low_battery: f64,
    pub resume_battery: f64,
    /// Fraction of `omega_max` used by the rotation recovery.
    pub recovery_rotation_speed: f64,
}

impl Default for ExecutiveConfig {
    fn default() -> Self {
        Self {
            control_period: 0.2,
            replan_period: 1.0,
            stagnation_window: 5.0,
            stagnation_distance: 0.05,
            recovery_reset_distance: 1.0,
            safety_horizon: 0.5,
            safety_granularity: 0.05,
            low_battery: 0.15,
            resume_battery: 0.95,
            recovery_rotation_speed: 0.6,
        }
    }
}

/// True when holding `cmd` for `horizon` seconds stays collision-free on `cm`.
/// The zero command always passes.
pub fn safety_gate(cmd: VelocityCommand, pose: &Pose2D, cm: &Costmap, fp: &Footprint, horizon: f64, granularity: f64) -> bool {
    if cmd.is_zero() {
        return true;
    }
    let check = CollisionCheck::at(cm, pose, fp);
    let steps = ((horizon / granularity) + 1e-9).floor() as usize;
    forward_simulate(pose, cmd, steps, granularity)
        .iter()
        .all(|p| !check.cost(cm, p, fp).is_collision())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStep {
    Replan,
    Rotate,
    ReplanAgain,
}

const RECOVERY_SEQUENCE: [RecoveryStep; 3] = [RecoveryStep::Replan, RecoveryStep::Rotate, RecoveryStep::ReplanAgain];

#[derive(Debug, Clone, Default)]
struct RecoveryState {
    index: usize,
    rotated: f64,
    last_yaw: Option<f64>,
    started: f64,
    anchor: Option<Pose2D>,
}

/// Everything one control cycle reads.
pub struct CycleInput<'a> {
    pub now: f64,
    pub pose: Pose2D,
    pub velocity: VelocityCommand,
    pub global: &'a Costmap,
    pub local: &'a Costmap,
    pub teleop: Option<VelocityCommand>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CycleOutput {
    pub command: VelocityCommand,
    pub clamped: bool,
    pub gate_rejected: bool,
}

#[derive(Debug, Clone)]
pub struct Executive {
    pub config: ExecutiveConfig,
    pub planner_config: GlobalPlannerConfig,
    pub local: LocalPlanner,
    mode: OperatingMode,
    status: GoalStatus,
    path: Option<Path>,
    last_plan: f64,
    recovery: RecoveryState,
    progress: VecDeque<(f64, Pose2D)>,
    dock: Option<Pose2D>,
    low_battery_latched: bool,
    notices: Vec<Notice>,
    pub record_cycles: bool,
    pub records: Vec<CycleRecord>,
    pub gate_rejections: u64,
    pub transitions: Vec<(u64, GoalState)>,
}

impl Executive {
    pub fn new(config: ExecutiveConfig, planner_config: GlobalPlannerConfig, local: LocalPlanner, dock: Option<Pose2D>) -> Self {
        Self {
            config,
            planner_config,
            local,
            mode: OperatingMode::Autonomous,
            status: GoalStatus {
                state: GoalState::Idle,
                goal: None,
                goal_id: 0,
                attempts: 0,
                error: None,
            },
            path: None,
            last_plan: f64::NEG_INFINITY,
            recovery: RecoveryState::default(),
            progress: VecDeque::new(),
            dock,
            low_battery_latched: false,
            notices: Vec::new(),
            record_cycles: false,
            records: Vec::new(),
            gate_rejections: 0,
            transitions: Vec::new(),
        }
    }

    pub fn mode(&self) -> OperatingMode {
        self.mode
    }

    pub fn status(&self) -> &GoalStatus {
        &self.status
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_ref()
    }

    pub fn footprint(&self) -> &Footprint {
        &self.local.footprint
    }

    pub fn limits(&self) -> &KinodynamicLimits {
        &self.local.limits
    }

    pub fn take_notices(&mut self) -> Vec<Notice> {
        std::mem::take(&mut self.notices)
    }

    fn apply(&mut self, event: GoalEvent, reason: Option<String>) {
        let next = transition(self.status.state, event);
        if next != self.status.state {
            self.status.state = next;
            if reason.is_some() {
                self.status.error = reason.clone();
            }
            self.transitions.push((self.status.goal_id, next));
            self.notices.push(Notice::GoalState {
                goal_id: self.status.goal_id,
                state: next,
                reason,
            });
            if !next.is_active() {
                self.path = None;
            }
        }
    }

    /// Accepts a new goal, preempting any active one.
    pub fn set_goal(&mut self, goal: Pose2D) -> Result<u64, ExecError> {
        if self.mode != OperatingMode::Autonomous {
            return Err(ExecError::Mode(self.mode));
        }
        self.start_goal(goal)
    }

    fn start_goal(&mut self, goal: Pose2D) -> Result<u64, ExecError> {
        if !goal.is_finite() {
            return Err(ExecError::InvalidGoal);
        }
        self.apply(GoalEvent::Preempt, None);
        self.status.goal_id += 1;
        self.status.goal = Some(goal);
        self.status.attempts = 0;
        self.status.error = None;
        self.path = None;
        self.last_plan = f64::NEG_INFINITY;
        self.recovery = RecoveryState::default();
        self.progress.clear();
        self.apply(GoalEvent::NewGoal, None);
        Ok(self.status.goal_id)
    }

    pub fn cancel_goal(&mut self) {
        self.apply(GoalEvent::Preempt, None);
    }

    /// Operator mode request. DOCKING is entered only by the battery watch.
    pub fn set_mode(&mut self, mode: OperatingMode) -> Result<(), ExecError> {
        if mode == OperatingMode::Docking {
            return Err(ExecError::Mode(mode));
        }
        if mode != OperatingMode::Autonomous {
            self.apply(GoalEvent::Preempt, None);
        }
        self.change_mode(mode);
        Ok(())
    }

    fn change_mode(&mut self, mode: OperatingMode) {
        if self.mode != mode {
            self.mode = mode;
            self.notices.push(Notice::ModeChanged { mode });
        }
    }

    /// Operator joystick input. Takes over from autonomy; refused under ESTOP.
    pub fn teleop_request(&mut self) -> Result<(), ExecError> {
        match self.mode {
            OperatingMode::Estop => Err(ExecError::Mode(self.mode)),
            OperatingMode::Teleop => Ok(()),
            _ => {
                self.apply(GoalEvent::Preempt, None);
                self.change_mode(OperatingMode::Teleop);
                Ok(())
            }
        }
    }

    /// Low-battery policy. Returns the new charging flag when it must change.
    pub fn battery_watch(&mut self, battery: &BatteryState) -> Option<bool> {
        let f = battery.charge_fraction;
        if battery.charging {
            if f >= self.config.resume_battery && self.mode == OperatingMode::Docking {
                self.low_battery_latched = false;
                self.change_mode(OperatingMode::Autonomous);
                self.notices.push(Notice::ChargeComplete { fraction: f });
            }
            return None;
        }
        if f >= self.config.low_battery {
            self.low_battery_latched = false;
            return None;
        }
        if self.low_battery_latched {
            return None;
        }
        self.low_battery_latched = true;
        match (self.mode, self.dock) {
            (OperatingMode::Autonomous, Some(dock)) => {
                self.notices.push(Notice::LowBattery { fraction: f, docking: true });
                self.change_mode(OperatingMode::Docking);
                let _ = self.start_goal(dock);
            }
            _ => self.notices.push(Notice::LowBattery { fraction: f, docking: false }),
        }
        None
    }

    /// Called when the dock goal succeeded; the caller starts charging.
    fn docked(&mut self) -> bool {
        if self.mode == OperatingMode::Docking && self.status.state == GoalState::Succeeded {
            self.notices.push(Notice::DockReached);
            return true;
        }
        false
    }

    /// One control period. Returns the gated command for the simulator and
    /// whether docking has just completed.
    pub fn control_cycle(&mut self, input: &CycleInput) -> (CycleOutput, bool) {
        let raw = match self.mode {
            OperatingMode::Estop => return (CycleOutput::default(), false),
            OperatingMode::Teleop => input.teleop.unwrap_or(VelocityCommand::ZERO),
            OperatingMode::Autonomous | OperatingMode::Docking => self.autonomy(input),
        };
        let (cmd, clamped) = raw.clamped(&self.local.limits);
        let pass = safety_gate(cmd, &input.pose, input.local, &self.local.footprint, self.config.safety_horizon, self.config.safety_granularity);
        let out = if pass {
            CycleOutput { command: cmd, clamped, gate_rejected: false }
        } else {
            self.gate_rejections += 1;
            self.notices.push(Notice::SafetyRejected { v: cmd.v, omega: cmd.omega });
            CycleOutput {
                command: VelocityCommand::ZERO,
                clamped,
                gate_rejected: true,
            }
        };
        let docked = self.docked();
        (out, docked)
    }

    fn autonomy(&mut self, input: &CycleInput) -> VelocityCommand {
        let Some(goal) = self.status.goal else {
            return VelocityCommand::ZERO;
        };
        match self.status.state {
            GoalState::Planning => {
                if !self.replan(input, goal) {
                    return VelocityCommand::ZERO;
                }
                self.controlling(input, goal)
            }
            GoalState::Controlling => {
                if input.now - self.last_plan >= self.config.replan_period - 1e-9 && !self.replan(input, goal) {
                    return VelocityCommand::ZERO;
                }
                self.controlling(input, goal)
            }
            GoalState::Recovery => self.recover(input, goal),
            _ => VelocityCommand::ZERO,
        }
    }

    /// Plans from the current pose; on failure drives the matching event.
    fn replan(&mut self, input: &CycleInput, goal: Pose2D) -> bool {
        self.status.attempts += 1;
        self.last_plan = input.now;
        match plan_with(input.global, &input.pose, &goal, &self.local.footprint, &self.planner_config) {
            Ok((path, _)) => {
                self.path = Some(path);
                if self.status.state != GoalState::Controlling {
                    self.progress.clear();
                }
                self.apply(GoalEvent::PlanSucceeded, None);
                true
            }
            Err(e @ (PlanError::GoalInCollision | PlanError::GoalOutOfBounds)) => {
                self.apply(GoalEvent::GoalInCollision, Some(format!("{e:?}")));
                false
            }
            Err(e) => {
                self.enter_recovery(input, GoalEvent::PlanFailed, format!("{e:?}"));
                false
            }
        }
    }

    fn enter_recovery(&mut self, input: &CycleInput, event: GoalEvent, reason: String) {
        if let Some(anchor) = self.recovery.anchor {
            if anchor.distance(&input.pose) >= self.config.recovery_reset_distance {
                self.recovery.index = 0;
            }
        }
        let was = self.status.state;
        self.apply(event, Some(reason));
        if was != GoalState::Recovery {
            self.recovery.anchor = Some(input.pose);
            self.recovery.rotated = 0.0;
            self.recovery.last_yaw = None;
            self.recovery.started = input.now;
        }
    }

    fn controlling(&mut self, input: &CycleInput, goal: Pose2D) -> VelocityCommand {
        let Some(path) = self.path.as_ref() else {
            return VelocityCommand::ZERO;
        };
        if goal_reached(&input.pose, &goal, &self.local.config) {
            self.apply(GoalEvent::GoalReached, None);
            return VelocityCommand::ZERO;
        }
        let (result, record) = self.local.compute(&input.pose, input.velocity, path, &goal, input.local);
        let kind = record.kind;
        if self.record_cycles {
            self.records.push(record);
        }
        if kind == CycleKind::GoalReached {
            self.apply(GoalEvent::GoalReached, None);
            return VelocityCommand::ZERO;
        }
        if kind == CycleKind::RotateToGoal {
            self.progress.clear();
        } else {
            self.progress.push_back((input.now, input.pose));
            while self.progress.front().is_some_and(|(t, _)| input.now - t > self.config.stagnation_window + 1e-9) {
                self.progress.pop_front();
            }
            if let (Some((t0, p0)), Some((t1, p1))) = (self.progress.front(), self.progress.back()) {
                if t1 - t0 >= self.config.stagnation_window - 1e-9 && p0.distance(p1) < self.config.stagnation_distance {
                    self.progress.clear();
                    self.enter_recovery(input, GoalEvent::Stagnated, "stagnation".into());
                    return VelocityCommand::ZERO;
                }
            }
        }
        match result {
            Ok(cmd) => cmd,
            Err(LocalPlanError::NoValidCommand) => {
                self.enter_recovery(input, GoalEvent::NoValidCommand, "NoValidCommand".into());
                VelocityCommand::ZERO
            }
        }
    }

    fn recover(&mut self, input: &CycleInput, goal: Pose2D) -> VelocityCommand {
        loop {
            let Some(step) = RECOVERY_SEQUENCE.get(self.recovery.index).copied() else {
                let cause = self.status.error.clone().unwrap_or_else(|| "recovery exhausted".into());
                self.apply(GoalEvent::RecoveryExhausted, Some(cause));
                return VelocityCommand::ZERO;
            };
            match step {
                RecoveryStep::Replan | RecoveryStep::ReplanAgain => {
                    self.recovery.index += 1;
                    if self.replan(input, goal) {
                        self.recovery.anchor = Some(input.pose);
                        return self.controlling(input, goal);
                    }
                    if self.status.state != GoalState::Recovery {
                        return VelocityCommand::ZERO;
                    }
                }
                RecoveryStep::Rotate => {
                    if let Some(last) = self.recovery.last_yaw {
                        self.recovery.rotated += angle_diff(input.pose.theta, last).abs();
                    } else {
                        self.recovery.started = input.now;
                    }
                    self.recovery.last_yaw = Some(input.pose.theta);
                    let speed = self.local.limits.omega_max * self.config.recovery_rotation_speed;
                    let budget = 2.0 * TAU / speed.max(1e-6) + 2.0;
                    if self.recovery.rotated >= TAU || input.now - self.recovery.started > budget {
                        self.recovery.index += 1;
                        self.recovery.last_yaw = None;
                        continue;
                    }
                    let cmd = VelocityCommand::new(0.0, speed);
                    if !safety_gate(cmd, &input.pose, input.local, &self.local.footprint, self.config.safety_horizon, self.config.safety_granularity) {
                        self.recovery.index += 1;
                        self.recovery.last_yaw = None;
                        continue;
                    }
                    return cmd;
                }
            }
        }
    }
}
