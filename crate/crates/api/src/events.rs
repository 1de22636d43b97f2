use std::time::{SystemTime, UNIX_EPOCH};

use navsim_core::executive::{GoalState, Notice, OperatingMode};
use navsim_core::runtime::{EventBody, RobotEvent};
use serde::{Deserialize, Serialize};

pub fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    SessionGranted,
    ControlTaken,
    DiagAccess,
}

impl AccessKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessKind::SessionGranted => "session_granted",
            AccessKind::ControlTaken => "control_taken",
            AccessKind::DiagAccess => "diag_access",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessEvent {
    /// None for maintenance sessions opened with the diag key.
    pub account_id: Option<String>,
    pub robot_identifier: String,
    pub kind: AccessKind,
    pub timestamp: u64,
}

/// Everything published on a robot's broadcast channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    Access(AccessEvent),
    GoalState { goal_id: u64, state: GoalState, reason: Option<String> },
    Mode { mode: OperatingMode },
    LowBattery { fraction: f64, docking: bool },
    Docked,
    ChargeComplete { fraction: f64 },
    Divergence { count: u64 },
    MapRevision { revision: u64 },
    GateRejected { v: f64, omega: f64 },
    Heartbeat { timestamp: u64 },
}

impl ServerEvent {
    pub fn from_robot(e: &RobotEvent) -> Option<Self> {
        Some(match &e.body {
            EventBody::Executive { notice } => match notice {
                Notice::GoalState { goal_id, state, reason } => ServerEvent::GoalState {
                    goal_id: *goal_id,
                    state: *state,
                    reason: reason.clone(),
                },
                Notice::ModeChanged { mode } => ServerEvent::Mode { mode: *mode },
                Notice::LowBattery { fraction, docking } => ServerEvent::LowBattery {
                    fraction: *fraction,
                    docking: *docking,
                },
                Notice::DockReached => ServerEvent::Docked,
                Notice::ChargeComplete { fraction } => ServerEvent::ChargeComplete { fraction: *fraction },
                Notice::SafetyRejected { v, omega } => ServerEvent::GateRejected { v: *v, omega: *omega },
            },
            EventBody::Divergence { count } => ServerEvent::Divergence { count: *count },
            EventBody::MapConfirmed { revision } => ServerEvent::MapRevision { revision: *revision },
            EventBody::WorldChanged => return None,
        })
    }

    /// Gate verdicts go to the teleop stream only.
    pub fn for_event_stream(&self) -> bool {
        !matches!(self, ServerEvent::GateRejected { .. })
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self, ServerEvent::GoalState { state: GoalState::Aborted, .. })
    }
}
