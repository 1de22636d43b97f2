use std::sync::Arc;
use std::time::Instant;

use axum::extract::ws::rejection::WebSocketUpgradeRejection;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::Response;
use navsim_core::executive::OperatingMode;
use navsim_core::geometry::VelocityCommand;
use serde::Serialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::broadcast::Receiver;
use tokio::time::{interval_at, sleep_until};

use crate::auth::{Scope, Session};
use crate::error::ApiError;
use crate::events::{unix_ms, AccessKind, ServerEvent};
use crate::routes::Auth;
use crate::state::{AppState, RobotEntry};
use crate::teleop::{Offer, TeleopGate, TeleopInput, TeleopOutput};
use crate::worker::Command;

pub const CLOSE_AUTH_EXPIRED: u16 = 4001;

fn upgrade(ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>) -> Result<WebSocketUpgrade, ApiError> {
    ws.map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn send_json<T: Serialize>(socket: &mut WebSocket, msg: &T) -> bool {
    let text = serde_json::to_string(msg).expect("message serializes");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn close_expired(socket: &mut WebSocket) {
    let frame = CloseFrame {
        code: CLOSE_AUTH_EXPIRED,
        reason: "token expired".into(),
    };
    let _ = socket.send(Message::Close(Some(frame))).await;
}

pub async fn teleop(
    State(state): State<AppState>,
    Auth(session): Auth,
    Path(id): Path<String>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> Result<Response, ApiError> {
    let entry = state.authorize(&session, &id, Scope::Control)?;
    if entry.runtime()?.snapshot().mode != OperatingMode::Teleop {
        return Err(ApiError::Conflict("robot is not in TELEOP mode".into()));
    }
    let events = entry.events.subscribe();
    Ok(upgrade(ws)?.on_upgrade(move |socket| teleop_session(state, entry, session, events, socket)))
}

enum TeleopStep {
    Client(Option<Result<Message, axum::Error>>),
    Due,
    Taken,
    Event(Result<ServerEvent, RecvError>),
    Expired,
}

async fn teleop_session(state: AppState, entry: Arc<RobotEntry>, session: Session, mut events: Receiver<ServerEvent>, mut socket: WebSocket) {
    let (me, mut holder, took_over) = entry.control.grant();
    if took_over {
        entry.notify(session.account_id.as_deref(), AccessKind::ControlTaken);
        state.store.critical("control_taken", Some(&entry.identifier), session.account_id.as_deref(), serde_json::Value::Null);
    }
    let Ok(rt) = entry.runtime() else { return };
    let limits = rt.limits;
    let mut gate = TeleopGate::new(state.config.teleop_rate_hz);
    let expiry = tokio::time::Instant::from_std(session.expires);
    loop {
        let due = gate.due_at().map(tokio::time::Instant::from_std);
        let step = tokio::select! {
            m = socket.recv() => TeleopStep::Client(m),
            _ = sleep_until(due.unwrap_or(expiry)), if due.is_some() => TeleopStep::Due,
            r = holder.changed() => match r {
                Ok(()) if *holder.borrow_and_update() == me => continue,
                _ => TeleopStep::Taken,
            },
            e = events.recv() => TeleopStep::Event(e),
            _ = sleep_until(expiry) => TeleopStep::Expired,
        };
        match step {
            TeleopStep::Client(Some(Ok(Message::Text(text)))) => match serde_json::from_str::<TeleopInput>(&text) {
                Ok(input) if input.v.is_finite() && input.omega.is_finite() => {
                    if gate.offer(input) == Offer::Stale {
                        let msg = TeleopOutput::Dropped {
                            seq: input.seq,
                            reason: "stale".into(),
                        };
                        if !send_json(&mut socket, &msg).await {
                            break;
                        }
                    }
                }
                _ => {
                    let msg = TeleopOutput::Error {
                        message: "expected {\"v\", \"omega\", \"seq\"}".into(),
                    };
                    if !send_json(&mut socket, &msg).await {
                        break;
                    }
                }
            },
            TeleopStep::Client(Some(Ok(Message::Close(_)))) | TeleopStep::Client(None) | TeleopStep::Client(Some(Err(_))) => break,
            TeleopStep::Client(_) | TeleopStep::Due => {}
            TeleopStep::Taken => {
                send_json(&mut socket, &TeleopOutput::ControlTaken).await;
                let _ = socket.send(Message::Close(None)).await;
                return;
            }
            TeleopStep::Event(Ok(ServerEvent::GateRejected { v, omega })) => {
                let msg = TeleopOutput::Gate { accepted: false, v, omega };
                if !send_json(&mut socket, &msg).await {
                    break;
                }
            }
            TeleopStep::Event(_) => {}
            TeleopStep::Expired => {
                close_expired(&mut socket).await;
                break;
            }
        }
        if let Some(input) = gate.poll(Instant::now()) {
            let (cmd, clamped) = VelocityCommand::new(input.v, input.omega).clamped(&limits);
            if rt.send(Command::Teleop(cmd)).is_err() {
                break;
            }
            state.store.telemetry("teleop", &entry.identifier, json!({ "seq": input.seq, "v": cmd.v, "omega": cmd.omega }));
            let msg = TeleopOutput::Applied {
                seq: input.seq,
                v: cmd.v,
                omega: cmd.omega,
                clamped,
            };
            if !send_json(&mut socket, &msg).await {
                break;
            }
        }
    }
    if entry.control.release(me) {
        let _ = rt.send(Command::ReleaseTeleop);
    }
}

pub async fn events(
    State(state): State<AppState>,
    Auth(session): Auth,
    Path(id): Path<String>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> Result<Response, ApiError> {
    let entry = state.authorize(&session, &id, Scope::Status)?;
    let rx = entry.events.subscribe();
    Ok(upgrade(ws)?.on_upgrade(move |socket| events_session(state, session, rx, socket)))
}

enum EventStep {
    Event(Result<ServerEvent, RecvError>),
    Beat,
    Expired,
    Client(Option<Result<Message, axum::Error>>),
}

async fn events_session(state: AppState, session: Session, mut rx: Receiver<ServerEvent>, mut socket: WebSocket) {
    let period = state.config.heartbeat;
    let mut beat = interval_at(tokio::time::Instant::now() + period, period);
    let expiry = tokio::time::Instant::from_std(session.expires);
    loop {
        let step = tokio::select! {
            e = rx.recv() => EventStep::Event(e),
            _ = beat.tick() => EventStep::Beat,
            _ = sleep_until(expiry) => EventStep::Expired,
            m = socket.recv() => EventStep::Client(m),
        };
        let ok = match step {
            EventStep::Event(Ok(e)) if e.for_event_stream() => send_json(&mut socket, &e).await,
            EventStep::Event(Err(RecvError::Closed)) => false,
            EventStep::Event(_) => true,
            EventStep::Beat => send_json(&mut socket, &ServerEvent::Heartbeat { timestamp: unix_ms() }).await,
            EventStep::Expired => {
                close_expired(&mut socket).await;
                false
            }
            EventStep::Client(Some(Ok(Message::Close(_)))) | EventStep::Client(None) | EventStep::Client(Some(Err(_))) => false,
            EventStep::Client(_) => true,
        };
        if !ok {
            break;
        }
    }
}
