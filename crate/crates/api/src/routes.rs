use axum::body::Bytes;
use axum::extract::{FromRequestParts, Path, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use navsim_core::executive::{GoalState, GoalStatus, OperatingMode};
use navsim_core::geometry::{Pose2D, VelocityCommand};
use navsim_core::runtime::BatterySnapshot;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::auth::{check_login, hash_password, Scope, Session};
use crate::error::ApiError;
use crate::events::AccessKind;
use crate::mapfile;
use crate::provision;
use crate::state::AppState;
use crate::worker::Command;
use crate::ws;

/// What a route requires from the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Public,
    /// Authenticated by the robot's diag key in the body.
    DiagKey,
    /// Any account token.
    Account,
    /// Owner or diag session of an activated robot.
    Status,
    /// Owner of an activated robot with a control-scope token.
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteSpec {
    pub method: &'static str,
    pub path: &'static str,
    pub access: Access,
    pub websocket: bool,
}

const fn route(method: &'static str, path: &'static str, access: Access) -> RouteSpec {
    RouteSpec { method, path, access, websocket: false }
}

/// Every route served by [`router`].
pub const ROUTES: &[RouteSpec] = &[
    route("POST", "/auth/register", Access::Public),
    route("POST", "/auth/login", Access::Public),
    route("GET", "/robots", Access::Account),
    route("POST", "/robots", Access::Account),
    route("POST", "/robots/{id}/activate", Access::Account),
    route("POST", "/robots/{id}/diag", Access::DiagKey),
    route("GET", "/robots/{id}/status", Access::Status),
    route("GET", "/robots/{id}/map", Access::Status),
    route("POST", "/robots/{id}/mode", Access::Control),
    route("POST", "/robots/{id}/goal", Access::Control),
    route("DELETE", "/robots/{id}/goal", Access::Control),
    route("POST", "/robots/{id}/mapping/start", Access::Control),
    route("POST", "/robots/{id}/mapping/confirm", Access::Control),
    route("POST", "/robots/{id}/mapping/discard", Access::Control),
    RouteSpec { method: "GET", path: "/robots/{id}/teleop", access: Access::Control, websocket: true },
    RouteSpec { method: "GET", path: "/robots/{id}/events", access: Access::Status, websocket: true },
];

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/auth/register", post(register))
        .route("/auth/login", post(login))
        .route("/robots", get(list_robots).post(add_robot))
        .route("/robots/{id}/activate", post(activate))
        .route("/robots/{id}/diag", post(diag))
        .route("/robots/{id}/status", get(status))
        .route("/robots/{id}/map", get(map))
        .route("/robots/{id}/mode", post(set_mode))
        .route("/robots/{id}/goal", post(set_goal).delete(cancel_goal))
        .route("/robots/{id}/mapping/start", post(mapping_start))
        .route("/robots/{id}/mapping/confirm", post(mapping_confirm))
        .route("/robots/{id}/mapping/discard", post(mapping_discard))
        .route("/robots/{id}/teleop", get(ws::teleop))
        .route("/robots/{id}/events", get(ws::events))
        .with_state(state)
}

/// Bearer token from the Authorization header or the `token` query parameter.
pub struct Auth(pub Session);

fn token_from(parts: &Parts) -> Option<String> {
    if let Some(h) = parts.headers.get(AUTHORIZATION) {
        return h.to_str().ok()?.strip_prefix("Bearer ").map(|t| t.trim().to_string());
    }
    parts
        .uri
        .query()?
        .split('&')
        .find_map(|kv| kv.strip_prefix("token="))
        .map(str::to_string)
}

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = token_from(parts).ok_or(ApiError::Unauthorized)?;
        state.session(&token).map(Auth)
    }
}

fn account(s: &Session) -> Result<&str, ApiError> {
    s.account_id.as_deref().ok_or(ApiError::Forbidden("account session required"))
}

#[derive(Deserialize)]
struct Credentials {
    email: String,
    password: String,
}

async fn register(State(state): State<AppState>, Json(body): Json<Credentials>) -> Result<impl IntoResponse, ApiError> {
    let email = body.email.trim().to_string();
    if !email.contains('@') || email.len() > 254 {
        return Err(ApiError::BadRequest("invalid email".into()));
    }
    if body.password.len() < 8 {
        return Err(ApiError::BadRequest("password must be at least 8 characters".into()));
    }
    if state.accounts.lock().unwrap_or_else(|e| e.into_inner()).contains(&email) {
        return Err(ApiError::Conflict("email already registered".into()));
    }
    let hash = tokio::task::spawn_blocking(move || hash_password(&body.password))
        .await
        .map_err(ApiError::internal)??;
    let mut accounts = state.accounts.lock().unwrap_or_else(|e| e.into_inner());
    let acc = accounts.register(&email, hash)?;
    Ok((StatusCode::CREATED, Json(json!({ "account_id": acc.account_id }))))
}

#[derive(Deserialize)]
struct Login {
    email: String,
    password: String,
    #[serde(default)]
    scope: Scope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenResponse {
    pub token: String,
    pub expires_at: u64,
    pub scope: Scope,
    pub account_id: Option<String>,
}

async fn login(State(state): State<AppState>, Json(body): Json<Login>) -> Result<Json<TokenResponse>, ApiError> {
    let candidate = state.accounts.lock().unwrap_or_else(|e| e.into_inner()).credentials(body.email.trim());
    let password = body.password;
    let account_id = tokio::task::spawn_blocking(move || check_login(candidate, &password))
        .await
        .map_err(ApiError::internal)??;
    let (token, session) = state.issue(Some(account_id.clone()), None, body.scope);
    if body.scope == Scope::Control {
        state.announce_grant(&account_id);
    }
    Ok(Json(TokenResponse {
        token,
        expires_at: session.expires_at,
        scope: session.scope,
        account_id: Some(account_id),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotSummary {
    pub robot_identifier: String,
    pub activated: bool,
}

async fn list_robots(State(state): State<AppState>, Auth(s): Auth) -> Result<Json<Vec<RobotSummary>>, ApiError> {
    let acc = account(&s)?;
    Ok(Json(
        state
            .robots_of(acc)
            .iter()
            .map(|r| RobotSummary {
                robot_identifier: r.identifier.clone(),
                activated: r.activated(),
            })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct AddRobot {
    robot_identifier: String,
}

async fn add_robot(State(state): State<AppState>, Auth(s): Auth, Json(body): Json<AddRobot>) -> Result<impl IntoResponse, ApiError> {
    let acc = account(&s)?;
    let entry = state.bind_robot(&body.robot_identifier, acc)?;
    Ok((
        StatusCode::CREATED,
        Json(RobotSummary {
            robot_identifier: entry.identifier.clone(),
            activated: false,
        }),
    ))
}

#[derive(Deserialize)]
struct Activate {
    activation_code: String,
}

async fn activate(State(state): State<AppState>, Auth(s): Auth, Path(id): Path<String>, Json(body): Json<Activate>) -> Result<Json<RobotSummary>, ApiError> {
    let acc = account(&s)?;
    let entry = state.robot(&id).ok_or_else(|| ApiError::NotFound(format!("robot {id}")))?;
    if entry.owner != acc {
        return Err(ApiError::Forbidden("not the robot owner"));
    }
    let expected = provision::activation_code(&state.config.provisioning_secret, &id);
    if !provision::activation_matches(&expected, &body.activation_code) {
        state.store.critical("activation_denied", Some(&id), Some(acc), Value::Null);
        return Err(ApiError::Forbidden("wrong activation code"));
    }
    state.activate(&entry);
    Ok(Json(RobotSummary {
        robot_identifier: id,
        activated: true,
    }))
}

#[derive(Deserialize)]
struct DiagRequest {
    diag_key: String,
}

async fn diag(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let key = serde_json::from_slice::<DiagRequest>(&body).map_err(|_| ApiError::Unauthorized)?.diag_key;
    let entry = state.robot(&id).ok_or_else(|| ApiError::NotFound(format!("robot {id}")))?;
    state.check_diag(&entry, &key)?;
    let (token, session) = state.issue(None, Some(id.clone()), Scope::Status);
    entry.notify(None, AccessKind::DiagAccess);
    state.store.critical("diag_access", Some(&id), None, Value::Null);
    let diagnostics = match entry.runtime() {
        Ok(rt) => Some(rt.request(Command::Diagnostics).await?),
        Err(_) => None,
    };
    Ok(Json(json!({
        "token": token,
        "expires_at": session.expires_at,
        "scope": Scope::Status,
        "activated": entry.activated(),
        "diagnostics": diagnostics,
    })))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusBody {
    pub mode: OperatingMode,
    /// Goal state; IDLE when no goal has been given.
    pub state: GoalState,
    pub goal: GoalStatus,
    pub pose: Pose2D,
    pub covariance: [[f64; 3]; 3],
    pub velocity: VelocityCommand,
    pub battery: BatterySnapshot,
    pub map_revision: u64,
    pub mapping: bool,
    pub sim_time: f64,
}

async fn status(State(state): State<AppState>, Auth(s): Auth, Path(id): Path<String>) -> Result<Json<StatusBody>, ApiError> {
    let entry = state.authorize(&s, &id, Scope::Status)?;
    let snap = entry.runtime()?.snapshot();
    Ok(Json(StatusBody {
        mode: snap.mode,
        state: snap.goal.state,
        goal: snap.goal.clone(),
        pose: snap.pose,
        covariance: snap.covariance,
        velocity: snap.velocity,
        battery: snap.battery,
        map_revision: snap.map_revision,
        mapping: snap.mapping,
        sim_time: snap.sim_time,
    }))
}

async fn map(State(state): State<AppState>, Auth(s): Auth, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = state.authorize(&s, &id, Scope::Status)?;
    let grid = entry.runtime()?.request(Command::Map).await?;
    Ok(([(CONTENT_TYPE, mapfile::content_type())], mapfile::encode(&grid)).into_response())
}

#[derive(Deserialize)]
struct ModeRequest {
    mode: OperatingMode,
}

async fn set_mode(State(state): State<AppState>, Auth(s): Auth, Path(id): Path<String>, Json(body): Json<ModeRequest>) -> Result<Json<Value>, ApiError> {
    let entry = state.authorize(&s, &id, Scope::Control)?;
    if body.mode == OperatingMode::Docking {
        return Err(ApiError::BadRequest("mode must be AUTONOMOUS, TELEOP or ESTOP".into()));
    }
    entry.runtime()?.request(|r| Command::SetMode(body.mode, r)).await??;
    Ok(Json(json!({ "mode": body.mode })))
}

async fn set_goal(State(state): State<AppState>, Auth(s): Auth, Path(id): Path<String>, Json(goal): Json<Pose2D>) -> Result<impl IntoResponse, ApiError> {
    let entry = state.authorize(&s, &id, Scope::Control)?;
    let goal_id = entry.runtime()?.request(|r| Command::SetGoal(goal, r)).await??;
    Ok((StatusCode::ACCEPTED, Json(json!({ "goal_id": goal_id }))))
}

async fn cancel_goal(State(state): State<AppState>, Auth(s): Auth, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let entry = state.authorize(&s, &id, Scope::Control)?;
    let st = entry.runtime()?.request(Command::CancelGoal).await?;
    Ok(Json(json!({ "state": st })))
}

async fn mapping_start(State(state): State<AppState>, Auth(s): Auth, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let entry = state.authorize(&s, &id, Scope::Control)?;
    entry.runtime()?.request(Command::StartMapping).await??;
    Ok((StatusCode::ACCEPTED, Json(json!({ "mapping": true }))))
}

async fn mapping_confirm(State(state): State<AppState>, Auth(s): Auth, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let entry = state.authorize(&s, &id, Scope::Control)?;
    let rt = entry.runtime()?;
    let dir = state.config.data_dir.join("maps").join(&id);
    std::fs::create_dir_all(&dir).map_err(ApiError::internal)?;
    let path = dir.join(format!("map_r{}.pgm", rt.snapshot().map_revision + 1));
    let revision = rt.request(|r| Command::ConfirmMapping(path, r)).await??;
    Ok(Json(json!({ "mapping": false, "map_revision": revision })))
}

async fn mapping_discard(State(state): State<AppState>, Auth(s): Auth, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let entry = state.authorize(&s, &id, Scope::Control)?;
    entry.runtime()?.request(Command::DiscardMapping).await??;
    Ok(Json(json!({ "mapping": false })))
}
