//! HTTP/WS client helpers and API contract checks shared by integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use navsim_api::provision::Credentials;
use navsim_api::{Access, ApiConfig, RunningServer, ROUTES};
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub const SECRET: &str = "test-provisioning-secret";
pub const PASSWORD: &str = "correct horse battery";

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub fn config(dir: &Path) -> ApiConfig {
    let mut cfg = ApiConfig::new(SECRET, dir);
    cfg.bind = "127.0.0.1:0".parse().unwrap();
    cfg.time_scale = 10.0;
    cfg.heartbeat = Duration::from_millis(300);
    cfg
}

pub async fn start(cfg: ApiConfig) -> RunningServer {
    navsim_api::spawn(cfg).await.expect("server starts")
}

#[derive(Clone)]
pub struct Client {
    pub base: String,
    pub http: reqwest::Client,
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
}

impl Client {
    pub fn new(server: &RunningServer) -> Self {
        Self {
            base: format!("http://{}", server.addr),
            http: reqwest::Client::new(),
        }
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.expect("request sent");
        let status = resp.status();
        let bytes = resp.bytes().await.unwrap_or_default();
        Reply {
            status,
            body: serde_json::from_slice(&bytes).unwrap_or(Value::Null),
        }
    }

    pub async fn register(&self, email: &str) -> Reply {
        self.call(Method::POST, "/auth/register", None, Some(json!({ "email": email, "password": PASSWORD })))
            .await
    }

    pub async fn login(&self, email: &str, scope: &str) -> String {
        let r = self
            .call(Method::POST, "/auth/login", None, Some(json!({ "email": email, "password": PASSWORD, "scope": scope })))
            .await;
        assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
        r.body["token"].as_str().unwrap().to_string()
    }

    /// Registers, logs in with control scope, binds and activates `robot`.
    pub async fn onboard(&self, email: &str, robot: &str) -> String {
        assert_eq!(self.register(email).await.status, StatusCode::CREATED);
        let token = self.login(email, "control").await;
        let r = self
            .call(Method::POST, "/robots", Some(&token), Some(json!({ "robot_identifier": robot })))
            .await;
        assert_eq!(r.status, StatusCode::CREATED);
        let code = Credentials::derive(SECRET.as_bytes(), robot).activation_code;
        let r = self
            .call(Method::POST, &format!("/robots/{robot}/activate"), Some(&token), Some(json!({ "activation_code": code })))
            .await;
        assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
        token
    }

    pub async fn status(&self, robot: &str, token: &str) -> Value {
        let r = self.call(Method::GET, &format!("/robots/{robot}/status"), Some(token), None).await;
        assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
        r.body
    }

    pub async fn ws(&self, robot: &str, stream: &str, token: &str) -> Ws {
        let url = format!("{}/robots/{robot}/{stream}?token={token}", self.base.replace("http://", "ws://"));
        tokio_tungstenite::connect_async(url).await.expect("websocket connects").0
    }
}

pub async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

/// Next JSON text message, or None on close or timeout.
pub async fn next_json(ws: &mut Ws, within: Duration) -> Option<Value> {
    let deadline = tokio::time::Instant::now() + within;
    loop {
        let m = tokio::time::timeout_at(deadline, ws.next()).await.ok()??.ok()?;
        match m {
            Message::Text(t) => return serde_json::from_str(&t).ok(),
            Message::Close(_) => return None,
            _ => {}
        }
    }
}

/// All JSON messages received within `window`.
pub async fn collect(ws: &mut Ws, window: Duration) -> Vec<Value> {
    let deadline = tokio::time::Instant::now() + window;
    let mut out = Vec::new();
    while let Ok(Some(Ok(m))) = tokio::time::timeout_at(deadline, ws.next()).await {
        if let Message::Text(t) = m {
            out.push(serde_json::from_str(&t).unwrap());
        }
    }
    out
}

fn concrete(path: &str, robot: &str) -> String {
    path.replace("{id}", robot)
}

fn method(m: &str) -> Method {
    Method::from_bytes(m.as_bytes()).unwrap()
}

/// Every protected route rejects absent, unknown and expired tokens with 401,
/// and foreign, unactivated or under-scoped sessions with 403.
/// Returns the number of requests checked.
pub async fn check_route_auth(client: &Client, expired_token: &str) -> Result<usize, String> {
    let owner = client.onboard("owner@auth.test", "auth-bot").await;
    let status_only = client.login("owner@auth.test", "status").await;
    assert_eq!(client.register("other@auth.test").await.status, StatusCode::CREATED);
    let other = client.login("other@auth.test", "control").await;
    let r = client
        .call(Method::POST, "/robots", Some(&owner), Some(json!({ "robot_identifier": "auth-idle" })))
        .await;
    if r.status != StatusCode::CREATED {
        return Err(format!("binding failed: {:?}", r.body));
    }
    let body = Some(json!({ "x": 1.0, "y": 1.0, "theta": 0.0, "mode": "ESTOP", "robot_identifier": "zz", "activation_code": "x" }));
    let mut checked = 0;
    let mut expect = |route: &str, what: &str, got: StatusCode, want: StatusCode| -> Result<(), String> {
        checked += 1;
        if got == want {
            Ok(())
        } else {
            Err(format!("{route} with {what}: got {got}, want {want}"))
        }
    };
    for spec in ROUTES {
        let path = concrete(spec.path, "auth-bot");
        let m = method(spec.method);
        let name = format!("{} {}", spec.method, spec.path);
        match spec.access {
            Access::Public => continue,
            Access::DiagKey => {
                let r = client.call(m.clone(), &path, None, None).await;
                expect(&name, "no credentials", r.status, StatusCode::UNAUTHORIZED)?;
                let r = client.call(m, &path, Some(&owner), None).await;
                expect(&name, "a bearer token instead of the key", r.status, StatusCode::UNAUTHORIZED)?;
                continue;
            }
            _ => {}
        }
        for (what, token) in [("no token", None), ("unknown token", Some("AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA")), ("expired token", Some(expired_token))] {
            let r = client.call(m.clone(), &path, token, body.clone()).await;
            expect(&name, what, r.status, StatusCode::UNAUTHORIZED)?;
        }
        if matches!(spec.access, Access::Status | Access::Control) {
            let r = client.call(m.clone(), &path, Some(&other), body.clone()).await;
            expect(&name, "another account", r.status, StatusCode::FORBIDDEN)?;
            let idle = concrete(spec.path, "auth-idle");
            let r = client.call(m.clone(), &idle, Some(&owner), body.clone()).await;
            expect(&name, "an unactivated robot", r.status, StatusCode::FORBIDDEN)?;
        }
        if spec.access == Access::Control {
            let r = client.call(m.clone(), &path, Some(&status_only), body.clone()).await;
            expect(&name, "a status-scope token", r.status, StatusCode::FORBIDDEN)?;
        }
    }
    Ok(checked)
}

pub const TELEMETRY_WORDS: [&str; 5] = ["pose", "scan", "ranges", "teleop", "omega"];

/// Lines of the durable store that mention any telemetry payload key.
pub fn telemetry_lines(store: &Path) -> Vec<String> {
    std::fs::read_to_string(store)
        .unwrap_or_default()
        .lines()
        .filter(|l| TELEMETRY_WORDS.iter().any(|w| l.contains(w)))
        .map(str::to_string)
        .collect()
}

/// Drives goals, teleop, mapping and a failed diag attempt through the API.
pub async fn exercise(client: &Client, robot: &str, token: &str) {
    let r = client
        .call(Method::POST, &format!("/robots/{robot}/goal"), Some(token), Some(json!({ "x": 2.0, "y": 3.0, "theta": 0.0 })))
        .await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    tokio::time::sleep(Duration::from_millis(400)).await;
    client.call(Method::POST, &format!("/robots/{robot}/mapping/start"), Some(token), None).await;
    let r = client
        .call(Method::POST, &format!("/robots/{robot}/mode"), Some(token), Some(json!({ "mode": "TELEOP" })))
        .await;
    assert_eq!(r.status, StatusCode::OK);
    let mut ws = client.ws(robot, "teleop", token).await;
    for seq in 1..=10u64 {
        send(&mut ws, json!({ "v": 0.3, "omega": 0.2, "seq": seq })).await;
        tokio::time::sleep(Duration::from_millis(30)).await;
    }
    collect(&mut ws, Duration::from_millis(200)).await;
    drop(ws);
    client.call(Method::POST, &format!("/robots/{robot}/mapping/confirm"), Some(token), None).await;
    client
        .call(Method::POST, &format!("/robots/{robot}/diag"), None, Some(json!({ "diag_key": "wrong" })))
        .await;
    client.status(robot, token).await;
}

/// Count of `session_granted` events each of two live streams receives
/// while `grants` control logins and two status logins happen.
pub async fn grant_counts(client: &Client, email: &str, robot: &str, token: &str, grants: usize) -> (usize, usize) {
    let mut a = client.ws(robot, "events", token).await;
    let mut b = client.ws(robot, "events", token).await;
    for k in 0..grants {
        client.login(email, "control").await;
        if k < 2 {
            client.login(email, "status").await;
        }
    }
    let count = |msgs: Vec<Value>| msgs.iter().filter(|m| m["type"] == "access" && m["kind"] == "session_granted").count();
    let ca = count(collect(&mut a, Duration::from_millis(1000)).await);
    let cb = count(collect(&mut b, Duration::from_millis(200)).await);
    (ca, cb)
}
