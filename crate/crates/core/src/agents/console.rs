//! Websocket bridge between the ground station and a browser console.
//!
//! Client to station: `{"type":"cmd","v":..,"omega":..}` and
//! `{"type":"estop","engage":..}`. Station to client: `{"type":"status",..}`
//! (at most 30 per second per client), `{"type":"event",..}` and
//! `{"type":"error","message":..}`. The bridge holds no keys; every command
//! is signed by the ground station process.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::bus::SecurityEvent;

use super::core::StatusPayload;
use super::AgentError;

const STATUS_GAP: Duration = Duration::from_millis(34);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ConsoleCommand {
    #[serde(rename = "cmd")]
    Velocity { v: f64, omega: f64 },
    #[serde(rename = "estop")]
    EStop { engage: bool },
}

/// Fan-out point between one ground station and any number of consoles.
#[derive(Clone)]
pub struct ConsoleHub {
    status: watch::Sender<Option<StatusPayload>>,
    feed: broadcast::Sender<String>,
    commands: mpsc::Sender<ConsoleCommand>,
}

impl ConsoleHub {
    /// The receiver yields every command typed into any connected console.
    pub fn new() -> (Self, mpsc::Receiver<ConsoleCommand>) {
        let (commands, rx) = mpsc::channel(256);
        let hub = Self { status: watch::channel(None).0, feed: broadcast::channel(1024).0, commands };
        (hub, rx)
    }

    pub fn publish_status(&self, status: StatusPayload) {
        self.status.send_replace(Some(status));
    }

    pub fn publish_event(&self, event: &SecurityEvent) {
        let mut v = serde_json::to_value(event).expect("event serializes");
        v["type"] = "event".into();
        let _ = self.feed.send(v.to_string());
    }

    pub fn publish_error(&self, message: &str) {
        let _ = self.feed.send(json!({ "type": "error", "message": message }).to_string());
    }
}

fn status_message(s: &StatusPayload) -> String {
    let mut v = serde_json::to_value(s).expect("status serializes");
    v["type"] = "status".into();
    v.to_string()
}

pub struct ConsoleHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ConsoleHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

impl Drop for ConsoleHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

#[derive(Clone)]
struct BridgeState {
    hub: ConsoleHub,
    ui: Option<PathBuf>,
}

/// Listens on `listen` and upgrades requests for `/` to the console socket.
/// With `ui`, plain requests are answered from that directory instead.
pub async fn serve_console(listen: &str, hub: ConsoleHub, ui: Option<PathBuf>) -> Result<ConsoleHandle, AgentError> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    let mut app = Router::new().route("/", get(root));
    if let Some(dir) = &ui {
        app = app.fallback_service(tower_http::services::ServeDir::new(dir));
    }
    let app = app.with_state(BridgeState { hub, ui });
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let server = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = rx.await;
        });
        if let Err(e) = server.await {
            tracing::warn!("console bridge stopped: {e}");
        }
    });
    tracing::info!(%addr, "console bridge listening");
    Ok(ConsoleHandle { addr, shutdown: Some(tx), task })
}

async fn root(ws: Option<WebSocketUpgrade>, State(state): State<BridgeState>) -> Response {
    if let Some(ws) = ws {
        let hub = state.hub.clone();
        return ws.on_upgrade(move |socket| client(socket, hub));
    }
    match &state.ui {
        Some(dir) => match tokio::fs::read_to_string(dir.join("index.html")).await {
            Ok(page) => Html(page).into_response(),
            Err(_) => StatusCode::NOT_FOUND.into_response(),
        },
        None => (StatusCode::UPGRADE_REQUIRED, "websocket endpoint").into_response(),
    }
}

async fn client(mut socket: WebSocket, hub: ConsoleHub) {
    let mut status = hub.status.subscribe();
    let mut feed = hub.feed.subscribe();
    let mut last_sent = Instant::now() - STATUS_GAP;
    let mut pending = status.borrow_and_update().is_some();
    loop {
        let due = last_sent + STATUS_GAP;
        tokio::select! {
            msg = socket.recv() => {
                let Some(Ok(msg)) = msg else { break };
                let text = match msg {
                    Message::Text(t) => t,
                    Message::Close(_) => break,
                    _ => continue,
                };
                let reply = match serde_json::from_str::<ConsoleCommand>(&text) {
                    Ok(cmd) => match hub.commands.send(cmd).await {
                        Ok(()) => None,
                        Err(_) => Some("ground station is not accepting commands"),
                    },
                    Err(_) => Some("unrecognized console message"),
                };
                if let Some(m) = reply {
                    let err = json!({ "type": "error", "message": m }).to_string();
                    if socket.send(Message::Text(err)).await.is_err() {
                        break;
                    }
                }
            }
            changed = status.changed(), if !pending => {
                if changed.is_err() {
                    break;
                }
                pending = true;
            }
            _ = tokio::time::sleep_until(due), if pending => {
                let Some(s) = *status.borrow_and_update() else {
                    pending = false;
                    continue;
                };
                pending = false;
                last_sent = Instant::now();
                if socket.send(Message::Text(status_message(&s))).await.is_err() {
                    break;
                }
            }
            line = feed.recv() => match line {
                Ok(line) => {
                    if socket.send(Message::Text(line)).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let note = json!({ "type": "error", "message": format!("{n} events dropped") });
                    let _ = socket.send(Message::Text(note.to_string())).await;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
}
