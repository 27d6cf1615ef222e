//! HTTP and WebSocket front end. Each room lives in its own task, which
//! serializes all messages and ticks for that room.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use effmarket_core::game::MetricsReport;
use futures_util::{SinkExt, StreamExt};
use rand::Rng;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::Instant;

use crate::log::RoundLog;
use crate::protocol::{ClientMessage, ErrorCode, Outbound, Recipient, ServerMessage};
use crate::room::{Room, RoomConfig};
use crate::settings::ServiceSettings;
use crate::{Result, ServiceError};

/// Monotonic milliseconds, anchored to the wall clock once at start-up so
/// that deadlines sent to clients are comparable with their own clocks.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    start: Instant,
    unix_ms_at_start: u64,
}

impl Clock {
    pub fn new() -> Self {
        let unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Clock {
            start: Instant::now(),
            unix_ms_at_start: unix,
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.unix_ms_at_start + self.start.elapsed().as_millis() as u64
    }

    fn instant_at(&self, ms: u64) -> Instant {
        self.start + Duration::from_millis(ms.saturating_sub(self.unix_ms_at_start))
    }
}

impl Default for Clock {
    fn default() -> Self {
        Clock::new()
    }
}

enum Command {
    Client {
        message: ClientMessage,
        reply: oneshot::Sender<Vec<ServerMessage>>,
    },
    Metrics(oneshot::Sender<Result<MetricsReport>>),
    Snapshot(oneshot::Sender<ServerMessage>),
}

#[derive(Clone)]
struct RoomHandle {
    commands: mpsc::Sender<Command>,
    events: broadcast::Sender<Outbound>,
    log_path: PathBuf,
}

pub struct AppState {
    settings: ServiceSettings,
    clock: Clock,
    rooms: Mutex<HashMap<String, RoomHandle>>,
}

impl AppState {
    pub fn new(settings: ServiceSettings) -> Result<Arc<Self>> {
        std::fs::create_dir_all(&settings.log_dir)?;
        Ok(Arc::new(AppState {
            settings,
            clock: Clock::new(),
            rooms: Mutex::new(HashMap::new()),
        }))
    }

    fn room(&self, id: &str) -> Option<RoomHandle> {
        self.rooms.lock().expect("room table poisoned").get(id).cloned()
    }

    /// Creates a room, opens its log and starts its task. Returns the id.
    pub fn create_room(self: &Arc<Self>, config: RoomConfig) -> Result<String> {
        config.validate()?;
        let mut rooms = self.rooms.lock().expect("room table poisoned");
        if rooms.len() >= self.settings.max_rooms {
            return Err(ServiceError::Config(format!(
                "room limit {} reached",
                self.settings.max_rooms
            )));
        }
        let id = loop {
            let candidate = format!("{:012x}", rand::rng().random::<u64>() & 0xffff_ffff_ffff);
            if !rooms.contains_key(&candidate) {
                break candidate;
            }
        };
        let log_path = self.settings.log_dir.join(format!("{id}.jsonl"));
        let log = RoundLog::open(&log_path)?;
        let room = Room::new(id.clone(), config, Some(log), self.clock.now_ms())?;

        let (commands, rx) = mpsc::channel(256);
        let (events, _) = broadcast::channel(1024);
        rooms.insert(
            id.clone(),
            RoomHandle {
                commands,
                events: events.clone(),
                log_path,
            },
        );
        tokio::spawn(run_room(room, rx, events, self.clock));
        Ok(id)
    }
}

fn publish(events: &broadcast::Sender<Outbound>, out: Vec<Outbound>) {
    for o in out {
        // No subscribers is fine: nobody is watching the room.
        let _ = events.send(o);
    }
}

async fn run_room(
    mut room: Room,
    mut commands: mpsc::Receiver<Command>,
    events: broadcast::Sender<Outbound>,
    clock: Clock,
) {
    if room.config().headless {
        let played = tokio::task::spawn_blocking(move || {
            let result = room.run_headless();
            (room, result)
        })
        .await;
        room = match played {
            Ok((room, result)) => {
                if let Err(e) = result {
                    tracing::error!(room = room.id(), "headless room failed: {e}");
                }
                room
            }
            Err(e) => {
                tracing::error!("headless room panicked: {e}");
                return;
            }
        };
    }
    let mut retry_at: Option<Instant> = None;
    loop {
        let wake = retry_at.or_else(|| room.next_wake().map(|ms| clock.instant_at(ms)));
        let sleep = async {
            match wake {
                Some(at) => tokio::time::sleep_until(at).await,
                None => std::future::pending().await,
            }
        };
        tokio::select! {
            command = commands.recv() => {
                let Some(command) = command else { break };
                let now = clock.now_ms();
                match room.tick(now) {
                    Ok(out) => publish(&events, out),
                    Err(e) => tracing::error!(room = room.id(), "settlement failed: {e}"),
                }
                match command {
                    Command::Client { message, reply } => {
                        let (errors, rest): (Vec<_>, Vec<_>) = room
                            .handle_message(message, now)
                            .into_iter()
                            .partition(|o| matches!(o.message, ServerMessage::Error { .. }));
                        publish(&events, rest);
                        let _ = reply.send(errors.into_iter().map(|o| o.message).collect());
                    }
                    Command::Metrics(reply) => {
                        let _ = reply.send(room.metrics());
                    }
                    Command::Snapshot(reply) => {
                        let _ = reply.send(room.state_message());
                    }
                }
            }
            _ = sleep => {
                match room.tick(clock.now_ms()) {
                    Ok(out) => {
                        retry_at = None;
                        publish(&events, out);
                    }
                    Err(e) => {
                        tracing::error!(room = room.id(), "settlement failed, retrying: {e}");
                        retry_at = Some(Instant::now() + Duration::from_millis(100));
                    }
                }
            }
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/rooms", post(create_room))
        .route("/rooms/{id}", get(room_state))
        .route("/rooms/{id}/metrics", get(room_metrics))
        .route("/rooms/{id}/log", get(room_log))
        .route("/ws", get(websocket))
        .with_state(state)
}

/// Binds `settings.bind` and serves until the process ends.
pub async fn serve(settings: ServiceSettings) -> Result<()> {
    let listener = TcpListener::bind(settings.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    let state = AppState::new(settings)?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn error_response(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

async fn create_room(State(state): State<Arc<AppState>>, Json(config): Json<RoomConfig>) -> Response {
    match state.create_room(config) {
        Ok(id) => (StatusCode::CREATED, Json(json!({ "room": id }))).into_response(),
        Err(e @ (ServiceError::Config(_) | ServiceError::Core(_))) => {
            error_response(StatusCode::UNPROCESSABLE_ENTITY, e)
        }
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn room_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(room) = state.room(&id) else {
        return error_response(StatusCode::NOT_FOUND, ServiceError::NotFound(id));
    };
    let (tx, rx) = oneshot::channel();
    if room.commands.send(Command::Snapshot(tx)).await.is_err() {
        return error_response(StatusCode::GONE, "room stopped");
    }
    match rx.await {
        Ok(message) => Json(message).into_response(),
        Err(_) => error_response(StatusCode::GONE, "room stopped"),
    }
}

async fn room_metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(room) = state.room(&id) else {
        return error_response(StatusCode::NOT_FOUND, ServiceError::NotFound(id));
    };
    let (tx, rx) = oneshot::channel();
    if room.commands.send(Command::Metrics(tx)).await.is_err() {
        return error_response(StatusCode::GONE, "room stopped");
    }
    match rx.await {
        Ok(Ok(report)) => Json(report).into_response(),
        Ok(Err(e)) => error_response(StatusCode::CONFLICT, e),
        Err(_) => error_response(StatusCode::GONE, "room stopped"),
    }
}

async fn room_log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(room) = state.room(&id) else {
        return error_response(StatusCode::NOT_FOUND, ServiceError::NotFound(id));
    };
    match tokio::fs::read(&room.log_path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response(),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn websocket(State(state): State<Arc<AppState>>, upgrade: WebSocketUpgrade) -> Response {
    upgrade.on_upgrade(move |socket| connection(state, socket))
}

fn encode(message: &ServerMessage) -> Message {
    Message::Text(
        serde_json::to_string(message)
            .expect("server messages always serialize")
            .into(),
    )
}

async fn connection(state: Arc<AppState>, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (out_tx, mut out_rx) = mpsc::channel::<Message>(256);
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            if sink.send(m).await.is_err() {
                break;
            }
        }
    });

    // The room and player this connection speaks for, and the task relaying
    // that room's events to it.
    let mut bound: Option<(String, String)> = None;
    let mut relay: Option<tokio::task::JoinHandle<()>> = None;

    while let Some(Ok(frame)) = stream.next().await {
        let text = match frame {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let message: ClientMessage = match serde_json::from_str(text.as_str()) {
            Ok(m) => m,
            Err(e) => {
                let err = ServerMessage::error(ErrorCode::Protocol, format!("malformed message: {e}"), None);
                let _ = out_tx.send(encode(&err)).await;
                continue;
            }
        };
        let Some(room) = state.room(message.room()) else {
            let err = ServerMessage::error(
                ErrorCode::NotFound,
                format!("unknown room {}", message.room()),
                None,
            );
            let _ = out_tx.send(encode(&err)).await;
            continue;
        };

        let key = (message.room().to_string(), message.player().to_string());
        if bound.as_ref() != Some(&key) {
            if let Some(r) = relay.take() {
                r.abort();
            }
            let mut events = room.events.subscribe();
            let out = out_tx.clone();
            let player = key.1.clone();
            relay = Some(tokio::spawn(async move {
                loop {
                    match events.recv().await {
                        Ok(o) => {
                            let mine = match &o.to {
                                Recipient::All => true,
                                Recipient::Player(p) => *p == player,
                            };
                            if mine && out.send(encode(&o.message)).await.is_err() {
                                break;
                            }
                        }
                        Err(broadcast::error::RecvError::Lagged(n)) => {
                            tracing::warn!("connection lagged by {n} events");
                        }
                        Err(broadcast::error::RecvError::Closed) => break,
                    }
                }
            }));
            bound = Some(key);
        }

        let (tx, rx) = oneshot::channel();
        if room.commands.send(Command::Client { message, reply: tx }).await.is_err() {
            break;
        }
        if let Ok(errors) = rx.await {
            for e in errors {
                let _ = out_tx.send(encode(&e)).await;
            }
        }
    }

    if let Some(r) = relay {
        r.abort();
    }
    drop(out_tx);
    let _ = writer.await;
}
