//! Live mission service.
//!
//! One thread owns the [`Mission`] and applies every mutation from a single
//! queue between ticks. After each change it publishes an immutable
//! [`StateSnapshot`]; HTTP reads take the latest one without touching the
//! tick thread. A broadcaster samples snapshots at the stream rate and fans
//! the same encoded frame out to every WebSocket subscriber, sending the full
//! grid once on subscribe and `(index, cost)` changes afterwards.

use std::net::SocketAddr;
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, oneshot, watch};
use travnav_core::costmap::GridSpec;
use travnav_core::grounding::AttributedBox;
use travnav_core::instruction::{
    parse_instruction, remote_extract, Instruction, LandmarkDirective, ModelClient, VerbLexicon,
};
use travnav_core::runtime::{
    Fault, Mission, MissionConfig, MissionError, MissionReport, Phase, TaggedPoint,
};
use travnav_core::scenario::Scenario;
use travnav_core::simworld::{RobotState, WorldBounds};

pub const DEFAULT_STREAM_HZ: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub mission: MissionConfig,
    /// Simulation ticks per second; `None` runs flat out.
    pub tick_hz: Option<f64>,
    /// WebSocket frames per second at most.
    pub stream_hz: f64,
    pub scenarios: Vec<Scenario>,
    /// Scenario loaded at start-up.
    pub initial: String,
    pub lexicon: VerbLexicon,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let mission = MissionConfig::default();
        Self {
            tick_hz: Some(1.0 / mission.dt),
            mission,
            stream_hz: DEFAULT_STREAM_HZ,
            scenarios: Scenario::builtin_names()
                .into_iter()
                .map(|n| Scenario::builtin(n).expect("built-in scenarios load"))
                .collect(),
            initial: "curtain_room".into(),
            lexicon: VerbLexicon::default(),
        }
    }
}

impl ServiceConfig {
    /// Adds `scenario`, replacing a registered one with the same name.
    pub fn register(&mut self, scenario: Scenario) {
        match self.scenarios.iter_mut().find(|s| s.name == scenario.name) {
            Some(slot) => *slot = scenario,
            None => self.scenarios.push(scenario),
        }
    }

    fn validate(&self) -> Result<(), ServiceError> {
        self.mission
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        if !(self.stream_hz > 0.0 && self.stream_hz.is_finite()) {
            return Err(ServiceError::Config("stream rate must be positive".into()));
        }
        if let Some(hz) = self.tick_hz {
            if !(hz > 0.0 && hz.is_finite()) {
                return Err(ServiceError::Config("tick rate must be positive".into()));
            }
        }
        if !self.scenarios.iter().any(|s| s.name == self.initial) {
            return Err(ServiceError::Config(format!(
                "unknown initial scenario `{}`",
                self.initial
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid service configuration: {0}")]
    Config(String),
    #[error("bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Command(String),
}

/// Snapshot fields shared by `/state` and the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotView {
    /// Bumped on every published change.
    pub seq: u64,
    pub scenario: String,
    pub seed: u64,
    pub paused: bool,
    pub tick: u64,
    pub phase: Phase,
    pub robot: RobotState,
    pub goal: Option<[f64; 2]>,
    /// Remaining waypoints from the one nearest the robot.
    pub path: Option<Vec<[f64; 2]>>,
    pub directives: Vec<LandmarkDirective>,
    pub boxes: Vec<AttributedBox>,
    pub points: Vec<TaggedPoint>,
    pub fault: Option<Fault>,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    #[serde(flatten)]
    pub view: SnapshotView,
    /// Master costmap, row-major from the grid origin.
    pub cells: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Full,
    Delta,
}

/// One WebSocket message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    pub kind: FrameKind,
    #[serde(flatten)]
    pub view: SnapshotView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changes: Option<Vec<(u32, u8)>>,
}

impl StreamFrame {
    fn between(prev: Option<&StateSnapshot>, next: &StateSnapshot) -> Self {
        match prev {
            Some(p) if p.view.grid == next.view.grid && p.cells.len() == next.cells.len() => {
                let changes = p
                    .cells
                    .iter()
                    .zip(&next.cells)
                    .enumerate()
                    .filter(|(_, (a, b))| a != b)
                    .map(|(i, (_, &b))| (i as u32, b))
                    .collect();
                Self {
                    kind: FrameKind::Delta,
                    view: next.view.clone(),
                    cells: None,
                    changes: Some(changes),
                }
            }
            _ => Self::full(next),
        }
    }

    fn full(snap: &StateSnapshot) -> Self {
        Self {
            kind: FrameKind::Full,
            view: snap.view.clone(),
            cells: Some(snap.cells.clone()),
            changes: None,
        }
    }

    /// Brings a client-side grid up to date with this frame.
    pub fn apply(&self, grid: &mut Vec<u8>) {
        if let Some(cells) = &self.cells {
            grid.clone_from(cells);
        }
        for &(i, c) in self.changes.iter().flatten() {
            if let Some(cell) = grid.get_mut(i as usize) {
                *cell = c;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub tick: u64,
    pub phase: Phase,
    pub paused: bool,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directives: Option<Vec<LandmarkDirective>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub name: String,
    pub description: String,
    pub bounds: WorldBounds,
    pub start: [f64; 3],
    pub goal: [f64; 2],
}

/// Commands understood by the tick thread.
#[derive(Debug, Clone)]
pub enum Op {
    Reset {
        scenario: String,
        seed: Option<u64>,
    },
    Directives {
        text: String,
        directives: Vec<LandmarkDirective>,
    },
    Goal {
        x: f64,
        y: f64,
    },
    Pause,
    Resume,
    Step,
    Report,
}

#[derive(Debug)]
pub enum Reply {
    Ack(Ack),
    Report(Box<MissionReport>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<MissionError> for ApiError {
    fn from(e: MissionError) -> Self {
        let status = match e {
            MissionError::GoalOutOfBounds { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            MissionError::NotAccepting(_) => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

struct Request {
    op: Op,
    reply: oneshot::Sender<Result<Reply, ApiError>>,
}

struct Engine {
    cfg: Arc<ServiceConfig>,
    mission: Mission,
    paused: bool,
    seq: u64,
    tx: watch::Sender<Arc<StateSnapshot>>,
}

fn snapshot(mission: &Mission, paused: bool, seq: u64) -> StateSnapshot {
    let state = mission.state();
    let path = mission.path().map(|p| {
        let r = mission.robot();
        let nearest = p
            .waypoints
            .iter()
            .enumerate()
            .map(|(k, w)| (k, (w[0] - r.x).hypot(w[1] - r.y)))
            .fold(
                (0, f64::INFINITY),
                |best, cur| if cur.1 < best.1 { cur } else { best },
            )
            .0;
        p.waypoints[nearest..].to_vec()
    });
    StateSnapshot {
        view: SnapshotView {
            seq,
            scenario: mission.scenario().name.clone(),
            seed: mission.seed(),
            paused,
            tick: state.tick,
            phase: state.phase,
            robot: state.robot,
            goal: state.goal,
            path,
            directives: state.directives,
            boxes: state.boxes,
            points: state.points,
            fault: state.fault,
            grid: *mission.costmap().spec(),
        },
        cells: mission.costmap().master().to_vec(),
    }
}

fn new_mission(cfg: &ServiceConfig, name: &str, seed: Option<u64>) -> Result<Mission, ApiError> {
    let scenario = cfg
        .scenarios
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| {
            ApiError::new(StatusCode::NOT_FOUND, format!("unknown scenario `{name}`"))
        })?;
    let config = MissionConfig {
        seed: seed.or(cfg.mission.seed),
        ..cfg.mission
    };
    Ok(Mission::with_lexicon(
        scenario.clone(),
        config,
        cfg.lexicon.clone(),
    )?)
}

impl Engine {
    fn publish(&mut self) {
        self.seq += 1;
        self.tx
            .send_replace(Arc::new(snapshot(&self.mission, self.paused, self.seq)));
    }

    fn ack(&self, directives: Option<Vec<LandmarkDirective>>) -> Reply {
        Reply::Ack(Ack {
            tick: self.mission.tick_count(),
            phase: self.mission.phase(),
            paused: self.paused,
            seq: self.seq,
            directives,
        })
    }

    fn handle(&mut self, op: Op) -> Result<Reply, ApiError> {
        match op {
            Op::Reset { scenario, seed } => {
                self.mission = new_mission(&self.cfg, &scenario, seed)?;
                self.paused = false;
            }
            Op::Directives { text, directives } => {
                let d = self.mission.inject_directives(&text, directives)?.to_vec();
                self.publish();
                return Ok(self.ack(Some(d)));
            }
            Op::Goal { x, y } => self.mission.set_goal(x, y)?,
            Op::Pause => self.paused = true,
            Op::Resume => self.paused = false,
            Op::Step => {
                if !self.mission.tick() {
                    return Ok(self.ack(None));
                }
            }
            Op::Report => return Ok(Reply::Report(Box::new(self.mission.report()))),
        }
        self.publish();
        Ok(self.ack(None))
    }

    fn active(&self) -> bool {
        !self.paused && self.mission.phase() == Phase::Running
    }

    fn run(mut self, rx: mpsc::Receiver<Request>) {
        let period = self.cfg.tick_hz.map(|hz| Duration::from_secs_f64(1.0 / hz));
        let mut next_tick = Instant::now();
        let mut was_active = false;
        loop {
            let active = self.active();
            if active && !was_active {
                next_tick = Instant::now();
            }
            was_active = active;
            let received = if active {
                let wait = period.map_or(Duration::ZERO, |_| {
                    next_tick.saturating_duration_since(Instant::now())
                });
                rx.recv_timeout(wait)
            } else {
                rx.recv().map_err(|_| mpsc::RecvTimeoutError::Disconnected)
            };
            match received {
                Ok(req) => {
                    let result = self.handle(req.op);
                    let _ = req.reply.send(result);
                    continue;
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => return,
            }
            self.mission.tick();
            self.publish();
            if let Some(p) = period {
                // after a stall, resume the cadence instead of bursting
                next_tick = (next_tick + p).max(Instant::now());
            }
        }
    }
}

struct Hub {
    last: Arc<StateSnapshot>,
    tx: broadcast::Sender<Arc<str>>,
}

/// Shared handler state.
#[derive(Clone)]
pub struct App {
    cfg: Arc<ServiceConfig>,
    queue: mpsc::Sender<Request>,
    latest: watch::Receiver<Arc<StateSnapshot>>,
    hub: Arc<Mutex<Hub>>,
    model: Option<Arc<dyn ModelClient + Send + Sync>>,
}

impl App {
    /// Starts the tick thread and the stream broadcaster. Needs a Tokio
    /// runtime.
    pub fn start(
        cfg: ServiceConfig,
        model: Option<Arc<dyn ModelClient + Send + Sync>>,
    ) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let cfg = Arc::new(cfg);
        let mission =
            new_mission(&cfg, &cfg.initial, None).map_err(|e| ServiceError::Config(e.message))?;
        let first = Arc::new(snapshot(&mission, false, 0));
        let (tx, latest) = watch::channel(first.clone());
        let (queue, rx) = mpsc::channel();
        let engine = Engine {
            cfg: cfg.clone(),
            mission,
            paused: false,
            seq: 0,
            tx,
        };
        std::thread::Builder::new()
            .name("travnav-tick".into())
            .spawn(move || engine.run(rx))?;
        let (btx, _) = broadcast::channel(1024);
        let hub = Arc::new(Mutex::new(Hub {
            last: first,
            tx: btx,
        }));
        tokio::spawn(broadcaster(hub.clone(), latest.clone(), cfg.stream_hz));
        Ok(Self {
            cfg,
            queue,
            latest,
            hub,
            model,
        })
    }

    /// Queues `op` for the tick thread and waits for its answer.
    pub async fn command(&self, op: Op) -> Result<Reply, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.queue.send(Request { op, reply }).map_err(|_| {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "simulation thread stopped")
        })?;
        rx.await.map_err(|_| {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "simulation thread stopped")
        })?
    }

    async fn ack(&self, op: Op) -> Result<Ack, ApiError> {
        match self.command(op).await? {
            Reply::Ack(a) => Ok(a),
            Reply::Report(_) => unreachable!("only Op::Report yields a report"),
        }
    }

    /// Parses `text` off the tick thread, locally or with the remote model,
    /// and queues the directives.
    pub async fn instruct(&self, text: String, remote: bool) -> Result<Ack, ApiError> {
        let directives = if remote {
            let client = self.model.clone().ok_or_else(|| {
                ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "no remote model configured (MODEL_ENDPOINT)",
                )
            })?;
            let t = text.clone();
            tokio::task::spawn_blocking(move || {
                remote_extract(&Instruction::new(t), client.as_ref())
            })
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()))?
        } else {
            parse_instruction(&Instruction::new(text.as_str()), &self.cfg.lexicon)
        };
        self.ack(Op::Directives { text, directives }).await
    }

    pub fn latest(&self) -> Arc<StateSnapshot> {
        self.latest.borrow().clone()
    }

    /// The last broadcast state as a full frame, and a receiver for every
    /// frame after it.
    fn subscribe(&self) -> (Arc<str>, broadcast::Receiver<Arc<str>>) {
        let hub = self.hub.lock().expect("hub lock");
        let full = serde_json::to_string(&StreamFrame::full(&hub.last)).expect("frame serializes");
        (full.into(), hub.tx.subscribe())
    }
}

async fn broadcaster(
    hub: Arc<Mutex<Hub>>,
    mut latest: watch::Receiver<Arc<StateSnapshot>>,
    hz: f64,
) {
    let mut every = tokio::time::interval(Duration::from_secs_f64(1.0 / hz));
    every.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        every.tick().await;
        match latest.has_changed() {
            Err(_) => return,
            Ok(false) => continue,
            Ok(true) => {}
        }
        let snap = latest.borrow_and_update().clone();
        let mut hub = hub.lock().expect("hub lock");
        let frame = StreamFrame::between(Some(&hub.last), &snap);
        hub.last = snap;
        let text: Arc<str> = serde_json::to_string(&frame)
            .expect("frame serializes")
            .into();
        let _ = hub.tx.send(text);
    }
}

#[derive(Debug, Deserialize)]
struct ResetBody {
    scenario: String,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct InstructionBody {
    text: String,
    #[serde(default)]
    remote: bool,
}

#[derive(Debug, Deserialize)]
struct GoalBody {
    x: f64,
    y: f64,
}

async fn list_scenarios(State(app): State<App>) -> Json<Vec<ScenarioInfo>> {
    Json(
        app.cfg
            .scenarios
            .iter()
            .map(|s| ScenarioInfo {
                name: s.name.clone(),
                description: s.description.clone(),
                bounds: s.bounds,
                start: [s.start.x, s.start.y, s.start.theta],
                goal: s.goal,
            })
            .collect(),
    )
}

async fn reset(
    State(app): State<App>,
    body: Result<Json<ResetBody>, JsonRejection>,
) -> Result<Json<Ack>, ApiError> {
    let Json(b) = body?;
    Ok(Json(
        app.ack(Op::Reset {
            scenario: b.scenario,
            seed: b.seed,
        })
        .await?,
    ))
}

async fn instruction(
    State(app): State<App>,
    body: Result<Json<InstructionBody>, JsonRejection>,
) -> Result<(StatusCode, Json<Ack>), ApiError> {
    let Json(b) = body?;
    Ok((
        StatusCode::ACCEPTED,
        Json(app.instruct(b.text, b.remote).await?),
    ))
}

async fn goal(
    State(app): State<App>,
    body: Result<Json<GoalBody>, JsonRejection>,
) -> Result<(StatusCode, Json<Ack>), ApiError> {
    let Json(b) = body?;
    Ok((
        StatusCode::ACCEPTED,
        Json(app.ack(Op::Goal { x: b.x, y: b.y }).await?),
    ))
}

async fn pause(State(app): State<App>) -> Result<Json<Ack>, ApiError> {
    Ok(Json(app.ack(Op::Pause).await?))
}

async fn resume(State(app): State<App>) -> Result<Json<Ack>, ApiError> {
    Ok(Json(app.ack(Op::Resume).await?))
}

async fn step(State(app): State<App>) -> Result<Json<Ack>, ApiError> {
    Ok(Json(app.ack(Op::Step).await?))
}

async fn state(State(app): State<App>) -> Json<StateSnapshot> {
    Json(app.latest().as_ref().clone())
}

async fn report(State(app): State<App>) -> Result<Json<MissionReport>, ApiError> {
    match app.command(Op::Report).await? {
        Reply::Report(r) => Ok(Json(*r)),
        Reply::Ack(_) => unreachable!("Op::Report yields a report"),
    }
}

async fn stream(ws: WebSocketUpgrade, State(app): State<App>) -> Response {
    ws.on_upgrade(move |socket| subscriber(socket, app))
}

async fn subscriber(mut socket: WebSocket, app: App) {
    let (full, mut rx) = app.subscribe();
    if socket
        .send(Message::Text(full.as_ref().into()))
        .await
        .is_err()
    {
        return;
    }
    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Ok(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    // too slow for deltas: start over from a full frame
                    let (full, fresh) = app.subscribe();
                    rx = fresh;
                    if socket.send(Message::Text(full.as_ref().into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

pub fn router(app: App) -> Router {
    Router::new()
        .route("/scenarios", get(list_scenarios))
        .route("/reset", post(reset))
        .route("/instruction", post(instruction))
        .route("/goal", post(goal))
        .route("/pause", post(pause))
        .route("/resume", post(resume))
        .route("/step", post(step))
        .route("/state", get(state))
        .route("/report", get(report))
        .route("/stream", get(stream))
        .with_state(app)
}

/// A running server.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    pub app: App,
    shutdown: Option<oneshot::Sender<()>>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.server.await.map_err(std::io::Error::other)?
    }

    /// Serves until Ctrl-C.
    pub async fn run_until_ctrl_c(self) -> std::io::Result<()> {
        let _ = tokio::signal::ctrl_c().await;
        self.shutdown().await
    }
}

/// Binds `addr` and serves in the background.
pub async fn spawn(
    addr: SocketAddr,
    cfg: ServiceConfig,
    model: Option<Arc<dyn ModelClient + Send + Sync>>,
) -> Result<ServiceHandle, ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    let addr = listener.local_addr()?;
    let app = App::start(cfg, model)?;
    let (tx, rx) = oneshot::channel::<()>();
    let router = router(app.clone());
    let server = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(ServiceHandle {
        addr,
        app,
        shutdown: Some(tx),
        server,
    })
}
