//! Device listener, HTTP API and alert stream around one processing task.

use std::collections::HashMap;
use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use cradlewatch_core::canonical;
use cradlewatch_core::protocol::{self, Command, DeviceLine, ProtocolError};
use cradlewatch_core::rules::RulesError;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use crate::config::{ConfigError, HubConfig};
use crate::eventlog::{self, LogError, LogRecord, LogWriter};
use crate::processor::{Hub, HubError, HubView};
use crate::replay::{replay_records, ReplayError};

/// Longest accepted device line, newline included.
pub const MAX_LINE_BYTES: u64 = 64 * 1024;
const QUEUE_DEPTH: usize = 4096;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot recover state from log: {0}")]
    Recovery(#[from] ReplayError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("log: {0}")]
    Log(#[from] std::io::Error),
    #[error("processing task failed: {0}")]
    Task(String),
}

impl ServeError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ServeError::Bind { .. } => 2,
            _ => 1,
        }
    }
}

enum Input {
    Connect {
        conn: u64,
        tx: mpsc::UnboundedSender<String>,
    },
    Line {
        conn: u64,
        line: Result<DeviceLine, ProtocolError>,
    },
    Disconnect {
        conn: u64,
    },
    Command {
        cmd: Command,
        reply: oneshot::Sender<Result<(), HubError>>,
    },
    ResetHome {
        reply: oneshot::Sender<Result<(), HubError>>,
    },
    Events {
        since: Option<i64>,
        reply: oneshot::Sender<Result<Vec<LogRecord>, LogError>>,
    },
    Shutdown,
}

/// Sends `r` to the requester; a log failure is also fatal to the processor.
fn answer(reply: oneshot::Sender<Result<(), HubError>>, r: Result<(), HubError>) -> std::io::Result<()> {
    let fatal = match &r {
        Err(HubError::Log(e)) => Some(std::io::Error::new(e.kind(), e.to_string())),
        _ => None,
    };
    let _ = reply.send(r);
    fatal.map_or(Ok(()), Err)
}

struct Conn {
    tx: mpsc::UnboundedSender<String>,
    device: Option<String>,
}

struct Processor {
    hub: Hub,
    log_path: std::path::PathBuf,
    conns: HashMap<u64, Conn>,
    routes: HashMap<String, u64>,
    view: watch::Sender<HubView>,
    alerts: broadcast::Sender<String>,
}

impl Processor {
    fn bind(&mut self, conn: u64, device: &str) -> Result<(), ProtocolError> {
        let c = self.conns.get_mut(&conn).expect("lines only arrive for live connections");
        match &c.device {
            Some(d) if d != device => Err(ProtocolError::invariant(
                "dev",
                format!("connection is bound to `{d}`, got `{device}`"),
            )),
            Some(_) => Ok(()),
            None => {
                if !self.hub.engine().config().devices.contains_key(device) {
                    return Err(ProtocolError::invariant("dev", format!("unknown device `{device}`")));
                }
                log::info!("device {device} connected");
                c.device = Some(device.to_string());
                self.routes.insert(device.to_string(), conn);
                Ok(())
            }
        }
    }

    fn line(&mut self, conn: u64, line: Result<DeviceLine, ProtocolError>) -> Result<(), std::io::Error> {
        let result = line.and_then(|l| {
            let dev = match &l {
                DeviceLine::Event(e) => &e.device_id,
                DeviceLine::Hello { device_id } => device_id,
            };
            self.bind(conn, dev).map(|_| l)
        });
        match result {
            Err(e) => self.hub.reject_line(&e),
            Ok(DeviceLine::Hello { .. }) => self.hub.note_line(),
            Ok(DeviceLine::Event(e)) => match self.hub.ingest(&e) {
                Ok(alerts) => {
                    for a in alerts {
                        let line = canonical::to_string(&a).expect("alerts are always serializable");
                        // No subscribers is not an error.
                        let _ = self.alerts.send(line);
                    }
                }
                Err(HubError::Log(e)) => return Err(e),
                Err(_) => {}
            },
        }
        Ok(())
    }

    fn command(&mut self, cmd: &Command) -> Result<(), HubError> {
        if let Some(fwd) = self.hub.command(cmd)? {
            let line = protocol::encode_command(&fwd.command);
            match self.routes.get(&fwd.device_id).and_then(|c| self.conns.get(c)) {
                Some(conn) if conn.tx.send(line).is_ok() => {}
                _ => log::warn!("actuator {} is not connected; {} not delivered", fwd.device_id, cmd.kind),
            }
        }
        Ok(())
    }

    /// Returns false once the processor should stop.
    fn handle(&mut self, input: Input) -> Result<bool, std::io::Error> {
        match input {
            Input::Connect { conn, tx } => {
                self.conns.insert(conn, Conn { tx, device: None });
            }
            Input::Line { conn, line } => self.line(conn, line)?,
            Input::Disconnect { conn } => {
                if let Some(Conn { device: Some(d), .. }) = self.conns.remove(&conn) {
                    log::info!("device {d} disconnected");
                    if self.routes.get(&d) == Some(&conn) {
                        self.routes.remove(&d);
                    }
                }
            }
            Input::Command { cmd, reply } => {
                let r = self.command(&cmd);
                answer(reply, r)?;
            }
            Input::ResetHome { reply } => {
                let r = self.hub.reset_home();
                answer(reply, r)?;
            }
            Input::Events { since, reply } => {
                let r = eventlog::read_log(&self.log_path).map(|recs| eventlog::excerpt(&recs, since).to_vec());
                let _ = reply.send(r);
            }
            Input::Shutdown => return Ok(false),
        }
        self.view.send_replace(self.hub.view());
        Ok(true)
    }

    fn run(mut self, mut rx: mpsc::Receiver<Input>) -> Result<(), std::io::Error> {
        while let Some(input) = rx.blocking_recv() {
            if !self.handle(input)? {
                // Finish what was queued before the stop request.
                rx.close();
                while let Some(input) = rx.blocking_recv() {
                    self.handle(input)?;
                }
                break;
            }
        }
        self.hub.sync_log()
    }
}

#[derive(Clone)]
struct AppState {
    input: mpsc::Sender<Input>,
    view: watch::Receiver<HubView>,
    alerts: broadcast::Sender<String>,
    stopping: Arc<AtomicBool>,
    shutdown: watch::Receiver<bool>,
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let text = canonical::to_string(body).expect("responses are always serializable");
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn error_response(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    json_response(status, &json!({ "error": msg.to_string() }))
}

fn unavailable() -> Response {
    error_response(StatusCode::SERVICE_UNAVAILABLE, "hub is shutting down")
}

async fn refuse_when_stopping(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if s.stopping.load(Ordering::SeqCst) {
        return unavailable();
    }
    next.run(req).await
}

async fn get_state(State(s): State<AppState>) -> Response {
    let view = s.view.borrow().clone();
    json_response(StatusCode::OK, &view)
}

async fn get_counters(State(s): State<AppState>) -> Response {
    let counters = s.view.borrow().state.counters.clone();
    json_response(StatusCode::OK, &counters)
}

async fn get_location(State(s): State<AppState>) -> Response {
    let fix = s.view.borrow().state.latest_fix;
    match fix {
        Some(f) => json_response(StatusCode::OK, &f),
        None => error_response(StatusCode::NOT_FOUND, "no location fix stored"),
    }
}

#[derive(Deserialize)]
struct EventsQuery {
    since: Option<i64>,
}

async fn ask<T>(s: &AppState, make: impl FnOnce(oneshot::Sender<T>) -> Input) -> Option<T> {
    let (tx, rx) = oneshot::channel();
    s.input.send(make(tx)).await.ok()?;
    rx.await.ok()
}

async fn get_events(State(s): State<AppState>, Query(q): Query<EventsQuery>) -> Response {
    match ask(&s, |reply| Input::Events { since: q.since, reply }).await {
        Some(Ok(recs)) => json_response(StatusCode::OK, &recs),
        Some(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e),
        None => unavailable(),
    }
}

async fn get_stream(State(s): State<AppState>) -> impl IntoResponse {
    let rx = s.alerts.subscribe();
    let stream = futures::stream::unfold((rx, s.shutdown), |(mut rx, mut sd)| async move {
        if *sd.borrow() {
            return None;
        }
        tokio::select! {
            biased;
            r = rx.recv() => match r {
                Ok(line) => Some((Ok::<_, Infallible>(Event::default().data(line)), (rx, sd))),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::warn!("stream subscriber fell {n} alerts behind; disconnecting");
                    None
                }
                Err(broadcast::error::RecvError::Closed) => None,
            },
            _ = sd.changed() => None,
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

async fn post_cmd(State(s): State<AppState>, body: Bytes) -> Response {
    let cmd = match protocol::decode_command(&body) {
        Ok(c) => c,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e),
    };
    match ask(&s, |reply| Input::Command { cmd, reply }).await {
        Some(Ok(())) => json_response(StatusCode::ACCEPTED, &json!({ "accepted": cmd.kind })),
        Some(Err(HubError::Rules(e @ RulesError::NoActuatorRegistered(_)))) => {
            error_response(StatusCode::CONFLICT, e)
        }
        Some(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e),
        None => unavailable(),
    }
}

async fn post_reset_home(State(s): State<AppState>) -> Response {
    match ask(&s, |reply| Input::ResetHome { reply }).await {
        Some(Ok(())) => json_response(StatusCode::OK, &json!({ "outside_home": false })),
        Some(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e),
        None => unavailable(),
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/counters", get(get_counters))
        .route("/location", get(get_location))
        .route("/events", get(get_events))
        .route("/stream", get(get_stream))
        .route("/cmd", post(post_cmd))
        .route("/reset-home", post(post_reset_home))
        .layer(middleware::from_fn_with_state(state.clone(), refuse_when_stopping))
        .with_state(state)
}

async fn device_connection(
    stream: TcpStream,
    conn: u64,
    input: mpsc::Sender<Input>,
    mut shutdown: watch::Receiver<bool>,
) {
    let peer = stream.peer_addr().ok();
    let (rd, mut wr) = stream.into_split();
    let (tx, mut out) = mpsc::unbounded_channel::<String>();
    if input.send(Input::Connect { conn, tx }).await.is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(line) = out.recv().await {
            if wr.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    });
    let mut reader = BufReader::new(rd);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let mut limited = (&mut reader).take(MAX_LINE_BYTES);
        let read = tokio::select! {
            r = limited.read_until(b'\n', &mut buf) => r,
            _ = shutdown.changed() => break,
        };
        match read {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => {
                log::debug!("device connection {peer:?}: {e}");
                break;
            }
        }
        let overlong = buf.len() as u64 >= MAX_LINE_BYTES && buf.last() != Some(&b'\n');
        if overlong {
            let err = ProtocolError::invariant("line", format!("longer than {MAX_LINE_BYTES} bytes"));
            let _ = input.send(Input::Line { conn, line: Err(err) }).await;
            log::warn!("closing device connection {peer:?}: overlong line");
            break;
        }
        if buf.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let line = protocol::decode_device_line(&buf);
        if input.send(Input::Line { conn, line }).await.is_err() {
            break;
        }
    }
    let _ = input.send(Input::Disconnect { conn }).await;
    writer.abort();
}

async fn accept_devices(listener: TcpListener, input: mpsc::Sender<Input>, mut shutdown: watch::Receiver<bool>) {
    let mut next = 0u64;
    loop {
        let accepted = tokio::select! {
            r = listener.accept() => r,
            _ = shutdown.changed() => return,
        };
        match accepted {
            Ok((stream, _)) => {
                next += 1;
                tokio::spawn(device_connection(stream, next, input.clone(), shutdown.clone()));
            }
            Err(e) => log::warn!("device accept failed: {e}"),
        }
    }
}

/// A hub whose listeners are bound and running.
pub struct Running {
    pub device_addr: SocketAddr,
    pub http_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    stopping: Arc<AtomicBool>,
    input: mpsc::Sender<Input>,
    tasks: JoinHandle<Result<(), ServeError>>,
}

impl Running {
    /// Starts a graceful shutdown; `wait` reports when it is finished.
    pub fn shutdown(&self) {
        begin_shutdown(&self.stopping, &self.shutdown, &self.input);
    }

    pub async fn wait(self) -> Result<(), ServeError> {
        self.tasks.await.map_err(|e| ServeError::Task(e.to_string()))?
    }

    pub async fn stop(self) -> Result<(), ServeError> {
        self.shutdown();
        self.wait().await
    }
}

fn begin_shutdown(stopping: &AtomicBool, shutdown: &watch::Sender<bool>, input: &mpsc::Sender<Input>) {
    if !stopping.swap(true, Ordering::SeqCst) {
        log::info!("shutting down");
        shutdown.send_replace(true);
        let input = input.clone();
        tokio::spawn(async move {
            let _ = input.send(Input::Shutdown).await;
        });
    }
}

/// Restores state from the configured log, binds both listeners and starts
/// serving.
pub async fn start(config: HubConfig) -> Result<Running, ServeError> {
    let rules = config.rules_config()?;
    let records = eventlog::read_log(&config.log_path).map_err(ReplayError::from)?;
    let (hub, report) = replay_records(rules, &records)?;
    if report.records > 0 {
        log::info!(
            "recovered {} events from {}",
            report.events,
            config.log_path.display()
        );
    }
    let hub = hub.with_log(LogWriter::open(&config.log_path)?);

    let bind = |addr: SocketAddr| async move {
        TcpListener::bind(addr)
            .await
            .map_err(|source| ServeError::Bind { addr, source })
    };
    let devices = bind(config.listen.device).await?;
    let http = bind(config.listen.http).await?;
    let device_addr = devices.local_addr()?;
    let http_addr = http.local_addr()?;
    log::info!("devices on {device_addr}, http on {http_addr}");

    let (input_tx, input_rx) = mpsc::channel(QUEUE_DEPTH);
    let (view_tx, view_rx) = watch::channel(hub.view());
    let (alerts_tx, _) = broadcast::channel(config.stream_backlog);
    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let stopping = Arc::new(AtomicBool::new(false));

    let processor = Processor {
        hub,
        log_path: config.log_path.clone(),
        conns: HashMap::new(),
        routes: HashMap::new(),
        view: view_tx,
        alerts: alerts_tx.clone(),
    };
    let proc_task = tokio::task::spawn_blocking(move || processor.run(input_rx));

    let state = AppState {
        input: input_tx.clone(),
        view: view_rx,
        alerts: alerts_tx,
        stopping: stopping.clone(),
        shutdown: shutdown_rx.clone(),
    };
    let mut http_shutdown = shutdown_rx.clone();
    let http_task = tokio::spawn(async move {
        axum::serve(http, router(state))
            .with_graceful_shutdown(async move {
                let _ = http_shutdown.wait_for(|s| *s).await;
            })
            .await
    });
    let accept_task = tokio::spawn(accept_devices(devices, input_tx.clone(), shutdown_rx));

    let (stop_tx, stop_in, stop_flag) = (shutdown_tx.clone(), input_tx.clone(), stopping.clone());
    let tasks = tokio::spawn(async move {
        let processed = proc_task.await.map_err(|e| ServeError::Task(e.to_string()))?;
        // The processor only ends early on a log failure; take the rest down too.
        begin_shutdown(&stop_flag, &stop_tx, &stop_in);
        drop(stop_in);
        let served = http_task.await.map_err(|e| ServeError::Task(e.to_string()))?;
        let _ = accept_task.await;
        processed?;
        served?;
        Ok(())
    });

    Ok(Running {
        device_addr,
        http_addr,
        shutdown: shutdown_tx,
        stopping,
        input: input_tx,
        tasks,
    })
}

/// Runs until `signal` resolves, then shuts down gracefully.
pub async fn serve(config: HubConfig, signal: impl Future<Output = ()>) -> Result<(), ServeError> {
    let running = start(config).await?;
    let mut stopped = running.shutdown.subscribe();
    tokio::select! {
        _ = signal => {}
        // The hub also stops by itself after a fatal log error.
        _ = stopped.wait_for(|s| *s) => {}
    }
    running.stop().await
}
