// Licensed under the Apache-2.0 license

//! Live simulation over a WebSocket.
//!
//! Connect to `/ws` as a viewer or `/ws?role=commander` to send commands.
//! Every frame is one JSON object; see `docs/serve-protocol.md`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use gecko_core::config::ScenarioConfig;
use gecko_core::pac::{Ack, HostCommand, PacError};
use gecko_core::sim::{TelemetryRow, World};
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;

pub const COMMAND_QUEUE_DEPTH: usize = 64;
const TELEMETRY_BUFFER: usize = 1024;

enum Request {
    Command(HostCommand),
    ListExperiments,
    Drip(u16),
}

struct Job {
    request: Request,
    reply: oneshot::Sender<Value>,
}

struct App {
    jobs: mpsc::Sender<Job>,
    telemetry: broadcast::Sender<String>,
    commander: AtomicBool,
    tick_ms: u64,
}

/// Releases the commander seat when the session ends.
struct CommanderSeat(Arc<App>);

impl Drop for CommanderSeat {
    fn drop(&mut self) {
        self.0.commander.store(false, Ordering::SeqCst);
    }
}

pub struct ServeHandle {
    pub addr: SocketAddr,
    server: JoinHandle<()>,
    sim: JoinHandle<()>,
}

impl ServeHandle {
    pub fn abort(&self) {
        self.server.abort();
        self.sim.abort();
    }

    /// Resolves when the socket server stops.
    pub async fn wait(&mut self) {
        let _ = (&mut self.server).await;
    }
}

fn err(code: &str, message: impl std::fmt::Display) -> Value {
    json!({ "type": "err", "code": code, "message": message.to_string() })
}

fn ack_message(cmd: &HostCommand, result: Result<Ack, PacError>) -> Value {
    match result {
        Ok(Ack::Done { status } | Ack::Status { status }) => json!({
            "type": "ack",
            "name": cmd.command.name(),
            "param": cmd.param,
            "status": status,
            "status_hex": format!("0x{status:04X}"),
        }),
        Ok(Ack::Record { bytes }) => json!({
            "type": "ack",
            "name": cmd.command.name(),
            "param": cmd.param,
            "record_hex": hex::encode(bytes),
        }),
        Err(e) => err("command", e),
    }
}

pub fn telemetry_message(world: &World) -> Value {
    let row = TelemetryRow::capture(world);
    let mut v = serde_json::to_value(row).expect("row serializes");
    let obj = v.as_object_mut().expect("row is an object");
    obj.insert("type".into(), "telemetry".into());
    obj.insert("status_hex".into(), format!("0x{:04X}", row.status).into());
    v
}

fn run_request(world: &mut World, request: Request) -> Value {
    match request {
        Request::Command(_) => unreachable!("commands run inside the tick"),
        Request::ListExperiments => {
            let log = world.bridge().gripper().firmware().log();
            let items: Vec<_> = log
                .experiments()
                .map(|(id, n)| json!({ "experiment": id, "records": n }))
                .collect();
            json!({ "type": "experiments", "logging": log.logging(), "items": items })
        }
        Request::Drip(experiment) => match world.bridge_mut().slow_drip(experiment) {
            Ok(drip) => json!({
                "type": "drip",
                "experiment": experiment,
                "count": drip.records.len(),
                "geckolog_hex": hex::encode(drip.bytes()),
                "sidecar": drip.sidecar(),
            }),
            Err(e) => err("drip", e),
        },
    }
}

/// Owns the world. Requests are drained at each tick boundary; commands are
/// applied by that tick's step and acknowledged after it.
async fn sim_loop(
    mut world: World,
    period: Duration,
    mut jobs: mpsc::Receiver<Job>,
    telemetry: broadcast::Sender<String>,
) {
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        let mut waiting = Vec::new();
        while let Ok(job) = jobs.try_recv() {
            match job.request {
                Request::Command(cmd) => {
                    world.enqueue(cmd);
                    waiting.push((cmd, job.reply));
                }
                other => {
                    let _ = job.reply.send(run_request(&mut world, other));
                }
            }
        }
        let acks = world.step();
        for ((cmd, reply), ack) in waiting.into_iter().zip(acks) {
            let _ = reply.send(ack_message(&cmd, ack));
        }
        let _ = telemetry.send(telemetry_message(&world).to_string());
    }
}

fn parse_request(text: &str) -> Result<Request, Value> {
    let v: Value = serde_json::from_str(text).map_err(|e| err("malformed", e))?;
    let kind = match v.get("type").and_then(Value::as_str) {
        Some(t) => t,
        // `{"cmd": "NAME"}` shorthand.
        None if v.get("cmd").is_some() => "cmd",
        None => return Err(err("malformed", "missing \"type\"")),
    };
    match kind {
        "cmd" => {
            let name = v
                .get("name")
                .or_else(|| v.get("cmd"))
                .and_then(Value::as_str)
                .ok_or_else(|| err("malformed", "cmd needs a string \"name\""))?;
            let param = match v.get("param") {
                None | Some(Value::Null) => None,
                Some(p) => Some(
                    p.as_i64()
                        .ok_or_else(|| err("malformed", "param must be an integer"))?,
                ),
            };
            HostCommand::parse(name, param)
                .map(Request::Command)
                .map_err(|e| err("command", e))
        }
        "list_experiments" => Ok(Request::ListExperiments),
        "drip" => v
            .get("experiment")
            .and_then(Value::as_u64)
            .and_then(|n| u16::try_from(n).ok())
            .map(Request::Drip)
            .ok_or_else(|| err("malformed", "drip needs an integer \"experiment\"")),
        other => Err(err("malformed", format!("unknown message type {other:?}"))),
    }
}

async fn handle_text(app: &App, commander: bool, text: &str) -> Value {
    let request = match parse_request(text) {
        Ok(r) => r,
        Err(e) => return e,
    };
    let read_only = matches!(request, Request::ListExperiments);
    if !commander && !read_only {
        return err("read_only", "viewer sessions cannot send commands");
    }
    let (reply, answer) = oneshot::channel();
    if app.jobs.try_send(Job { request, reply }).is_err() {
        return err("queue_full", "command queue is full");
    }
    answer
        .await
        .unwrap_or_else(|_| err("shutdown", "simulation stopped"))
}

async fn session(socket: WebSocket, app: Arc<App>, wants_command: bool) {
    let (mut tx, mut rx) = socket.split();
    let seat = if wants_command {
        if app.commander.swap(true, Ordering::SeqCst) {
            let busy = err("busy", "another commander session is active");
            let _ = tx.send(Message::Text(busy.to_string())).await;
            let _ = tx.send(Message::Close(None)).await;
            return;
        }
        Some(CommanderSeat(app.clone()))
    } else {
        None
    };
    let hello = json!({
        "type": "hello",
        "role": if seat.is_some() { "commander" } else { "viewer" },
        "tick_ms": app.tick_ms,
    });
    if tx.send(Message::Text(hello.to_string())).await.is_err() {
        return;
    }
    let mut telemetry = app.telemetry.subscribe();
    loop {
        tokio::select! {
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let reply = handle_text(&app, seat.is_some(), &text).await;
                    if tx.send(Message::Text(reply.to_string())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            t = telemetry.recv() => match t {
                Ok(line) => {
                    if tx.send(Message::Text(line)).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
}

async fn ws_route(
    ws: WebSocketUpgrade,
    Query(q): Query<HashMap<String, String>>,
    State(app): State<Arc<App>>,
) -> Response {
    let wants_command = q.get("role").is_some_and(|r| r == "commander");
    ws.on_upgrade(move |socket| session(socket, app, wants_command))
}

/// Binds `addr` and starts the simulation and the socket server.
pub async fn spawn(
    cfg: ScenarioConfig,
    addr: SocketAddr,
    speedup: f64,
) -> anyhow::Result<ServeHandle> {
    cfg.validate()?;
    anyhow::ensure!(speedup > 0.0, "speedup must be positive");
    let world = World::new(&cfg);
    let (jobs_tx, jobs_rx) = mpsc::channel(COMMAND_QUEUE_DEPTH);
    let (telemetry, _) = broadcast::channel(TELEMETRY_BUFFER);
    let app = Arc::new(App {
        jobs: jobs_tx,
        telemetry: telemetry.clone(),
        commander: AtomicBool::new(false),
        tick_ms: cfg.gripper.tick_ms as u64,
    });
    let period = Duration::from_secs_f64(cfg.sim.dt_s / speedup);
    let sim = tokio::spawn(sim_loop(world, period, jobs_rx, telemetry));
    let router = Router::new().route("/ws", get(ws_route)).with_state(app);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, router).await;
    });
    Ok(ServeHandle { addr, server, sim })
}

pub fn run_blocking(cfg: ScenarioConfig, addr: SocketAddr, speedup: f64) -> anyhow::Result<u8> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let mut handle = spawn(cfg, addr, speedup).await?;
        println!("serving ws://{}/ws", handle.addr);
        tokio::select! {
            _ = tokio::signal::ctrl_c() => handle.abort(),
            _ = handle.wait() => {}
        }
        Ok(crate::cli::EXIT_OK)
    })
}
