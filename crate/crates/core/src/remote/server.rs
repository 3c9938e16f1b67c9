use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::routing::get;
use axum::Router;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};
use tokio::sync::mpsc;

use super::protocol::{Ack, ClientFrame, CommandMessage, EventMessage, Handshake, Role, Verb};
use super::RemoteError;
use crate::engine::{Command, Engine, Notice, StepCommand};
use crate::model::{StateMachineDef, StatePath};
use crate::storage::to_manifest;
use crate::value::Value;

pub const SESSION_PATH: &str = "/v1/session";
pub const DEFAULT_BACKLOG: usize = 100_000;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    /// Events kept for sessions that resume.
    pub backlog: usize,
    /// Static files served under `/console`.
    pub console_dir: Option<PathBuf>,
    /// Frames a session may have queued before it is dropped as too slow.
    pub session_queue: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { backlog: DEFAULT_BACKLOG, console_dir: None, session_queue: 4096 }
    }
}

/// SHA-256 of the canonical manifest, hex encoded.
pub fn machine_digest(m: &StateMachineDef) -> String {
    hex::encode(Sha256::digest(to_manifest(m).as_bytes()))
}

struct Frame {
    seq: u64,
    text: Arc<str>,
}

struct Sink {
    tx: mpsc::Sender<Arc<str>>,
    streaming: bool,
}

struct Hub {
    backlog: VecDeque<Frame>,
    cap: usize,
    /// Seq of the newest event seen.
    head: u64,
    /// Seq before the first event the server saw.
    base: u64,
    sessions: HashMap<u64, Sink>,
    /// Engine reply token → (session, req_id).
    pending: HashMap<u64, (u64, u64)>,
    controller: Option<u64>,
    next_id: u64,
}

impl Hub {
    fn send(&mut self, sid: u64, text: Arc<str>) {
        let dropped = match self.sessions.get(&sid) {
            Some(s) => s.tx.try_send(text).is_err(),
            None => false,
        };
        if dropped {
            log::warn!(target: "orc::remote", "session {sid} is not keeping up; dropping it");
            self.sessions.remove(&sid);
        }
    }

    fn on_notice(&mut self, n: Notice) {
        match n {
            Notice::Event(e) => {
                if e.seq <= self.head {
                    return;
                }
                let text: Arc<str> = super::protocol::encode(&EventMessage::from_engine(e.seq, &e.body)).into();
                self.head = e.seq;
                self.backlog.push_back(Frame { seq: e.seq, text: text.clone() });
                while self.backlog.len() > self.cap {
                    self.backlog.pop_front();
                }
                let live: Vec<u64> = self.sessions.iter().filter(|(_, s)| s.streaming).map(|(k, _)| *k).collect();
                for sid in live {
                    self.send(sid, text.clone());
                }
            }
            Notice::Reply { token, result } => {
                if let Some((sid, req_id)) = self.pending.remove(&token) {
                    let ack = match result {
                        Ok(()) => Ack::ok(req_id),
                        Err(e) => Ack::err(req_id, e.code(), e.to_string()),
                    };
                    self.send(sid, super::protocol::encode(&ack).into());
                }
            }
        }
    }

    /// Whether every event after `k` is still available.
    fn can_resume(&self, k: u64) -> bool {
        if k >= self.head {
            return true;
        }
        let oldest = self.backlog.front().map_or(self.head + 1, |f| f.seq);
        k >= self.base && k + 1 >= oldest
    }

    /// Starts streaming to `sid`, replaying events after `from`.
    fn attach(&mut self, sid: u64, from: Option<u64>) {
        if let Some(k) = from {
            let replay: Vec<Arc<str>> = self.backlog.iter().filter(|f| f.seq > k).map(|f| f.text.clone()).collect();
            for t in replay {
                self.send(sid, t);
            }
        }
        if let Some(s) = self.sessions.get_mut(&sid) {
            s.streaming = true;
        }
    }
}

struct Shared {
    engine: Arc<Engine>,
    hub: Mutex<Hub>,
    queue: usize,
}

impl Shared {
    fn snapshot(&self, hub: &mut Hub, sid: u64) {
        let head = hub.head;
        let digest = EventMessage::digest(head, &machine_digest(&self.engine.machine()));
        let status = EventMessage::status(head, &self.engine.status());
        hub.send(sid, super::protocol::encode(&digest).into());
        hub.send(sid, super::protocol::encode(&status).into());
    }
}

/// A running protocol server. Dropping it shuts it down.
pub struct Server {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    stop_broadcast: crossbeam_channel::Sender<()>,
    threads: Vec<JoinHandle<()>>,
    shared: Arc<Shared>,
}

impl Server {
    pub fn start(engine: Arc<Engine>, bind: &str, config: ServerConfig) -> Result<Server, RemoteError> {
        let listener = std::net::TcpListener::bind(bind).map_err(|e| RemoteError::Bind(format!("{bind}: {e}")))?;
        listener.set_nonblocking(true).map_err(|e| RemoteError::Bind(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| RemoteError::Bind(e.to_string()))?;

        let notices = engine.subscribe();
        let head = engine.last_seq();
        let shared = Arc::new(Shared {
            engine,
            hub: Mutex::new(Hub {
                backlog: VecDeque::new(),
                cap: config.backlog.max(1),
                head,
                base: head,
                sessions: HashMap::new(),
                pending: HashMap::new(),
                controller: None,
                next_id: 1,
            }),
            queue: config.session_queue.max(16) + config.backlog,
        });

        let (stop_broadcast, stopped) = crossbeam_channel::bounded::<()>(1);
        let hub_side = shared.clone();
        let broadcaster = std::thread::Builder::new()
            .name("orc-broadcast".into())
            .spawn(move || loop {
                crossbeam_channel::select! {
                    recv(notices) -> n => match n {
                        Ok(n) => hub_side.hub.lock().unwrap().on_notice(n),
                        Err(_) => break,
                    },
                    recv(stopped) -> _ => break,
                }
            })
            .expect("spawn broadcaster");

        let mut app = Router::new().route(SESSION_PATH, get(upgrade)).with_state(shared.clone());
        if let Some(dir) = &config.console_dir {
            app = app.nest_service("/console", tower_http::services::ServeDir::new(dir));
        }
        let (stop, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let server = std::thread::Builder::new()
            .name("orc-server".into())
            .spawn(move || {
                let rt = tokio::runtime::Builder::new_multi_thread()
                    .worker_threads(2)
                    .enable_all()
                    .build()
                    .expect("tokio runtime");
                rt.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                    let _ = axum::serve(listener, app)
                        .with_graceful_shutdown(async {
                            let _ = stop_rx.await;
                        })
                        .await;
                });
                rt.shutdown_timeout(Duration::from_millis(200));
            })
            .expect("spawn server");
        Ok(Server { addr, stop: Some(stop), stop_broadcast, threads: vec![broadcaster, server], shared })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}{SESSION_PATH}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        // Open sessions end once their queues are gone.
        self.shared.hub.lock().unwrap().sessions.clear();
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        let _ = self.stop_broadcast.try_send(());
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_now();
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> axum::response::Response {
    ws.on_upgrade(move |socket| session(socket, shared))
}

fn text(frame: &impl serde::Serialize) -> Arc<str> {
    super::protocol::encode(frame).into()
}

async fn session(mut socket: WebSocket, shared: Arc<Shared>) {
    let Some(hs) = read_handshake(&mut socket).await else { return };
    let (tx, mut rx) = mpsc::channel::<Arc<str>>(shared.queue);
    let Some(sid) = register(&shared, &hs, tx.clone()) else {
        let ack = Ack::err(0, "CONTROLLER_EXISTS", "another controller is connected");
        let _ = socket.send(Message::Text(text(&ack).to_string())).await;
        let _ = socket.close().await;
        return;
    };
    drop(tx);
    log::info!(target: "orc::remote", "session {sid} opened as {:?}", hs.role);

    loop {
        tokio::select! {
            out = rx.recv() => match out {
                Some(t) => {
                    if socket.send(Message::Text(t.to_string())).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(t))) => handle_frame(&shared, sid, hs.role, &t),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }

    unregister(&shared, sid);
    log::info!(target: "orc::remote", "session {sid} closed");
}

fn unregister(shared: &Shared, sid: u64) {
    let mut hub = shared.hub.lock().unwrap();
    hub.sessions.remove(&sid);
    hub.pending.retain(|_, (s, _)| *s != sid);
    if hub.controller == Some(sid) {
        hub.controller = None;
    }
}

/// Adds the session to the hub and queues its handshake answer. `None` if a
/// controller is asked for while another one is connected.
fn register(shared: &Shared, hs: &Handshake, tx: mpsc::Sender<Arc<str>>) -> Option<u64> {
    let mut hub = shared.hub.lock().unwrap();
    if hs.role == Role::Controller && hub.controller.is_some() {
        return None;
    }
    let sid = hub.next_id;
    hub.next_id += 1;
    hub.sessions.insert(sid, Sink { tx, streaming: false });
    if hs.role == Role::Controller {
        hub.controller = Some(sid);
    }
    match hs.resume_from {
        Some(k) if hub.can_resume(k) => {
            hub.send(sid, text(&Ack::ok(0)));
            hub.attach(sid, Some(k));
        }
        Some(_) => {
            hub.send(sid, text(&Ack::err(0, "BACKLOG_EXPIRED", "resume point is no longer buffered")));
            shared.snapshot(&mut hub, sid);
            hub.attach(sid, None);
        }
        None => {
            hub.send(sid, text(&Ack::ok(0)));
            shared.snapshot(&mut hub, sid);
        }
    }
    Some(sid)
}

async fn read_handshake(socket: &mut WebSocket) -> Option<Handshake> {
    let first = tokio::time::timeout(Duration::from_secs(30), socket.recv()).await.ok()??.ok()?;
    let Message::Text(t) = first else { return None };
    match ClientFrame::decode(&t) {
        Ok(ClientFrame::Handshake(h)) => Some(h),
        Ok(ClientFrame::Command(_)) => {
            let ack = Ack::err(0, "MALFORMED_FRAME", "the first frame must be a handshake");
            let _ = socket.send(Message::Text(text(&ack).to_string())).await;
            None
        }
        Err(e) => {
            let _ = socket.send(Message::Text(text(&Ack::err(0, e.code(), e.0)).to_string())).await;
            None
        }
    }
}

fn parse_path(v: Option<&Json>) -> Result<StatePath, String> {
    match v {
        Some(Json::String(s)) => s.parse().map_err(|e| format!("{e}")),
        Some(Json::Array(items)) => {
            let ids: Option<Vec<_>> = items.iter().map(|i| i.as_str().map(crate::model::StateId::from)).collect();
            ids.filter(|v| !v.is_empty()).map(StatePath::new).ok_or_else(|| "path must be a list of ids".into())
        }
        _ => Err("missing `path`".into()),
    }
}

fn engine_command(cmd: &CommandMessage) -> Result<Command, String> {
    let paused = cmd.args.get("paused").and_then(Json::as_bool).unwrap_or(false);
    Ok(match cmd.verb {
        Verb::Start => Command::Start { from: None, paused },
        Verb::RunFrom => Command::Start { from: Some(parse_path(cmd.args.get("path"))?), paused },
        Verb::Pause => Command::Pause,
        Verb::Resume => Command::Resume,
        Verb::Stop => Command::Stop,
        Verb::StepOver => Command::Step(StepCommand::Over),
        Verb::StepInto => Command::Step(StepCommand::Into),
        Verb::StepOut => Command::Step(StepCommand::Out),
        Verb::StepBack => Command::Step(StepCommand::Back),
        _ => unreachable!("not an engine command"),
    })
}

fn handle_frame(shared: &Shared, sid: u64, role: Role, raw: &str) {
    let reply = |ack: Ack| shared.hub.lock().unwrap().send(sid, text(&ack));
    let cmd = match ClientFrame::decode(raw) {
        Ok(ClientFrame::Command(c)) => c,
        Ok(ClientFrame::Handshake(_)) => return reply(Ack::err(0, "MALFORMED_FRAME", "handshake already done")),
        Err(e) => return reply(Ack::err(ClientFrame::salvage_req_id(raw), e.code(), e.0)),
    };
    let id = cmd.req_id;
    if cmd.verb.is_mutating() && role != Role::Controller {
        return reply(Ack::err(id, "NOT_CONTROLLER", "observers cannot change the engine"));
    }
    let engine = &shared.engine;
    match cmd.verb {
        Verb::Subscribe => {
            let from = cmd.args.get("from_seq").and_then(Json::as_u64);
            let mut hub = shared.hub.lock().unwrap();
            match from {
                Some(k) if !hub.can_resume(k) => {
                    hub.send(sid, text(&Ack::err(id, "BACKLOG_EXPIRED", "resume point is no longer buffered")));
                    shared.snapshot(&mut hub, sid);
                    hub.attach(sid, None);
                }
                _ => {
                    hub.send(sid, text(&Ack::ok(id)));
                    hub.attach(sid, from);
                }
            }
        }
        Verb::FetchMachine => {
            let m = engine.machine();
            let result = json!({ "digest": machine_digest(&m), "machine": serde_json::to_value(&*m).expect("machine serializes") });
            reply(Ack::ok(id).with_result(result));
        }
        Verb::FetchHistory => {
            let since = cmd.args.get("since").and_then(Json::as_u64).unwrap_or(0);
            let entries: Vec<_> = engine.history().into_iter().filter(|h| h.seq > since).collect();
            reply(Ack::ok(id).with_result(json!({ "entries": entries })));
        }
        Verb::SetGlobal => {
            let name = cmd.args.get("name").and_then(Json::as_str);
            let value = cmd.args.get("value").map(Value::from_json);
            match (name, value) {
                (Some(n), Some(Ok(v))) => {
                    engine.set_global(n, v);
                    reply(Ack::ok(id));
                }
                (_, Some(Err(e))) => reply(Ack::err(id, "BAD_ARGS", e)),
                _ => reply(Ack::err(id, "BAD_ARGS", "set_global needs `name` and `value`")),
            }
        }
        _ => match engine_command(&cmd) {
            Ok(c) => {
                let token = {
                    let mut hub = shared.hub.lock().unwrap();
                    let token = hub.next_id;
                    hub.next_id += 1;
                    hub.pending.insert(token, (sid, id));
                    token
                };
                engine.submit(c, token);
            }
            Err(e) => reply(Ack::err(id, "BAD_ARGS", e)),
        },
    }
}
