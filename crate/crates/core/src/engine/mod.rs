//! Running state machines: the engine, its history, stepping and live edits.

mod globals;
mod history;
mod host;
mod runtime;
mod step;

use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use serde::Serialize;

pub use globals::GlobalStore;
pub use history::{Context, Event, EventBody, HistoryEntry, HistoryEvent, Notice};
pub use host::{ServiceHandler, ServiceRegistry};
pub use step::{stops_at, Checkpoint, StepCommand};

use crate::model::{Edit, EditError, StateMachineDef, StatePath};
use crate::script::DEFAULT_STEP_BUDGET;
use crate::value::Value;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum Status {
    Idle,
    Running,
    Paused,
    Stopping,
    Finished(String),
    Aborted(String),
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Idle => "idle",
            Status::Running => "running",
            Status::Paused => "paused",
            Status::Stopping => "stopping",
            Status::Finished(_) => "finished",
            Status::Aborted(_) => "aborted",
        }
    }

    /// Neither running nor about to stop on its own.
    pub fn is_settled(&self) -> bool {
        !matches!(self, Status::Running | Status::Stopping)
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Status::Finished(_) | Status::Aborted(_))
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Status::Finished(d) | Status::Aborted(d) => write!(f, "{} ({d})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    /// Statements one script invocation may execute.
    pub step_budget: u64,
    pub call_timeout: Duration,
    pub rng_seed: u64,
    /// How long preempted states get to stop before they are abandoned.
    pub preempt_grace: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            step_budget: DEFAULT_STEP_BUDGET,
            call_timeout: Duration::from_secs(30),
            rng_seed: 0,
            preempt_grace: Duration::from_secs(10),
        }
    }
}

impl EngineConfig {
    /// Defaults, with `step_budget` taken from the machine's metadata when present.
    pub fn for_machine(machine: &StateMachineDef) -> Self {
        let mut c = EngineConfig::default();
        if let Some(b) = machine.metadata.get("step_budget").and_then(|s| s.parse().ok()) {
            c.step_budget = b;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("{0}")]
    BadStatus(String),
    #[error("invalid state machine: {}", .0.join("; "))]
    InvalidStateMachine(Vec<String>),
    #[error("no state at `{0}`")]
    BadPath(String),
    #[error("the run is over; nothing to step")]
    NothingToStep,
    #[error("no completed step to undo")]
    NothingToStepBack,
    #[error("backward script failed: {0}")]
    BackwardScriptError(String),
    #[error("edit touches an active state: {0}")]
    EditConflict(String),
    #[error("machine would be invalid: {}", .0.join("; "))]
    InvalidAfterEdit(Vec<String>),
    #[error("{0}")]
    EditRejected(EditError),
    #[error("undefined global `{0}`")]
    UndefinedGlobal(String),
    #[error("{0}")]
    StructuralFault(String),
    #[error("engine is gone")]
    Disconnected,
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::BadStatus(_) => "BAD_STATUS",
            EngineError::InvalidStateMachine(_) => "INVALID_STATE_MACHINE",
            EngineError::BadPath(_) => "BAD_PATH",
            EngineError::NothingToStep => "NOTHING_TO_STEP",
            EngineError::NothingToStepBack => "NOTHING_TO_STEP_BACK",
            EngineError::BackwardScriptError(_) => "BACKWARD_SCRIPT_ERROR",
            EngineError::EditConflict(_) => "EDIT_CONFLICT",
            EngineError::InvalidAfterEdit(_) => "INVALID_AFTER_EDIT",
            EngineError::EditRejected(e) => e.code(),
            EngineError::UndefinedGlobal(_) => "UNDEFINED_GLOBAL",
            EngineError::StructuralFault(_) => "STRUCTURAL_FAULT",
            EngineError::Disconnected => "DISCONNECTED",
        }
    }
}

/// A control request. Lifecycle commands are accepted only in the statuses that allow
/// them and fail with `BAD_STATUS` otherwise.
#[derive(Clone, Debug)]
pub enum Command {
    Start { from: Option<StatePath>, paused: bool },
    Pause,
    Resume,
    Stop,
    Step(StepCommand),
    Amend(Vec<Edit>),
    Shutdown,
}

pub(crate) enum ReplyTo {
    Channel(Sender<Result<(), EngineError>>),
    /// Delivered to subscribers in order with the events the command causes.
    Bus(u64),
    Nobody,
}

pub(crate) struct Envelope {
    pub cmd: Command,
    pub reply: ReplyTo,
}

pub(crate) struct View {
    pub status: Status,
    pub position: Option<Checkpoint>,
    pub active_paths: Vec<StatePath>,
    pub machine: Arc<StateMachineDef>,
}

pub(crate) struct Shared {
    pub bus: Arc<history::Bus>,
    pub globals: Arc<GlobalStore>,
    pub services: ServiceRegistry,
    pub view: Mutex<View>,
    pub changed: Condvar,
}

/// Handle to a running engine. Commands are executed in order by a dedicated control
/// thread; every method here is safe to call from any thread.
pub struct Engine {
    tx: Sender<Envelope>,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl Engine {
    pub fn new(machine: StateMachineDef, config: EngineConfig) -> Engine {
        let shared = Arc::new(Shared {
            bus: Arc::new(history::Bus::default()),
            globals: Arc::new(GlobalStore::new()),
            services: ServiceRegistry::default(),
            view: Mutex::new(View {
                status: Status::Idle,
                position: None,
                active_paths: Vec::new(),
                machine: Arc::new(machine.clone()),
            }),
            changed: Condvar::new(),
        });
        let (tx, rx) = crossbeam_channel::unbounded();
        let rt = runtime::Runtime::new(shared.clone(), machine, config, rx);
        let thread = std::thread::Builder::new()
            .name("orc-engine".into())
            .spawn(move || rt.run())
            .expect("spawn engine thread");
        Engine { tx, shared, thread: Some(thread) }
    }

    /// Sends `cmd` and waits for the engine to accept or reject it.
    pub fn command(&self, cmd: Command) -> Result<(), EngineError> {
        let (tx, rx) = crossbeam_channel::bounded(1);
        self.tx.send(Envelope { cmd, reply: ReplyTo::Channel(tx) }).map_err(|_| EngineError::Disconnected)?;
        rx.recv().map_err(|_| EngineError::Disconnected)?
    }

    /// Sends `cmd` without waiting; the reply arrives to subscribers as
    /// [`Notice::Reply`] with `token`, ahead of any event the command causes.
    pub fn submit(&self, cmd: Command, token: u64) {
        let _ = self.tx.send(Envelope { cmd, reply: ReplyTo::Bus(token) });
    }

    pub fn start(&self) -> Result<(), EngineError> {
        self.command(Command::Start { from: None, paused: false })
    }

    /// Runs only the subtree at `path`, entering its ancestors without their siblings.
    pub fn start_from(&self, path: StatePath) -> Result<(), EngineError> {
        self.command(Command::Start { from: Some(path), paused: false })
    }

    /// Starts paused just before the root is entered.
    pub fn start_paused(&self) -> Result<(), EngineError> {
        self.command(Command::Start { from: None, paused: true })
    }

    pub fn pause(&self) -> Result<(), EngineError> {
        self.command(Command::Pause)
    }

    pub fn resume(&self) -> Result<(), EngineError> {
        self.command(Command::Resume)
    }

    pub fn stop(&self) -> Result<(), EngineError> {
        self.command(Command::Stop)
    }

    pub fn step(&self, cmd: StepCommand) -> Result<(), EngineError> {
        self.command(Command::Step(cmd))
    }

    pub fn step_back(&self) -> Result<(), EngineError> {
        self.command(Command::Step(StepCommand::Back))
    }

    /// Applies edits while paused. All of them apply or none does.
    pub fn amend(&self, edits: Vec<Edit>) -> Result<(), EngineError> {
        self.command(Command::Amend(edits))
    }

    pub fn status(&self) -> Status {
        self.shared.view.lock().unwrap().status.clone()
    }

    /// The checkpoint execution last passed or is paused at.
    pub fn position(&self) -> Option<Checkpoint> {
        self.shared.view.lock().unwrap().position.clone()
    }

    /// Deepest states currently entered.
    pub fn active_paths(&self) -> Vec<StatePath> {
        self.shared.view.lock().unwrap().active_paths.clone()
    }

    /// The machine as currently amended.
    pub fn machine(&self) -> Arc<StateMachineDef> {
        self.shared.view.lock().unwrap().machine.clone()
    }

    pub fn history(&self) -> Vec<HistoryEntry> {
        self.shared.bus.entries()
    }

    pub fn last_seq(&self) -> u64 {
        self.shared.bus.last_seq()
    }

    pub fn subscribe(&self) -> Receiver<Notice> {
        self.shared.bus.subscribe()
    }

    pub fn globals(&self) -> &GlobalStore {
        &self.shared.globals
    }

    pub fn get_global(&self, name: &str) -> Result<Value, EngineError> {
        self.shared.globals.get(name).ok_or_else(|| EngineError::UndefinedGlobal(name.to_string()))
    }

    pub fn set_global(&self, name: &str, value: Value) {
        self.shared.globals.set(name, value);
    }

    pub fn register_service(&self, name: impl Into<String>, handler: ServiceHandler) {
        self.shared.services.register(name, handler);
    }

    /// Blocks until the engine is neither running nor stopping, or `timeout` passes.
    pub fn wait_settled(&self, timeout: Duration) -> Status {
        self.wait_for(timeout, Status::is_settled)
    }

    pub fn wait_for(&self, timeout: Duration, cond: impl Fn(&Status) -> bool) -> Status {
        let deadline = Instant::now() + timeout;
        let mut v = self.shared.view.lock().unwrap();
        while !cond(&v.status) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            v = self.shared.changed.wait_timeout(v, deadline - now).unwrap().0;
        }
        v.status.clone()
    }

    /// Starts and waits for the run to settle.
    pub fn run(&self, timeout: Duration) -> Result<Status, EngineError> {
        self.start()?;
        Ok(self.wait_settled(timeout))
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        let _ = self.tx.send(Envelope { cmd: Command::Shutdown, reply: ReplyTo::Nobody });
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
