//! The control thread.
//!
//! Execution advances in logical instants. Within an instant the engine performs
//! structural actions (enter, exit, follow a transition) until none is left, then lets
//! the scripts launched so far run until each one finishes or reaches its first blocking
//! call. Completions of that batch start the next instant. Only when a batch completes
//! nothing are blocked scripts released into real time. This makes the order of events,
//! and in particular which child of a preemptive concurrency finishes first, independent
//! of thread scheduling for every script that does not block.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use crossbeam_channel::{Receiver, Sender};

use super::history::{Bus, Context, HistoryEvent};
use super::host::{EngineHost, GlobalWrites, ScriptCtl, Signal, WorkerMsg};
use super::step::{stops_at, Checkpoint, StepCommand};
use super::{Command, EngineConfig, EngineError, Envelope, ReplyTo, Shared, Status};
use crate::model::{
    validate, Edit, EditLog, StateDef, StateId, StateKind, StateMachineDef, StatePath, TransitionTarget, ABORTED,
    PREEMPTED,
};
use crate::script::{evaluate, EvalError, Script, ScriptContext, ScriptFailure, ScriptResult};
use crate::value::ValueMap;

type PMap<K, V> = im::HashMap<K, V>;

/// Port values produced so far in this run, keyed by state id.
#[derive(Clone, Default)]
struct DataStore {
    inputs: PMap<StateId, ValueMap>,
    outputs: PMap<StateId, ValueMap>,
}

struct Finished {
    ticket: u64,
    result: Result<ScriptResult, ScriptFailure>,
    writes: GlobalWrites,
}

#[derive(Clone)]
enum Node {
    Pending,
    Running(u64),
    Done(Arc<Finished>),
    Hier(Box<Act>),
    Conc { children: Vec<Act>, first: Option<usize> },
    Rested(String),
}

/// One activation of a state.
#[derive(Clone)]
struct Act {
    id: StateId,
    kind: StateKind,
    node: Node,
    /// Preemption has reached this activation; it will rest with `preempted`.
    flagged: bool,
    /// Set where a preemption started; past it the flagged subtree is abandoned.
    deadline: Option<Instant>,
}

impl Act {
    fn pending(def: &StateDef) -> Act {
        Act { id: def.id.clone(), kind: def.kind, node: Node::Pending, flagged: false, deadline: None }
    }

    fn rested(&self) -> Option<&str> {
        match &self.node {
            Node::Rested(o) => Some(o),
            _ => None,
        }
    }
}

fn act_mut<'a>(root: &'a mut Act, path: &StatePath) -> Option<&'a mut Act> {
    let (first, rest) = path.segments().split_first()?;
    if first != &root.id {
        return None;
    }
    let mut cur = root;
    for seg in rest {
        cur = match &mut cur.node {
            Node::Hier(c) if &c.id == seg => c.as_mut(),
            Node::Conc { children, .. } => children.iter_mut().find(|c| &c.id == seg)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn children(act: &Act) -> &[Act] {
    match &act.node {
        Node::Hier(c) => std::slice::from_ref(c.as_ref()),
        Node::Conc { children, .. } => children,
        _ => &[],
    }
}

enum Action {
    Enter(StatePath),
    FinishExec(StatePath),
    Follow(StatePath),
    Preempt(StatePath, usize),
    ConcExit(StatePath),
    Timeout(StatePath),
}

/// First available action in pre-order. A concurrency state is examined before its
/// children so that a finished child preempts its siblings before they move on.
fn find(act: &Act, trail: &mut Vec<StateId>, now: Instant) -> Option<Action> {
    if act.rested().is_some() {
        return None;
    }
    trail.push(act.id.clone());
    let here = |trail: &Vec<StateId>| StatePath::new(trail.clone());
    let found = if act.deadline.is_some_and(|d| now >= d) {
        Some(Action::Timeout(here(trail)))
    } else {
        match &act.node {
            Node::Pending => Some(Action::Enter(here(trail))),
            Node::Running(_) | Node::Rested(_) => None,
            Node::Done(_) => Some(Action::FinishExec(here(trail))),
            Node::Hier(c) if c.rested().is_some() => Some(Action::Follow(here(trail))),
            Node::Hier(c) => find(c, trail, now),
            Node::Conc { children, first } => {
                let winner = children.iter().position(|c| c.rested().is_some());
                match winner {
                    Some(i) if !act.flagged && act.kind == StateKind::PreemptiveConcurrency && first.is_none() => {
                        Some(Action::Preempt(here(trail), i))
                    }
                    _ if children.iter().all(|c| c.rested().is_some()) => Some(Action::ConcExit(here(trail))),
                    _ => children.iter().find_map(|c| find(c, trail, now)),
                }
            }
        }
    };
    trail.pop();
    found
}

#[derive(Default)]
struct Flagged {
    events: Vec<StatePath>,
    tickets: Vec<u64>,
}

/// Marks every activation below `act` as preempted. Entered states report `Preempted`
/// in pre-order; states not yet entered come to rest silently.
fn flag_subtree(act: &mut Act, trail: &mut Vec<StateId>, out: &mut Flagged) {
    match act.node {
        Node::Rested(_) => return,
        Node::Pending => {
            act.node = Node::Rested(PREEMPTED.into());
            return;
        }
        _ => {}
    }
    trail.push(act.id.clone());
    if !act.flagged {
        act.flagged = true;
        out.events.push(StatePath::new(trail.clone()));
    }
    match &mut act.node {
        Node::Running(t) => out.tickets.push(*t),
        Node::Hier(c) => flag_subtree(c, trail, out),
        Node::Conc { children, .. } => {
            for c in children {
                flag_subtree(c, trail, out);
            }
        }
        _ => {}
    }
    trail.pop();
}

fn running_tickets(act: &Act, out: &mut Vec<u64>) {
    if let Node::Running(t) = act.node {
        out.push(t);
    }
    for c in children(act) {
        running_tickets(c, out);
    }
}

fn leaf_paths(act: &Act, trail: &mut Vec<StateId>, out: &mut Vec<StatePath>) {
    if act.rested().is_some() {
        return;
    }
    trail.push(act.id.clone());
    let kids = children(act);
    if kids.iter().all(|c| c.rested().is_some()) {
        out.push(StatePath::new(trail.clone()));
    } else {
        for c in kids {
            leaf_paths(c, trail, out);
        }
    }
    trail.pop();
}

fn next_deadline(act: &Act) -> Option<Instant> {
    if act.rested().is_some() {
        return None;
    }
    children(act).iter().filter_map(next_deadline).chain(act.deadline).min()
}

#[derive(PartialEq, Eq, Clone, Copy, Debug)]
enum Phase {
    Queued,
    /// Spawned; neither finished nor at its first blocking call yet.
    Running,
    Gated,
    Released,
}

struct Job {
    script: Script,
    inputs: ValueMap,
    outputs: ValueMap,
    types: BTreeMap<String, crate::value::DataType>,
    seed: u64,
}

struct Inflight {
    path: StatePath,
    ctl: Arc<ScriptCtl>,
    phase: Phase,
    job: Option<Job>,
    /// Its activation is gone; the result will be discarded.
    orphan: bool,
}

#[derive(Clone)]
struct Snapshot {
    tree: Act,
    store: DataStore,
    counts: PMap<StatePath, u64>,
    position: Checkpoint,
}

/// One forward run of an execution state, kept for step-back.
struct RunRecord {
    ticket: u64,
    path: StatePath,
    inputs: ValueMap,
    writes: GlobalWrites,
    exited: bool,
    /// Present when the run started with no other script in flight.
    snapshot: Option<Box<Snapshot>>,
}

enum Mode {
    Continuous,
    Stepping { cmd: StepCommand, from: Checkpoint },
}

#[derive(PartialEq, Eq)]
enum Flow {
    Progress,
    Quiet,
    Shutdown,
}

enum Got {
    Worker(WorkerMsg),
    Cmd(Envelope),
    Timeout,
    Disconnected,
}

fn fault(msg: impl Into<String>) -> EngineError {
    EngineError::StructuralFault(msg.into())
}

/// Stable per-invocation seed.
fn mix_seed(base: u64, path: &StatePath, count: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    base.to_le_bytes().into_iter().for_each(&mut eat);
    path.to_string().bytes().for_each(&mut eat);
    count.to_le_bytes().into_iter().for_each(&mut eat);
    h
}

pub(crate) struct Runtime {
    shared: Arc<Shared>,
    config: EngineConfig,
    machine: Arc<StateMachineDef>,
    edit_log: EditLog,
    tree: Option<Act>,
    store: DataStore,
    counts: PMap<StatePath, u64>,
    inflight: BTreeMap<u64, Inflight>,
    next_ticket: u64,
    runs: Vec<RunRecord>,
    signal: Arc<Signal>,
    worker_tx: Sender<WorkerMsg>,
    worker_rx: Receiver<WorkerMsg>,
    cmd_rx: Receiver<Envelope>,
    status: Status,
    mode: Mode,
    pause_requested: bool,
    position: Option<Checkpoint>,
    skip: Option<Checkpoint>,
    abort_reason: Option<String>,
}

impl Runtime {
    pub fn new(shared: Arc<Shared>, machine: StateMachineDef, config: EngineConfig, cmd_rx: Receiver<Envelope>) -> Self {
        let (worker_tx, worker_rx) = crossbeam_channel::unbounded();
        Runtime {
            shared,
            config,
            machine: Arc::new(machine),
            edit_log: EditLog::new(),
            tree: None,
            store: DataStore::default(),
            counts: PMap::new(),
            inflight: BTreeMap::new(),
            next_ticket: 1,
            runs: Vec::new(),
            signal: Arc::new(Signal::default()),
            worker_tx,
            worker_rx,
            cmd_rx,
            status: Status::Idle,
            mode: Mode::Continuous,
            pause_requested: false,
            position: None,
            skip: None,
            abort_reason: None,
        }
    }

    fn bus(&self) -> &Bus {
        &self.shared.bus
    }

    pub fn run(mut self) {
        loop {
            if matches!(self.status, Status::Running | Status::Stopping) {
                if self.pause_requested && self.status == Status::Running {
                    self.pause_requested = false;
                    self.mode = Mode::Continuous;
                    self.set_status(Status::Paused);
                    continue;
                }
                match self.advance() {
                    Ok(true) => continue,
                    Ok(false) => {}
                    Err(e) => {
                        self.abort(e.to_string());
                        continue;
                    }
                }
                self.spawn_queued();
                match self.collect_batch() {
                    Flow::Shutdown => break,
                    Flow::Progress => continue,
                    Flow::Quiet => {}
                }
                self.release_gated();
                if self.wait_real_time() == Flow::Shutdown {
                    break;
                }
            } else {
                match self.cmd_rx.recv() {
                    Ok(env) => {
                        if self.handle(env) == Flow::Shutdown {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        }
        self.orphan_all();
    }

    fn set_status(&mut self, status: Status) {
        self.status = status.clone();
        self.bus().status(status);
        self.publish_view();
    }

    fn publish_view(&self) {
        let mut active = Vec::new();
        if let Some(t) = &self.tree {
            leaf_paths(t, &mut Vec::new(), &mut active);
        }
        let mut v = self.shared.view.lock().unwrap();
        v.status = self.status.clone();
        v.position = self.position.clone();
        v.active_paths = active;
        v.machine = self.machine.clone();
        drop(v);
        self.shared.changed.notify_all();
    }

    // ---- commands ----

    fn handle(&mut self, env: Envelope) -> Flow {
        let mut flow = Flow::Progress;
        if matches!(env.reply, ReplyTo::Bus(_)) {
            self.bus().hold();
        }
        let result = match env.cmd {
            Command::Start { from, paused } => self.start(from, paused),
            Command::Pause => match self.status {
                Status::Running => {
                    self.pause_requested = true;
                    Ok(())
                }
                _ => Err(self.bad_status("pause")),
            },
            Command::Resume => match self.status {
                Status::Paused => {
                    self.mode = Mode::Continuous;
                    self.leave_position();
                    self.set_status(Status::Running);
                    Ok(())
                }
                _ => Err(self.bad_status("resume")),
            },
            Command::Stop => match self.status {
                Status::Running | Status::Paused => {
                    self.stop();
                    Ok(())
                }
                _ => Err(self.bad_status("stop")),
            },
            Command::Step(StepCommand::Back) => self.step_back(),
            Command::Step(cmd) => match self.status {
                Status::Paused => {
                    let from = self.position.clone().unwrap_or_else(|| {
                        Checkpoint::BeforeEnter(StatePath::root(self.machine.root.id.clone()))
                    });
                    self.mode = Mode::Stepping { cmd, from };
                    self.leave_position();
                    self.set_status(Status::Running);
                    Ok(())
                }
                Status::Finished(_) | Status::Aborted(_) => Err(EngineError::NothingToStep),
                _ => Err(self.bad_status("step")),
            },
            Command::Amend(edits) => self.amend(edits),
            Command::Shutdown => {
                flow = Flow::Shutdown;
                Ok(())
            }
        };
        match env.reply {
            ReplyTo::Channel(tx) => {
                let _ = tx.send(result);
            }
            ReplyTo::Bus(token) => self.bus().reply(token, result),
            ReplyTo::Nobody => {}
        }
        flow
    }

    fn bad_status(&self, verb: &str) -> EngineError {
        EngineError::BadStatus(format!("cannot {verb} while {}", self.status.name()))
    }

    /// Continuing from a paused position must not stop at that same position again.
    fn leave_position(&mut self) {
        self.skip = match &self.position {
            Some(cp @ Checkpoint::BeforeEnter(p)) if self.is_pending(p) => Some(cp.clone()),
            _ => None,
        };
    }

    fn is_pending(&self, p: &StatePath) -> bool {
        let Some(mut cur) = self.tree.as_ref().filter(|t| p.segments().first() == Some(&t.id)) else { return false };
        for seg in &p.segments()[1..] {
            match children(cur).iter().find(|c| &c.id == seg) {
                Some(c) => cur = c,
                None => return false,
            }
        }
        matches!(cur.node, Node::Pending)
    }

    fn start(&mut self, from: Option<StatePath>, paused: bool) -> Result<(), EngineError> {
        if !matches!(self.status, Status::Idle | Status::Finished(_) | Status::Aborted(_)) {
            return Err(self.bad_status("start"));
        }
        let report = validate(&self.machine);
        if report.has_errors() {
            return Err(EngineError::InvalidStateMachine(report.errors().map(|f| f.to_string()).collect()));
        }
        if self.machine.states().any(|s| s.kind == StateKind::Library) {
            return Err(EngineError::InvalidStateMachine(vec!["library states must be resolved before running".into()]));
        }
        if let Some(p) = &from {
            if self.machine.resolve(p).is_none() {
                return Err(EngineError::BadPath(p.to_string()));
            }
        }
        self.orphan_all();
        self.store = DataStore::default();
        self.counts = PMap::new();
        self.runs.clear();
        self.mode = Mode::Continuous;
        self.pause_requested = false;
        self.skip = None;
        self.abort_reason = None;
        let root_path = StatePath::root(self.machine.root.id.clone());
        self.tree = Some(Act::pending(&self.machine.root));
        let target = from.unwrap_or(root_path);
        for n in 1..target.len() {
            let prefix = StatePath::new(target.segments()[..n].to_vec());
            self.enter(&prefix, Some(target.segments()[n].clone()))?;
        }
        self.position = Some(Checkpoint::BeforeEnter(target));
        self.set_status(if paused { Status::Paused } else { Status::Running });
        Ok(())
    }

    fn stop(&mut self) {
        self.pause_requested = false;
        self.mode = Mode::Continuous;
        self.set_status(Status::Stopping);
        let grace = self.config.preempt_grace;
        let Some(root) = self.tree.as_mut() else { return };
        let mut out = Flagged::default();
        flag_subtree(root, &mut Vec::new(), &mut out);
        if root.rested().is_none() {
            root.deadline = Some(Instant::now() + grace);
        }
        self.apply_flags(out);
    }

    fn amend(&mut self, edits: Vec<Edit>) -> Result<(), EngineError> {
        if self.status != Status::Paused {
            return Err(self.bad_status("amend"));
        }
        let mut live = Vec::new();
        if let Some(t) = &self.tree {
            fn collect(a: &Act, out: &mut Vec<StateId>) {
                if a.rested().is_none() {
                    out.push(a.id.clone());
                    children(a).iter().for_each(|c| collect(c, out));
                }
            }
            collect(t, &mut live);
        }
        for e in &edits {
            if let Some(id) = e.touched_states().into_iter().find(|id| live.contains(id)) {
                return Err(EngineError::EditConflict(format!("`{id}` is active")));
            }
        }
        let mut machine = (*self.machine).clone();
        let mut log = self.edit_log.clone();
        for e in edits {
            log.apply(&mut machine, e).map_err(EngineError::EditRejected)?;
        }
        let report = validate(&machine);
        if report.has_errors() {
            return Err(EngineError::InvalidAfterEdit(report.errors().map(|f| f.to_string()).collect()));
        }
        self.machine = Arc::new(machine);
        self.edit_log = log;
        // Rewinding across a structural change is not meaningful.
        self.runs.iter_mut().for_each(|r| r.snapshot = None);
        self.publish_view();
        Ok(())
    }

    fn step_back(&mut self) -> Result<(), EngineError> {
        if self.status != Status::Paused {
            return Err(self.bad_status("step back"));
        }
        let idx = self
            .runs
            .iter()
            .rposition(|r| r.exited && r.snapshot.is_some())
            .ok_or(EngineError::NothingToStepBack)?;
        self.orphan_all();
        let undone = self.runs.split_off(idx);
        let mut failure = None;
        for r in undone.iter().rev() {
            if r.exited {
                if let Err(detail) = self.run_backward(r) {
                    failure.get_or_insert(detail);
                }
            }
            for (name, (before, _)) in &r.writes {
                match before {
                    Some(v) => {
                        self.shared.globals.set(name, v.clone());
                    }
                    None => {
                        self.shared.globals.remove(name);
                    }
                }
            }
        }
        let first = undone.into_iter().next().expect("split at a valid index");
        let snap = *first.snapshot.expect("chosen for its snapshot");
        self.tree = Some(snap.tree);
        self.store = snap.store;
        self.counts = snap.counts;
        self.position = Some(snap.position);
        self.skip = None;
        self.bus().history(first.path.clone(), HistoryEvent::SteppedBack, Context {
            inputs: first.inputs.clone(),
            ..Context::default()
        });
        self.publish_view();
        match failure {
            None => Ok(()),
            Some(detail) => {
                self.bus().history(first.path, HistoryEvent::ScriptError { detail: format!("BACKWARD_SCRIPT_ERROR: {detail}") }, Context::default());
                Err(EngineError::BackwardScriptError(detail))
            }
        }
    }

    fn run_backward(&self, r: &RunRecord) -> Result<(), String> {
        let Some(def) = self.machine.resolve(&r.path) else { return Ok(()) };
        let Some(Ok(program)) = def.script.as_ref().and_then(|s| s.backward_program()) else { return Ok(()) };
        let ctl = Arc::new(ScriptCtl::default());
        ctl.release();
        let host = self.host(0, r.path.clone(), ctl, None);
        let ctx = ScriptContext {
            inputs: &r.inputs,
            outputs: def.output_ports.iter().map(|p| (p.name.clone(), p.default.clone())).collect(),
            output_types: def.output_ports.iter().map(|p| (p.name.clone(), p.dtype)).collect(),
            host: &host,
            step_budget: self.config.step_budget,
            rng_seed: mix_seed(self.config.rng_seed, &r.path, 0),
        };
        match evaluate(program, ctx) {
            Ok(_) => Ok(()),
            Err(f) if f.error == EvalError::NoOutcome => Ok(()),
            Err(f) => Err(format!("{}: {}", r.path, f.error)),
        }
    }

    // ---- structural actions ----

    /// Performs one action. `Ok(false)` means nothing is left to do in this instant.
    fn advance(&mut self) -> Result<bool, EngineError> {
        let Some(tree) = &self.tree else { return Ok(false) };
        if let Some(outcome) = tree.rested() {
            let outcome = outcome.to_string();
            self.finish(outcome);
            return Ok(true);
        }
        let Some(action) = find(tree, &mut Vec::new(), Instant::now()) else { return Ok(false) };
        if let Action::Enter(p) = &action {
            if self.checkpoint(Checkpoint::BeforeEnter(p.clone())) {
                return Ok(true);
            }
        }
        let after = match action {
            Action::Enter(p) => {
                self.enter(&p, None)?;
                None
            }
            Action::FinishExec(p) => Some(self.finish_exec(&p)?),
            Action::Follow(p) => self.follow(&p)?,
            Action::Preempt(p, i) => {
                self.preempt_siblings(&p, i)?;
                None
            }
            Action::ConcExit(p) => Some(self.conc_exit(&p)?),
            Action::Timeout(p) => Some(self.timeout(&p)?),
        };
        if let Some(cp) = after {
            self.checkpoint(cp);
        }
        Ok(true)
    }

    /// Records the position and reports whether stepping stops here.
    fn checkpoint(&mut self, cp: Checkpoint) -> bool {
        let skip = self.skip.take();
        self.position = Some(cp.clone());
        if skip.as_ref() == Some(&cp) || self.status != Status::Running {
            return false;
        }
        let stop = match &self.mode {
            Mode::Continuous => false,
            Mode::Stepping { cmd, from } => stops_at(*cmd, from, &cp),
        };
        if stop {
            self.mode = Mode::Continuous;
            self.set_status(Status::Paused);
        }
        stop
    }

    fn act(&mut self, path: &StatePath) -> Result<&mut Act, EngineError> {
        self.tree.as_mut().and_then(|t| act_mut(t, path)).ok_or_else(|| fault(format!("no activation at {path}")))
    }

    fn def<'m>(machine: &'m StateMachineDef, path: &StatePath) -> Result<&'m StateDef, EngineError> {
        machine.resolve(path).ok_or_else(|| fault(format!("no state at {path}")))
    }

    fn resolve_inputs(&self, def: &StateDef, parent: Option<&StateDef>) -> ValueMap {
        def.input_ports
            .iter()
            .map(|port| {
                let flow = parent.and_then(|p| {
                    p.data_flows.iter().find(|f| f.to.state() == &def.id && f.to.port() == port.name)
                });
                let value = flow.and_then(|f| {
                    let p = parent.expect("flow implies parent");
                    let source = if f.from.state() == &p.id { &self.store.inputs } else { &self.store.outputs };
                    source.get(f.from.state()).and_then(|m| m.get(f.from.port())).cloned()
                });
                (port.name.clone(), value.unwrap_or_else(|| port.default.clone()))
            })
            .collect()
    }

    fn enter(&mut self, path: &StatePath, only: Option<StateId>) -> Result<(), EngineError> {
        let machine = self.machine.clone();
        let def = Self::def(&machine, path)?;
        let parent = path.parent().and_then(|p| machine.resolve(&p));
        let snapshot = (def.kind == StateKind::Execution && self.inflight.is_empty()).then(|| {
            Box::new(Snapshot {
                tree: self.tree.clone().expect("entering needs a tree"),
                store: self.store.clone(),
                counts: self.counts.clone(),
                position: Checkpoint::BeforeEnter(path.clone()),
            })
        });
        let inputs = self.resolve_inputs(def, parent);
        self.store.inputs.insert(def.id.clone(), inputs.clone());
        self.bus().history(path.clone(), HistoryEvent::Entered, Context { inputs: inputs.clone(), ..Context::default() });
        if !def.input_ports.is_empty() {
            self.bus().ports(path.clone(), Some(inputs.clone()), None);
        }
        let defaults: ValueMap = def.output_ports.iter().map(|p| (p.name.clone(), p.default.clone())).collect();
        let node = match def.kind {
            StateKind::Execution => {
                let ticket = self.launch(path, def, inputs.clone())?;
                self.runs.push(RunRecord {
                    ticket,
                    path: path.clone(),
                    inputs,
                    writes: GlobalWrites::new(),
                    exited: false,
                    snapshot,
                });
                Node::Running(ticket)
            }
            StateKind::Hierarchy => {
                self.store.outputs.insert(def.id.clone(), defaults);
                let start = only.or_else(|| def.start_child.clone()).ok_or_else(|| fault("hierarchy without start"))?;
                let child = def.child(start.as_str()).ok_or_else(|| fault(format!("no child `{start}`")))?;
                Node::Hier(Box::new(Act::pending(child)))
            }
            StateKind::PreemptiveConcurrency | StateKind::BarrierConcurrency => {
                self.store.outputs.insert(def.id.clone(), defaults);
                let children: Vec<Act> = def
                    .children
                    .iter()
                    .filter(|c| only.as_ref().map_or(true, |o| o == &c.id))
                    .map(Act::pending)
                    .collect();
                if children.is_empty() {
                    return Err(fault(format!("{path} has no children to run")));
                }
                Node::Conc { children, first: None }
            }
            StateKind::Library => return Err(fault(format!("{path} is an unresolved library state"))),
        };
        self.act(path)?.node = node;
        Ok(())
    }

    fn launch(&mut self, path: &StatePath, def: &StateDef, inputs: ValueMap) -> Result<u64, EngineError> {
        let script = def.script.clone().ok_or_else(|| fault(format!("{path} has no script")))?;
        if let Err(e) = script.forward_program() {
            return Err(fault(format!("{path}: {e}")));
        }
        let count = self.counts.get(path).copied().unwrap_or(0) + 1;
        self.counts.insert(path.clone(), count);
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        let job = Job {
            script,
            inputs,
            outputs: def.output_ports.iter().map(|p| (p.name.clone(), p.default.clone())).collect(),
            types: def.output_ports.iter().map(|p| (p.name.clone(), p.dtype)).collect(),
            seed: mix_seed(self.config.rng_seed, path, count),
        };
        self.inflight.insert(ticket, Inflight {
            path: path.clone(),
            ctl: Arc::new(ScriptCtl::default()),
            phase: Phase::Queued,
            job: Some(job),
            orphan: false,
        });
        Ok(ticket)
    }

    fn host(&self, ticket: u64, path: StatePath, ctl: Arc<ScriptCtl>, tx: Option<Sender<WorkerMsg>>) -> EngineHost {
        EngineHost {
            ticket,
            path,
            ctl,
            signal: self.signal.clone(),
            worker_tx: tx,
            globals: self.shared.globals.clone(),
            bus: self.shared.bus.clone(),
            services: self.shared.services.clone(),
            call_timeout: self.config.call_timeout,
            writes: Default::default(),
        }
    }

    /// Scripts start only once the instant's structural work is done, so the preemption
    /// flag they observe at start is fixed.
    fn spawn_queued(&mut self) {
        let queued: Vec<u64> =
            self.inflight.iter().filter(|(_, f)| f.phase == Phase::Queued).map(|(t, _)| *t).collect();
        for ticket in queued {
            let f = self.inflight.get_mut(&ticket).expect("listed above");
            let job = f.job.take().expect("queued scripts carry their job");
            f.phase = if f.ctl.is_preempted() { Phase::Released } else { Phase::Running };
            let (path, ctl) = (f.path.clone(), f.ctl.clone());
            let host = self.host(ticket, path, ctl, Some(self.worker_tx.clone()));
            let tx = self.worker_tx.clone();
            let budget = self.config.step_budget;
            std::thread::Builder::new()
                .name(format!("orc-script-{ticket}"))
                .stack_size(16 << 20)
                .spawn(move || {
                    let program = job.script.forward_program().expect("checked at launch");
                    let result = evaluate(program, ScriptContext {
                        inputs: &job.inputs,
                        outputs: job.outputs,
                        output_types: job.types,
                        host: &host,
                        step_budget: budget,
                        rng_seed: job.seed,
                    });
                    let writes = host.take_writes();
                    let _ = tx.send(WorkerMsg::Done { ticket, result, writes });
                })
                .expect("spawn script thread");
        }
    }

    fn finish_exec(&mut self, path: &StatePath) -> Result<Checkpoint, EngineError> {
        let machine = self.machine.clone();
        let def = Self::def(&machine, path)?;
        let act = self.act(path)?;
        let Node::Done(fin) = act.node.clone() else { return Err(fault("finishing a script that is not done")) };
        let flagged = act.flagged;
        let (outcome, outputs, error) = match &fin.result {
            Ok(r) if flagged => (PREEMPTED.to_string(), r.outputs.clone(), None),
            Err(f) if flagged => (PREEMPTED.to_string(), f.outputs.clone(), None),
            Ok(r) if def.outcome_by_name(&r.outcome_name).is_some() => (r.outcome_name.clone(), r.outputs.clone(), None),
            Ok(r) => (ABORTED.to_string(), r.outputs.clone(), Some(format!("unknown outcome `{}`", r.outcome_name))),
            Err(f) => (ABORTED.to_string(), f.outputs.clone(), Some(f.error.to_string())),
        };
        if let Some(detail) = error {
            let inputs = self.store.inputs.get(&def.id).cloned().unwrap_or_default();
            self.bus().history(path.clone(), HistoryEvent::ScriptError { detail }, Context {
                inputs,
                ..Context::default()
            });
        }
        self.store.outputs.insert(def.id.clone(), outputs);
        if let Some(r) = self.runs.iter_mut().rev().find(|r| r.ticket == fin.ticket) {
            r.exited = true;
        }
        let delta = fin.writes.iter().map(|(k, (_, after))| (k.clone(), after.clone())).collect();
        self.rest(path, outcome, delta)
    }

    fn rest(&mut self, path: &StatePath, outcome: String, globals_delta: ValueMap) -> Result<Checkpoint, EngineError> {
        let machine = self.machine.clone();
        let def = Self::def(&machine, path)?;
        let inputs = self.store.inputs.get(&def.id).cloned().unwrap_or_default();
        let outputs = self.store.outputs.get(&def.id).cloned().unwrap_or_default();
        self.bus().history(path.clone(), HistoryEvent::Exited { outcome: outcome.clone() }, Context {
            inputs,
            outputs: outputs.clone(),
            globals_delta,
        });
        if !def.output_ports.is_empty() {
            self.bus().ports(path.clone(), None, Some(outputs.clone()));
        }
        if let Some(parent) = path.parent().and_then(|p| machine.resolve(&p)) {
            let mut pout = self.store.outputs.get(&parent.id).cloned().unwrap_or_default();
            for f in &parent.data_flows {
                if f.from.state() == &def.id && f.to.state() == &parent.id {
                    if let Some(v) = outputs.get(f.from.port()) {
                        pout.insert(f.to.port().to_string(), v.clone());
                    }
                }
            }
            self.store.outputs.insert(parent.id.clone(), pout);
        }
        let mut orphans = Vec::new();
        let act = self.act(path)?;
        running_tickets(act, &mut orphans);
        act.node = Node::Rested(outcome);
        act.deadline = None;
        for t in orphans {
            if let Some(f) = self.inflight.get_mut(&t) {
                f.orphan = true;
                f.ctl.preempt();
            }
        }
        self.signal.notify();
        Ok(Checkpoint::AfterExit(path.clone()))
    }

    fn follow(&mut self, path: &StatePath) -> Result<Option<Checkpoint>, EngineError> {
        let machine = self.machine.clone();
        let def = Self::def(&machine, path)?;
        let act = self.act(path)?;
        let Node::Hier(child) = &act.node else { return Err(fault("following from a non-hierarchy")) };
        let (child_id, outcome) = (child.id.clone(), child.rested().unwrap_or_default().to_string());
        if act.flagged {
            return self.rest(path, PREEMPTED.into(), ValueMap::new()).map(Some);
        }
        let cdef = def.child(child_id.as_str()).ok_or_else(|| fault(format!("no child `{child_id}`")))?;
        let oid = cdef
            .outcome_by_name(&outcome)
            .ok_or_else(|| fault(format!("`{child_id}` has no outcome `{outcome}`")))?
            .id;
        match def.transition_from(&child_id, oid).map(|t| t.to.clone()) {
            Some(TransitionTarget::State(next)) => {
                let ndef = def.child(next.as_str()).ok_or_else(|| fault(format!("no child `{next}`")))?;
                self.act(path)?.node = Node::Hier(Box::new(Act::pending(ndef)));
                Ok(None)
            }
            Some(TransitionTarget::ParentOutcome(pid)) => {
                let name = def.outcome_by_id(pid).ok_or_else(|| fault(format!("no outcome {pid}")))?.name.clone();
                self.rest(path, name, ValueMap::new()).map(Some)
            }
            // Unconnected reserved outcomes bubble to the parent's outcome of the same name.
            None if oid.is_reserved() => self.rest(path, outcome, ValueMap::new()).map(Some),
            None => Err(fault(format!("outcome `{outcome}` of `{child_id}` has no transition"))),
        }
    }

    fn preempt_siblings(&mut self, path: &StatePath, winner: usize) -> Result<(), EngineError> {
        let grace = self.config.preempt_grace;
        let act = self.act(path)?;
        let Node::Conc { children, first } = &mut act.node else { return Err(fault("preempting a non-concurrency")) };
        *first = Some(winner);
        let mut out = Flagged::default();
        let mut trail = path.segments().to_vec();
        for (i, c) in children.iter_mut().enumerate() {
            if i != winner {
                flag_subtree(c, &mut trail, &mut out);
            }
        }
        if !out.events.is_empty() {
            act.deadline = Some(Instant::now() + grace);
        }
        self.apply_flags(out);
        Ok(())
    }

    fn apply_flags(&mut self, out: Flagged) {
        for p in out.events {
            self.bus().history(p, HistoryEvent::Preempted, Context::default());
        }
        for t in out.tickets {
            if let Some(f) = self.inflight.get_mut(&t) {
                f.ctl.preempt();
                if f.phase != Phase::Queued {
                    f.phase = Phase::Released;
                }
            }
        }
        self.signal.notify();
    }

    fn conc_exit(&mut self, path: &StatePath) -> Result<Checkpoint, EngineError> {
        let machine = self.machine.clone();
        let def = Self::def(&machine, path)?;
        let act = self.act(path)?;
        let Node::Conc { children, first } = &act.node else { return Err(fault("exiting a non-concurrency")) };
        let outcomes: Vec<&str> = children.iter().filter_map(Act::rested).collect();
        let default = || def.first_user_outcome().map(|o| o.name.clone()).unwrap_or_else(|| ABORTED.into());
        let outcome = if act.flagged {
            PREEMPTED.to_string()
        } else if act.kind == StateKind::PreemptiveConcurrency {
            let w = outcomes[first.unwrap_or(0)];
            if def.outcome_by_name(w).is_some() { w.to_string() } else { default() }
        } else if outcomes.contains(&ABORTED) {
            ABORTED.to_string()
        } else if outcomes.contains(&PREEMPTED) {
            PREEMPTED.to_string()
        } else {
            default()
        };
        self.rest(path, outcome, ValueMap::new())
    }

    fn timeout(&mut self, path: &StatePath) -> Result<Checkpoint, EngineError> {
        let detail = format!("PREEMPTION_TIMEOUT: children did not stop within {:?}", self.config.preempt_grace);
        if path.len() == 1 {
            self.abort_reason = Some(detail.clone());
        }
        self.bus().history(path.clone(), HistoryEvent::ScriptError { detail }, Context::default());
        self.rest(path, ABORTED.into(), ValueMap::new())
    }

    fn finish(&mut self, outcome: String) {
        self.orphan_all();
        self.tree = None;
        self.mode = Mode::Continuous;
        self.position = None;
        let status = if outcome == ABORTED {
            Status::Aborted(self.abort_reason.take().unwrap_or_else(|| "root exited with outcome `aborted`".into()))
        } else {
            Status::Finished(outcome)
        };
        self.set_status(status);
    }

    fn abort(&mut self, reason: String) {
        log::error!(target: "orc::engine", "{reason}");
        self.orphan_all();
        self.tree = None;
        self.mode = Mode::Continuous;
        self.position = None;
        self.set_status(Status::Aborted(reason));
    }

    fn orphan_all(&mut self) {
        self.inflight.retain(|_, f| f.phase != Phase::Queued);
        for f in self.inflight.values_mut() {
            f.orphan = true;
            f.ctl.preempt();
        }
        self.signal.notify();
    }

    // ---- waiting ----

    fn recv(&self, deadline: Option<Instant>) -> Got {
        let timer = deadline.map(crossbeam_channel::at).unwrap_or_else(crossbeam_channel::never);
        crossbeam_channel::select! {
            recv(self.worker_rx) -> m => m.map(Got::Worker).unwrap_or(Got::Disconnected),
            recv(self.cmd_rx) -> c => c.map(Got::Cmd).unwrap_or(Got::Disconnected),
            recv(timer) -> _ => Got::Timeout,
        }
    }

    fn on_worker(&mut self, msg: WorkerMsg) -> bool {
        match msg {
            WorkerMsg::Gated(t) => {
                if let Some(f) = self.inflight.get_mut(&t) {
                    if f.phase == Phase::Running {
                        f.phase = Phase::Gated;
                    }
                }
                false
            }
            WorkerMsg::Done { ticket, result, writes } => {
                let Some(f) = self.inflight.remove(&ticket) else { return false };
                if f.orphan {
                    return false;
                }
                if let Some(r) = self.runs.iter_mut().rev().find(|r| r.ticket == ticket) {
                    r.writes = writes.clone();
                }
                match self.tree.as_mut().and_then(|t| act_mut(t, &f.path)) {
                    Some(act) if matches!(act.node, Node::Running(t) if t == ticket) => {
                        act.node = Node::Done(Arc::new(Finished { ticket, result, writes }));
                        true
                    }
                    _ => false,
                }
            }
        }
    }

    fn deadline(&self) -> Option<Instant> {
        self.tree.as_ref().and_then(next_deadline)
    }

    /// Waits until every script launched in this instant has finished or blocked, and
    /// every preempted script has finished.
    fn collect_batch(&mut self) -> Flow {
        let mut progressed = false;
        loop {
            let must_wait = self.inflight.values().any(|f| {
                !f.orphan && (f.phase == Phase::Running || (f.phase == Phase::Released && f.ctl.is_preempted()))
            });
            if !must_wait {
                break;
            }
            match self.recv(self.deadline()) {
                Got::Worker(m) => progressed |= self.on_worker(m),
                Got::Cmd(env) => {
                    if self.handle(env) == Flow::Shutdown {
                        return Flow::Shutdown;
                    }
                }
                Got::Timeout => return Flow::Progress,
                Got::Disconnected => return Flow::Shutdown,
            }
        }
        if progressed { Flow::Progress } else { Flow::Quiet }
    }

    fn release_gated(&mut self) {
        for f in self.inflight.values_mut() {
            if f.phase == Phase::Gated {
                f.ctl.release();
                f.phase = Phase::Released;
            }
        }
        self.signal.notify();
    }

    fn wait_real_time(&mut self) -> Flow {
        let live = self.inflight.values().any(|f| !f.orphan);
        let deadline = self.deadline();
        if !live && deadline.is_none() && !self.pause_requested && self.status == Status::Running {
            self.abort("STRUCTURAL_FAULT: no state can make progress".into());
            return Flow::Progress;
        }
        match self.recv(deadline) {
            Got::Worker(m) => {
                self.on_worker(m);
            }
            Got::Cmd(env) => return self.handle(env),
            Got::Timeout => {}
            Got::Disconnected => return Flow::Shutdown,
        }
        Flow::Progress
    }
}

/// Paths of the states currently entered and not at rest, for tests in this module.
#[cfg(test)]
fn live_ids(act: &Act) -> std::collections::HashMap<String, bool> {
    let mut out = std::collections::HashMap::new();
    fn go(a: &Act, out: &mut std::collections::HashMap<String, bool>) {
        out.insert(a.id.to_string(), a.rested().is_some());
        children(a).iter().for_each(|c| go(c, out));
    }
    go(act, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exec(id: &str) -> Act {
        Act { id: id.into(), kind: StateKind::Execution, node: Node::Running(1), flagged: false, deadline: None }
    }

    #[test]
    fn flagging_is_preorder_and_skips_pending() {
        let mut h = Act {
            id: "H".into(),
            kind: StateKind::Hierarchy,
            node: Node::Hier(Box::new(exec("A"))),
            flagged: false,
            deadline: None,
        };
        let mut pending = Act::pending(&StateDef::new("P", StateKind::Execution));
        let mut out = Flagged::default();
        let mut trail = vec![StateId::from("root")];
        flag_subtree(&mut h, &mut trail, &mut out);
        flag_subtree(&mut pending, &mut trail, &mut out);
        let paths: Vec<String> = out.events.iter().map(|p| p.to_string()).collect();
        assert_eq!(paths, ["root/H", "root/H/A"]);
        assert_eq!(out.tickets, [1]);
        assert_eq!(pending.rested(), Some(PREEMPTED));
        assert!(live_ids(&h).values().all(|rested| !rested));

        // A second preemption reaching the same states reports nothing new.
        let mut again = Flagged::default();
        flag_subtree(&mut h, &mut trail, &mut again);
        assert!(again.events.is_empty());
    }

    #[test]
    fn seeds_differ_per_path_and_entry() {
        let a: StatePath = "r/a".parse().unwrap();
        let b: StatePath = "r/b".parse().unwrap();
        assert_ne!(mix_seed(1, &a, 1), mix_seed(1, &b, 1));
        assert_ne!(mix_seed(1, &a, 1), mix_seed(1, &a, 2));
        assert_eq!(mix_seed(1, &a, 1), mix_seed(1, &a, 1));
    }
}
