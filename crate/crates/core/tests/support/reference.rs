//! Brute-force reference interpreter for the semantics suite.
//!
//! A recursive evaluator over logical rounds. Entering is instantaneous; a script
//! finishes one round after it was entered, and a script that reaches `wait` without
//! being preempted blocks forever. Preempting at round F either precedes the round-F
//! work of a subtree (`after == false`) or follows it: siblings declared before the
//! winner have already done that round's work when the winner comes to rest.
//!
//! It shares nothing with the engine beyond the model types and the script evaluator.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use orc::model::{StateDef, StateKind, StateMachineDef, TransitionTarget, ABORTED, PREEMPTED};
use orc::script::{evaluate, ScriptContext, ScriptHost, DEFAULT_STEP_BUDGET};
use orc::value::{Value, ValueMap};

const NEVER: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq)]
pub enum Ev {
    Entered,
    Preempted,
    ScriptError,
    Exited(String, ValueMap),
}

/// Event projection: per state path, the events that path produced, in order.
pub type Projection = BTreeMap<String, Vec<Ev>>;

#[derive(Debug)]
pub struct Outcome {
    pub outcome: String,
    pub events: Projection,
}

#[derive(Clone, Copy)]
struct Flag {
    round: u64,
    after: bool,
}

impl Flag {
    fn precedes_rest(self, end: u64) -> bool {
        !(end < self.round || (self.after && end == self.round))
    }
    fn precedes_entry(self, t: u64) -> bool {
        !(t < self.round || (self.after && t == self.round))
    }
}

struct Res {
    end: u64,
    outcome: String,
    outputs: ValueMap,
    flagged: bool,
    events: Projection,
}

struct Host {
    preempted: AtomicBool,
    blocked: AtomicBool,
}

impl ScriptHost for Host {
    fn get_global(&self, _: &str) -> Option<Value> {
        None
    }
    fn set_global(&self, _: &str, _: Value) {}
    fn preempted(&self) -> bool {
        self.preempted.load(Ordering::SeqCst)
    }
    fn wait(&self, _: u64) -> bool {
        if self.preempted() {
            return false;
        }
        // Unpreempted waits never return in time; continue as the eventual wake-up would.
        self.blocked.store(true, Ordering::SeqCst);
        self.preempted.store(true, Ordering::SeqCst);
        false
    }
    fn call(&self, service: &str, _: &Value) -> Result<Value, String> {
        Err(format!("no service `{service}`"))
    }
    fn log(&self, _: &str, _: &str) {}
}

struct Script {
    blocked: bool,
    outcome: Result<String, ()>,
    outputs: ValueMap,
}

fn run_script(def: &StateDef, inputs: &ValueMap, preempted: bool) -> Script {
    let host = Host { preempted: AtomicBool::new(preempted), blocked: AtomicBool::new(false) };
    let program = def.script.as_ref().unwrap().forward_program().unwrap();
    let result = evaluate(program, ScriptContext {
        inputs,
        outputs: def.output_ports.iter().map(|p| (p.name.clone(), p.default.clone())).collect(),
        output_types: def.output_ports.iter().map(|p| (p.name.clone(), p.dtype)).collect(),
        host: &host,
        step_budget: DEFAULT_STEP_BUDGET,
        rng_seed: 0,
    });
    let blocked = host.blocked.load(Ordering::SeqCst);
    match result {
        Ok(r) if def.outcome_by_name(&r.outcome_name).is_some() => {
            Script { blocked, outcome: Ok(r.outcome_name), outputs: r.outputs }
        }
        Ok(r) => Script { blocked, outcome: Err(()), outputs: r.outputs },
        Err(f) => Script { blocked, outcome: Err(()), outputs: f.outputs },
    }
}

fn defaults(def: &StateDef) -> ValueMap {
    def.output_ports.iter().map(|p| (p.name.clone(), p.default.clone())).collect()
}

fn merge(into: &mut Projection, from: Projection) {
    for (k, v) in from {
        into.entry(k).or_default().extend(v);
    }
}

/// Copies a resting child's outputs along the parent's child-to-parent flows.
fn propagate(parent: &StateDef, child: &StateDef, outputs: &ValueMap, into: &mut ValueMap) {
    for f in &parent.data_flows {
        if f.from.state() == &child.id && f.to.state() == &parent.id {
            if let Some(v) = outputs.get(f.from.port()) {
                into.insert(f.to.port().to_string(), v.clone());
            }
        }
    }
}

fn inputs_for(parent: &StateDef, pin: &ValueMap, rested: &BTreeMap<String, ValueMap>, child: &StateDef) -> ValueMap {
    child
        .input_ports
        .iter()
        .map(|port| {
            let flow = parent.data_flows.iter().find(|f| f.to.state() == &child.id && f.to.port() == port.name);
            let v = flow.and_then(|f| {
                if f.from.state() == &parent.id {
                    pin.get(f.from.port()).cloned()
                } else {
                    rested.get(f.from.state().as_str()).and_then(|m| m.get(f.from.port())).cloned()
                }
            });
            (port.name.clone(), v.unwrap_or_else(|| port.default.clone()))
        })
        .collect()
}

fn finish(path: &str, mut events: Projection, mut r: Res) -> Res {
    let own = events.entry(path.to_string()).or_default();
    if r.flagged {
        own.push(Ev::Preempted);
    }
    own.push(Ev::Exited(r.outcome.clone(), r.outputs.clone()));
    merge(&mut r.events, events);
    r
}

fn eval(def: &StateDef, path: &str, inputs: &ValueMap, t: u64, flag: Option<Flag>) -> Option<Res> {
    if flag.is_some_and(|f| f.precedes_entry(t)) {
        return None;
    }
    let mut events = Projection::new();
    events.insert(path.to_string(), vec![Ev::Entered]);
    let res = match def.kind {
        StateKind::Execution => {
            let s = run_script(def, inputs, false);
            let natural = if s.blocked { NEVER } else { t + 1 };
            match flag {
                Some(f) if f.precedes_rest(natural) => {
                    let (end, outputs) = if t == f.round {
                        (f.round + 1, run_script(def, inputs, true).outputs)
                    } else if s.blocked {
                        (f.round + 1, s.outputs)
                    } else {
                        (f.round, s.outputs)
                    };
                    Res { end, outcome: PREEMPTED.into(), outputs, flagged: true, events: Projection::new() }
                }
                _ => {
                    let outcome = match s.outcome {
                        Ok(o) => o,
                        Err(()) => {
                            events.get_mut(path).unwrap().push(Ev::ScriptError);
                            ABORTED.into()
                        }
                    };
                    Res { end: natural, outcome, outputs: s.outputs, flagged: false, events: Projection::new() }
                }
            }
        }
        StateKind::Hierarchy => {
            let mut outputs = defaults(def);
            let mut rested = BTreeMap::new();
            let mut cur = def.child(def.start_child.as_ref().unwrap().as_str()).unwrap();
            let mut time = t;
            loop {
                let cin = inputs_for(def, inputs, &rested, cur);
                let Some(c) = eval(cur, &format!("{path}/{}", cur.id), &cin, time, flag) else {
                    unreachable!("a hierarchy under preemption always has an entered child")
                };
                propagate(def, cur, &c.outputs, &mut outputs);
                merge(&mut events, c.events);
                if c.end == NEVER {
                    break Res { end: NEVER, outcome: String::new(), outputs, flagged: false, events: Projection::new() };
                }
                if c.flagged {
                    break Res { end: c.end, outcome: PREEMPTED.into(), outputs, flagged: true, events: Projection::new() };
                }
                rested.insert(cur.id.to_string(), c.outputs);
                let oid = cur.outcome_by_name(&c.outcome).unwrap().id;
                match def.transition_from(&cur.id, oid).map(|tr| tr.to.clone()) {
                    Some(TransitionTarget::State(next)) => {
                        cur = def.child(next.as_str()).unwrap();
                        time = c.end;
                    }
                    Some(TransitionTarget::ParentOutcome(p)) => {
                        let outcome = def.outcome_by_id(p).unwrap().name.clone();
                        break Res { end: c.end, outcome, outputs, flagged: false, events: Projection::new() };
                    }
                    None => {
                        assert!(oid.is_reserved(), "generated machines connect every user outcome");
                        break Res { end: c.end, outcome: c.outcome, outputs, flagged: false, events: Projection::new() };
                    }
                }
            }
        }
        StateKind::PreemptiveConcurrency | StateKind::BarrierConcurrency => {
            let mut kids: Vec<Option<Res>> = def
                .children
                .iter()
                .map(|c| eval(c, &format!("{path}/{}", c.id), &inputs_for(def, inputs, &BTreeMap::new(), c), t, flag))
                .collect();
            let preemptive = def.kind == StateKind::PreemptiveConcurrency;
            let winner = kids
                .iter()
                .enumerate()
                .filter_map(|(i, k)| k.as_ref().filter(|k| !k.flagged && k.end != NEVER).map(|k| (k.end, i)))
                .min();
            if let (true, Some((end, w))) = (preemptive, winner) {
                for (j, c) in def.children.iter().enumerate().filter(|(j, _)| *j != w) {
                    let inner = Flag { round: end, after: j < w };
                    let cin = inputs_for(def, inputs, &BTreeMap::new(), c);
                    kids[j] = eval(c, &format!("{path}/{}", c.id), &cin, t, Some(inner));
                }
            }
            let mut outputs = defaults(def);
            let mut end = 0;
            let mut outcomes = Vec::new();
            for (c, k) in def.children.iter().zip(kids) {
                let k = k.expect("concurrency children enter with their parent");
                propagate(def, c, &k.outputs, &mut outputs);
                end = end.max(k.end);
                outcomes.push(k.outcome);
                merge(&mut events, k.events);
            }
            let first_user = || def.first_user_outcome().map(|o| o.name.clone()).unwrap_or_else(|| ABORTED.into());
            let flagged = flag.is_some_and(|f| f.precedes_rest(end));
            let outcome = if end == NEVER {
                String::new()
            } else if flagged {
                PREEMPTED.into()
            } else if preemptive {
                let w = &outcomes[winner.expect("a finished preemptive concurrency has a winner").1];
                if def.outcome_by_name(w).is_some() { w.clone() } else { first_user() }
            } else if outcomes.iter().any(|o| o == ABORTED) {
                ABORTED.into()
            } else if outcomes.iter().any(|o| o == PREEMPTED) {
                PREEMPTED.into()
            } else {
                first_user()
            };
            Res { end, outcome, outputs, flagged, events: Projection::new() }
        }
        StateKind::Library => panic!("resolve libraries before running the reference"),
    };
    if res.end == NEVER {
        let mut res = res;
        merge(&mut res.events, events);
        return Some(res);
    }
    Some(finish(path, events, res))
}

/// Runs `m` from its root and returns the root outcome with every path's events.
pub fn interpret(m: &StateMachineDef) -> Outcome {
    let root = &m.root;
    let inputs: ValueMap = root.input_ports.iter().map(|p| (p.name.clone(), p.default.clone())).collect();
    let r = eval(root, root.id.as_str(), &inputs, 0, None).unwrap();
    assert_ne!(r.end, NEVER, "reference run blocks forever");
    Outcome { outcome: r.outcome, events: r.events }
}

/// The same projection built from an engine history.
pub fn project(history: &[orc::engine::HistoryEntry]) -> Projection {
    use orc::engine::HistoryEvent;
    let mut out = Projection::new();
    for h in history {
        let ev = match &h.event {
            HistoryEvent::Entered => Ev::Entered,
            HistoryEvent::Preempted => Ev::Preempted,
            HistoryEvent::ScriptError { .. } => Ev::ScriptError,
            HistoryEvent::Exited { outcome } => Ev::Exited(outcome.clone(), h.context.outputs.clone()),
            HistoryEvent::SteppedBack => continue,
        };
        out.entry(h.path.to_string()).or_default().push(ev);
    }
    out
}
