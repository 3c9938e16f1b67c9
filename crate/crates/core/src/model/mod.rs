//! State-machine object model: states, outcomes, transitions, ports and data flows.

mod edit;
mod generate;
mod path;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::script::Script;
use crate::value::{DataType, Value};

pub use edit::{Edit, EditError, EditLog, PortDirection};
pub use generate::{generate_synthetic, machine_depth, GeneratorProfile};
pub use path::StatePath;
pub use validate::{validate, Finding, ValidationReport};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub String);

impl StateId {
    pub fn new(s: impl Into<String>) -> Self {
        StateId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        StateId(s.to_string())
    }
}

impl std::borrow::Borrow<str> for StateId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeId(pub i32);

impl OutcomeId {
    pub const ABORTED: OutcomeId = OutcomeId(-1);
    pub const PREEMPTED: OutcomeId = OutcomeId(-2);

    pub fn is_reserved(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Display for OutcomeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const ABORTED: &str = "aborted";
pub const PREEMPTED: &str = "preempted";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Execution,
    Hierarchy,
    PreemptiveConcurrency,
    BarrierConcurrency,
    Library,
}

impl StateKind {
    pub fn is_concurrency(self) -> bool {
        matches!(self, StateKind::PreemptiveConcurrency | StateKind::BarrierConcurrency)
    }

    pub fn is_composite(self) -> bool {
        matches!(self, StateKind::Hierarchy | StateKind::PreemptiveConcurrency | StateKind::BarrierConcurrency)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: OutcomeId,
    pub name: String,
}

impl Outcome {
    pub fn new(id: i32, name: impl Into<String>) -> Self {
        Outcome { id: OutcomeId(id), name: name.into() }
    }

    fn reserved() -> [Outcome; 2] {
        [Outcome { id: OutcomeId::ABORTED, name: ABORTED.into() }, Outcome {
            id: OutcomeId::PREEMPTED,
            name: PREEMPTED.into(),
        }]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TransitionTarget {
    State(StateId),
    ParentOutcome(OutcomeId),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transition {
    pub from_state: StateId,
    pub from_outcome: OutcomeId,
    pub to: TransitionTarget,
}

impl Transition {
    pub fn to_state(from: impl Into<StateId>, outcome: OutcomeId, to: impl Into<StateId>) -> Self {
        Transition { from_state: from.into(), from_outcome: outcome, to: TransitionTarget::State(to.into()) }
    }

    pub fn to_parent(from: impl Into<StateId>, outcome: OutcomeId, parent_outcome: OutcomeId) -> Self {
        Transition { from_state: from.into(), from_outcome: outcome, to: TransitionTarget::ParentOutcome(parent_outcome) }
    }
}

#[derive(Serialize, Deserialize)]
struct TransitionRepr {
    from_state: StateId,
    from_outcome: OutcomeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    to_state: Option<StateId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    to_parent_outcome: Option<OutcomeId>,
}

impl Serialize for Transition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (to_state, to_parent_outcome) = match &self.to {
            TransitionTarget::State(id) => (Some(id.clone()), None),
            TransitionTarget::ParentOutcome(o) => (None, Some(*o)),
        };
        TransitionRepr { from_state: self.from_state.clone(), from_outcome: self.from_outcome, to_state, to_parent_outcome }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Transition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = TransitionRepr::deserialize(d)?;
        let to = match (r.to_state, r.to_parent_outcome) {
            (Some(id), None) => TransitionTarget::State(id),
            (None, Some(o)) => TransitionTarget::ParentOutcome(o),
            _ => {
                return Err(serde::de::Error::custom(
                    "transition needs exactly one of to_state and to_parent_outcome",
                ))
            }
        };
        Ok(Transition { from_state: r.from_state, from_outcome: r.from_outcome, to })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataPort {
    pub name: String,
    pub dtype: DataType,
    pub default: Value,
}

impl DataPort {
    pub fn new(name: impl Into<String>, default: Value) -> Self {
        DataPort { name: name.into(), dtype: default.dtype(), default }
    }
}

impl<'de> Deserialize<'de> for DataPort {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            name: String,
            dtype: DataType,
            default: serde_json::Value,
        }
        let r = Repr::deserialize(d)?;
        let default = Value::from_json_typed(&r.default, r.dtype)
            .map_err(|e| serde::de::Error::custom(format!("port `{}`: {e}", r.name)))?;
        Ok(DataPort { name: r.name, dtype: r.dtype, default })
    }
}

/// One end of a data flow: a port on a state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortRef(pub StateId, pub String);

impl PortRef {
    pub fn new(state: impl Into<StateId>, port: impl Into<String>) -> Self {
        PortRef(state.into(), port.into())
    }

    pub fn state(&self) -> &StateId {
        &self.0
    }

    pub fn port(&self) -> &str {
        &self.1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataFlow {
    pub from: PortRef,
    pub to: PortRef,
}

impl DataFlow {
    pub fn new(from: PortRef, to: PortRef) -> Self {
        DataFlow { from, to }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LibraryRef {
    pub library_name: String,
    pub machine_id: String,
    pub version_req: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDef {
    pub id: StateId,
    pub name: String,
    pub kind: StateKind,
    pub outcomes: Vec<Outcome>,
    pub input_ports: Vec<DataPort>,
    pub output_ports: Vec<DataPort>,
    pub children: Vec<StateDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_child: Option<StateId>,
    pub transitions: Vec<Transition>,
    pub data_flows: Vec<DataFlow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Script>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_ref: Option<LibraryRef>,
}

impl StateDef {
    /// A bare state of `kind` with the reserved outcomes and one `success` outcome.
    pub fn new(id: impl Into<StateId>, kind: StateKind) -> Self {
        let id = id.into();
        let mut outcomes = Outcome::reserved().to_vec();
        outcomes.push(Outcome::new(0, "success"));
        StateDef {
            name: id.0.clone(),
            id,
            kind,
            outcomes,
            input_ports: Vec::new(),
            output_ports: Vec::new(),
            children: Vec::new(),
            start_child: None,
            transitions: Vec::new(),
            data_flows: Vec::new(),
            script: None,
            library_ref: None,
        }
    }

    pub fn execution(id: impl Into<StateId>, source: &str) -> Self {
        let mut s = StateDef::new(id, StateKind::Execution);
        s.script = Some(Script::forward(source));
        s
    }

    /// A hierarchy whose children run in the given order; the last one exits via `success`.
    pub fn sequence(id: impl Into<StateId>, children: Vec<StateDef>) -> Self {
        let mut h = StateDef::new(id, StateKind::Hierarchy);
        for pair in children.windows(2) {
            h.transitions.push(Transition::to_state(pair[0].id.clone(), OutcomeId(0), pair[1].id.clone()));
        }
        if let Some(last) = children.last() {
            h.transitions.push(Transition::to_parent(last.id.clone(), OutcomeId(0), OutcomeId(0)));
        }
        h.start_child = children.first().map(|c| c.id.clone());
        h.children = children;
        h
    }

    pub fn concurrency(id: impl Into<StateId>, kind: StateKind, children: Vec<StateDef>) -> Self {
        assert!(kind.is_concurrency());
        let mut c = StateDef::new(id, kind);
        c.children = children;
        c
    }

    pub fn library(id: impl Into<StateId>, library: LibraryRef) -> Self {
        let mut s = StateDef::new(id, StateKind::Library);
        s.library_ref = Some(library);
        s
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_outcome(mut self, id: i32, name: impl Into<String>) -> Self {
        self.outcomes.push(Outcome::new(id, name));
        self
    }

    pub fn with_input(mut self, port: DataPort) -> Self {
        self.input_ports.push(port);
        self
    }

    pub fn with_output(mut self, port: DataPort) -> Self {
        self.output_ports.push(port);
        self
    }

    pub fn with_transition(mut self, t: Transition) -> Self {
        self.transitions.push(t);
        self
    }

    pub fn with_flow(mut self, flow: DataFlow) -> Self {
        self.data_flows.push(flow);
        self
    }

    pub fn with_backward(mut self, source: &str) -> Self {
        if let Some(script) = self.script.take() {
            self.script = Some(script.with_backward(source));
        }
        self
    }

    pub fn outcome_by_name(&self, name: &str) -> Option<&Outcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    pub fn outcome_by_id(&self, id: OutcomeId) -> Option<&Outcome> {
        self.outcomes.iter().find(|o| o.id == id)
    }

    /// First non-reserved outcome in declaration order.
    pub fn first_user_outcome(&self) -> Option<&Outcome> {
        self.outcomes.iter().find(|o| !o.id.is_reserved())
    }

    pub fn child(&self, id: &str) -> Option<&StateDef> {
        self.children.iter().find(|c| c.id.as_str() == id)
    }

    pub fn child_mut(&mut self, id: &str) -> Option<&mut StateDef> {
        self.children.iter_mut().find(|c| c.id.as_str() == id)
    }

    pub fn transition_from(&self, state: &StateId, outcome: OutcomeId) -> Option<&Transition> {
        self.transitions.iter().find(|t| &t.from_state == state && t.from_outcome == outcome)
    }

    pub fn input_port(&self, name: &str) -> Option<&DataPort> {
        self.input_ports.iter().find(|p| p.name == name)
    }

    pub fn output_port(&self, name: &str) -> Option<&DataPort> {
        self.output_ports.iter().find(|p| p.name == name)
    }

    /// Pre-order traversal of this state and all descendants.
    pub fn walk(&self) -> impl Iterator<Item = &StateDef> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let s = stack.pop()?;
            stack.extend(s.children.iter().rev());
            Some(s)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMachineDef {
    pub id: String,
    pub version: String,
    pub root: StateDef,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl StateMachineDef {
    pub fn new(id: impl Into<String>, root: StateDef) -> Self {
        StateMachineDef { id: id.into(), version: "1.0.0".into(), root, metadata: BTreeMap::new() }
    }

    pub fn states(&self) -> impl Iterator<Item = &StateDef> {
        self.root.walk()
    }

    pub fn state_count(&self) -> usize {
        self.states().count()
    }

    pub fn transition_count(&self) -> usize {
        self.states().map(|s| s.transitions.len()).sum()
    }

    /// Path from the root to the state with `id`.
    pub fn path_of(&self, id: &str) -> Option<StatePath> {
        fn go(s: &StateDef, id: &str, trail: &mut Vec<StateId>) -> bool {
            trail.push(s.id.clone());
            if s.id.as_str() == id {
                return true;
            }
            for c in &s.children {
                if go(c, id, trail) {
                    return true;
                }
            }
            trail.pop();
            false
        }
        let mut trail = Vec::new();
        go(&self.root, id, &mut trail).then(|| StatePath::new(trail))
    }

    pub fn resolve(&self, path: &StatePath) -> Option<&StateDef> {
        let (first, rest) = path.segments().split_first()?;
        if first != &self.root.id {
            return None;
        }
        rest.iter().try_fold(&self.root, |s, seg| s.child(seg.as_str()))
    }

    pub fn resolve_mut(&mut self, path: &StatePath) -> Option<&mut StateDef> {
        let (first, rest) = path.segments().split_first()?;
        if first != &self.root.id {
            return None;
        }
        rest.iter().try_fold(&mut self.root, |s, seg| s.child_mut(seg.as_str()))
    }

    pub fn find(&self, id: &str) -> Option<&StateDef> {
        self.states().find(|s| s.id.as_str() == id)
    }

    pub fn find_mut(&mut self, id: &str) -> Option<&mut StateDef> {
        let path = self.path_of(id)?;
        self.resolve_mut(&path)
    }

    /// Map from every state id to its path.
    pub fn index(&self) -> std::collections::HashMap<StateId, StatePath> {
        fn go(s: &StateDef, trail: &mut Vec<StateId>, out: &mut std::collections::HashMap<StateId, StatePath>) {
            trail.push(s.id.clone());
            out.insert(s.id.clone(), StatePath::new(trail.clone()));
            for c in &s.children {
                go(c, trail, out);
            }
            trail.pop();
        }
        let mut out = std::collections::HashMap::new();
        go(&self.root, &mut Vec::new(), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StateMachineDef {
        let a = StateDef::execution("A", "return \"success\"");
        let b = StateDef::execution("B", "return \"success\"");
        StateMachineDef::new("m", StateDef::sequence("H", vec![a, b]))
    }

    #[test]
    fn every_state_path_resolves_back() {
        let m = sample();
        for s in m.states() {
            let p = m.path_of(s.id.as_str()).unwrap();
            assert_eq!(m.resolve(&p).unwrap().id, s.id);
        }
        assert_eq!(m.index().len(), 3);
    }

    #[test]
    fn transition_serialization_shape() {
        let t = Transition::to_parent("A", OutcomeId(0), OutcomeId(-1));
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"from_state":"A","from_outcome":0,"to_parent_outcome":-1}"#
        );
        let bad = r#"{"from_state":"A","from_outcome":0}"#;
        assert!(serde_json::from_str::<Transition>(bad).is_err());
    }

    #[test]
    fn float_port_accepts_integral_default() {
        let p: DataPort = serde_json::from_str(r#"{"name":"x","dtype":"float","default":2}"#).unwrap();
        assert_eq!(p.default, Value::Float(2.0));
        assert!(serde_json::from_str::<DataPort>(r#"{"name":"x","dtype":"int","default":"a"}"#).is_err());
    }
}
