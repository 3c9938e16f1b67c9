use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use super::{OutcomeId, StateDef, StateKind, StateMachineDef, StatePath, TransitionTarget, ABORTED, PREEMPTED};
use crate::script::{self, Severity};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub severity: Severity,
    pub path: StatePath,
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        };
        write!(f, "{sev} {} {} {}", self.code, self.path, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.findings.iter().map(|f| f.code).collect()
    }
}

pub fn validate(machine: &StateMachineDef) -> ValidationReport {
    let mut v = Validator { findings: Vec::new(), seen: HashSet::new(), flow_targets: HashSet::new() };
    if machine.root.kind == StateKind::Library {
        v.error(&StatePath::root(machine.root.id.clone()), "LIBRARY_ROOT", "root must not be a library state");
    }
    let mut trail = Vec::new();
    v.state(&machine.root, &mut trail);
    ValidationReport { findings: v.findings }
}

struct Validator {
    findings: Vec<Finding>,
    seen: HashSet<String>,
    flow_targets: HashSet<(String, String)>,
}

impl Validator {
    fn push(&mut self, severity: Severity, path: &StatePath, code: &'static str, message: impl Into<String>) {
        self.findings.push(Finding { severity, path: path.clone(), code, message: message.into() });
    }

    fn error(&mut self, path: &StatePath, code: &'static str, message: impl Into<String>) {
        self.push(Severity::Error, path, code, message);
    }

    fn warn(&mut self, path: &StatePath, code: &'static str, message: impl Into<String>) {
        self.push(Severity::Warning, path, code, message);
    }

    fn state(&mut self, s: &StateDef, trail: &mut Vec<super::StateId>) {
        trail.push(s.id.clone());
        let path = StatePath::new(trail.clone());
        if !self.seen.insert(s.id.0.clone()) {
            self.error(&path, "DUPLICATE_STATE_ID", format!("state id `{}` is used more than once", s.id));
        }
        self.outcomes(s, &path);
        self.ports(s, &path);
        self.kind_rules(s, &path);
        if s.kind.is_composite() {
            self.transitions(s, &path);
        } else if !s.transitions.is_empty() {
            self.error(&path, "BAD_TRANSITION_SOURCE", "only composite states own transitions");
        }
        self.flows(s, &path);
        for c in &s.children {
            self.state(c, trail);
        }
        trail.pop();
    }

    fn outcomes(&mut self, s: &StateDef, path: &StatePath) {
        for (id, name) in [(OutcomeId::ABORTED, ABORTED), (OutcomeId::PREEMPTED, PREEMPTED)] {
            match s.outcome_by_id(id) {
                None => self.error(path, "MISSING_RESERVED_OUTCOME", format!("missing outcome {id} `{name}`")),
                Some(o) if o.name != name => self.error(
                    path,
                    "BAD_RESERVED_OUTCOME",
                    format!("outcome {id} must be named `{name}`, found `{}`", o.name),
                ),
                _ => {}
            }
        }
        let mut ids = HashSet::new();
        let mut names = HashSet::new();
        for o in &s.outcomes {
            if o.id.is_reserved() && o.id != OutcomeId::ABORTED && o.id != OutcomeId::PREEMPTED {
                self.error(path, "BAD_OUTCOME_ID", format!("negative outcome id {} is reserved", o.id));
            }
            if !o.id.is_reserved() && (o.name == ABORTED || o.name == PREEMPTED) {
                self.error(path, "BAD_RESERVED_OUTCOME", format!("name `{}` is reserved", o.name));
            }
            if !ids.insert(o.id) || !names.insert(o.name.as_str()) {
                self.error(path, "DUPLICATE_OUTCOME", format!("outcome {} `{}` is declared twice", o.id, o.name));
            }
        }
        if s.first_user_outcome().is_none() {
            self.error(path, "NO_USER_OUTCOME", "a state needs at least one non-reserved outcome");
        }
    }

    fn ports(&mut self, s: &StateDef, path: &StatePath) {
        for (dir, ports) in [("input", &s.input_ports), ("output", &s.output_ports)] {
            let mut names = HashSet::new();
            for p in ports {
                if !names.insert(p.name.as_str()) {
                    self.error(path, "DUPLICATE_PORT", format!("{dir} port `{}` is declared twice", p.name));
                }
                if p.default.dtype() != p.dtype {
                    self.error(
                        path,
                        "DEFAULT_TYPE_MISMATCH",
                        format!("{dir} port `{}` is {} but its default is {}", p.name, p.dtype, p.default.dtype()),
                    );
                }
                if let crate::value::Value::Float(x) = p.default {
                    if !x.is_finite() {
                        self.error(path, "BAD_DEFAULT", format!("{dir} port `{}` has a non-finite default", p.name));
                    }
                }
            }
        }
    }

    fn kind_rules(&mut self, s: &StateDef, path: &StatePath) {
        let leaf = matches!(s.kind, StateKind::Execution | StateKind::Library);
        if leaf && !s.children.is_empty() {
            self.error(path, "CHILDREN_ON_LEAF", format!("{:?} states cannot have children", s.kind));
        }
        if s.kind != StateKind::Execution && s.script.is_some() {
            self.error(path, "UNEXPECTED_SCRIPT", "only execution states carry a script");
        }
        if s.kind != StateKind::Library && s.library_ref.is_some() {
            self.error(path, "UNEXPECTED_LIBRARY_REF", "only library states carry a library reference");
        }
        if s.kind != StateKind::Hierarchy && s.start_child.is_some() {
            self.error(path, "UNEXPECTED_START", "only hierarchy states have a start child");
        }
        match s.kind {
            StateKind::Execution => self.script(s, path),
            StateKind::Library => {
                if s.library_ref.is_none() {
                    self.error(path, "MISSING_LIBRARY_REF", "library state without a library reference");
                }
            }
            StateKind::Hierarchy => match &s.start_child {
                None => self.error(path, "MISSING_START", "hierarchy state has no start child"),
                Some(start) if s.child(start.as_str()).is_none() => {
                    self.error(path, "BAD_START", format!("start child `{start}` is not a child"))
                }
                Some(_) => {}
            },
            StateKind::PreemptiveConcurrency | StateKind::BarrierConcurrency => {
                if s.children.is_empty() {
                    self.error(path, "EMPTY_CONCURRENCY", "concurrency state has no children");
                }
                if !s.transitions.is_empty() {
                    self.error(path, "CONCURRENCY_TRANSITION", "children of a concurrency state are not connected");
                }
            }
        }
    }

    fn script(&mut self, s: &StateDef, path: &StatePath) {
        let Some(sc) = &s.script else {
            self.error(path, "MISSING_SCRIPT", "execution state has no script");
            return;
        };
        let iface = script::Interface {
            inputs: s.input_ports.iter().map(|p| p.name.as_str()).collect(),
            outputs: s.output_ports.iter().map(|p| p.name.as_str()).collect(),
            outcomes: s.outcomes.iter().map(|o| o.name.as_str()).collect(),
        };
        match sc.forward_program() {
            Err(e) => self.error(path, "SCRIPT_PARSE_ERROR", format!("execute: {e}")),
            Ok(program) => {
                for f in script::check(program, &iface) {
                    self.push(f.severity, path, f.code, format!("execute {}: {}", f.pos, f.message));
                }
            }
        }
        match sc.backward_program() {
            None => {}
            Some(Err(e)) => self.error(path, "SCRIPT_PARSE_ERROR", format!("execute_backwards: {e}")),
            Some(Ok(program)) => {
                for f in script::check(program, &iface) {
                    // The backward outcome is ignored, so outcome findings do not apply.
                    if matches!(f.code, "UNKNOWN_OUTCOME" | "DYNAMIC_OUTCOME" | "MISSING_RETURN") {
                        continue;
                    }
                    self.push(f.severity, path, f.code, format!("execute_backwards {}: {}", f.pos, f.message));
                }
            }
        }
    }

    fn transitions(&mut self, s: &StateDef, path: &StatePath) {
        let mut sources = HashSet::new();
        for t in &s.transitions {
            let Some(from) = s.child(t.from_state.as_str()) else {
                self.error(path, "BAD_TRANSITION_SOURCE", format!("`{}` is not a child", t.from_state));
                continue;
            };
            if from.outcome_by_id(t.from_outcome).is_none() {
                self.error(
                    path,
                    "BAD_TRANSITION_OUTCOME",
                    format!("`{}` has no outcome {}", t.from_state, t.from_outcome),
                );
            }
            if !sources.insert((t.from_state.clone(), t.from_outcome)) {
                self.error(
                    path,
                    "DUPLICATE_TRANSITION",
                    format!("more than one transition leaves `{}` outcome {}", t.from_state, t.from_outcome),
                );
            }
            match &t.to {
                TransitionTarget::State(to) => {
                    if s.child(to.as_str()).is_none() {
                        self.error(path, "BAD_TRANSITION_TARGET", format!("target `{to}` is not a sibling"));
                    } else if to == &t.from_state {
                        self.warn(path, "SELF_LOOP", format!("`{to}` outcome {} loops to itself", t.from_outcome));
                    }
                }
                TransitionTarget::ParentOutcome(o) => {
                    if s.outcome_by_id(*o).is_none() {
                        self.error(path, "BAD_TRANSITION_TARGET", format!("`{}` has no outcome {o}", s.id));
                    }
                }
            }
        }
        if s.kind != StateKind::Hierarchy {
            return;
        }
        for c in &s.children {
            let cpath = path.child(c.id.clone());
            for o in &c.outcomes {
                if s.transition_from(&c.id, o.id).is_some() {
                    continue;
                }
                if o.id.is_reserved() {
                    self.warn(&cpath, "UNCONNECTED_RESERVED", format!("outcome `{}` bubbles to the parent", o.name));
                } else {
                    self.error(&cpath, "UNCONNECTED_OUTCOME", format!("outcome `{}` has no transition", o.name));
                }
            }
        }
        // Reachability from the start child over transitions.
        if let Some(start) = s.start_child.as_ref().filter(|st| s.child(st.as_str()).is_some()) {
            let mut reached: BTreeSet<&str> = BTreeSet::new();
            let mut queue = VecDeque::from([start.as_str()]);
            let edges: HashMap<&str, Vec<&str>> = s.transitions.iter().fold(HashMap::new(), |mut m, t| {
                if let TransitionTarget::State(to) = &t.to {
                    m.entry(t.from_state.as_str()).or_default().push(to.as_str());
                }
                m
            });
            while let Some(n) = queue.pop_front() {
                if reached.insert(n) {
                    queue.extend(edges.get(n).into_iter().flatten().copied());
                }
            }
            for c in &s.children {
                if !reached.contains(c.id.as_str()) {
                    self.warn(&path.child(c.id.clone()), "UNREACHABLE", "no transition path from the start child");
                }
            }
        }
    }

    fn flows(&mut self, s: &StateDef, path: &StatePath) {
        for f in &s.data_flows {
            let desc = format!("{}.{} -> {}.{}", f.from.state(), f.from.port(), f.to.state(), f.to.port());
            let from_is_owner = f.from.state() == &s.id;
            let to_is_owner = f.to.state() == &s.id;
            let from_state = if from_is_owner { Some(s) } else { s.child(f.from.state().as_str()) };
            let to_state = if to_is_owner { Some(s) } else { s.child(f.to.state().as_str()) };
            let (Some(from_state), Some(to_state)) = (from_state, to_state) else {
                self.error(path, "BAD_FLOW", format!("{desc}: endpoints must be this state or its children"));
                continue;
            };
            // Legal shapes: sibling out -> sibling in, parent in -> child in, child out -> parent out.
            let (src, dst) = match (from_is_owner, to_is_owner) {
                (false, false) => (from_state.output_port(f.from.port()), to_state.input_port(f.to.port())),
                (true, false) => (from_state.input_port(f.from.port()), to_state.input_port(f.to.port())),
                (false, true) => (from_state.output_port(f.from.port()), to_state.output_port(f.to.port())),
                (true, true) => {
                    self.error(path, "BAD_FLOW", format!("{desc}: a state cannot feed itself"));
                    continue;
                }
            };
            let (Some(src), Some(dst)) = (src, dst) else {
                self.error(path, "UNKNOWN_PORT", format!("{desc}: no such port for this flow shape"));
                continue;
            };
            if src.dtype != dst.dtype {
                self.error(path, "TYPE_MISMATCH", format!("{desc}: {} does not match {}", src.dtype, dst.dtype));
            }
            let targets_input = !to_is_owner;
            if targets_input && !self.flow_targets.insert((f.to.state().0.clone(), f.to.port().to_string())) {
                self.error(path, "DUPLICATE_FLOW_TARGET", format!("{desc}: port already has an incoming flow"));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DataFlow, DataPort, PortRef, Transition};
    use crate::value::Value;

    fn two_step() -> StateMachineDef {
        let a = StateDef::execution("A", "out = 1\nreturn \"success\"").with_output(DataPort::new("out", Value::Int(0)));
        let b = StateDef::execution("B", "return \"success\"").with_input(DataPort::new("inp", Value::Int(0)));
        let h = StateDef::sequence("H", vec![a, b]).with_flow(DataFlow::new(PortRef::new("A", "out"), PortRef::new("B", "inp")));
        StateMachineDef::new("m", h)
    }

    #[test]
    fn well_formed_machine_has_no_errors() {
        let r = validate(&two_step());
        assert!(!r.has_errors(), "{r:?}");
    }

    #[test]
    fn missing_start() {
        let mut m = two_step();
        m.root.start_child = None;
        assert!(validate(&m).errors().any(|f| f.code == "MISSING_START"));
    }

    #[test]
    fn int_to_string_flow_is_a_type_mismatch() {
        let mut m = two_step();
        m.root.children[1].input_ports[0] = DataPort::new("inp", Value::Str(String::new()));
        assert!(validate(&m).errors().any(|f| f.code == "TYPE_MISMATCH"));
    }

    #[test]
    fn self_loop_is_a_warning() {
        let mut m = two_step();
        m.root.children[0].outcomes.push(crate::model::Outcome::new(1, "again"));
        m.root.transitions.push(Transition::to_state("A", OutcomeId(1), "A"));
        let r = validate(&m);
        assert!(!r.has_errors(), "{r:?}");
        assert!(r.warnings().any(|f| f.code == "SELF_LOOP"));
    }

    #[test]
    fn unconnected_user_outcome_is_an_error() {
        let mut m = two_step();
        m.root.children[0].outcomes.push(crate::model::Outcome::new(1, "other"));
        let r = validate(&m);
        assert!(r.errors().any(|f| f.code == "UNCONNECTED_OUTCOME" && f.path.to_string() == "H/A"));
    }

    #[test]
    fn duplicate_transition_and_flow_target() {
        let mut m = two_step();
        m.root.transitions.push(Transition::to_parent("A", OutcomeId(0), OutcomeId(0)));
        m.root.data_flows.push(DataFlow::new(PortRef::new("A", "out"), PortRef::new("B", "inp")));
        let codes = validate(&m).codes();
        assert!(codes.contains(&"DUPLICATE_TRANSITION"));
        assert!(codes.contains(&"DUPLICATE_FLOW_TARGET"));
    }

    #[test]
    fn script_findings_surface() {
        let mut m = two_step();
        m.root.children[1].script = Some(crate::script::Script::forward("return \"succes\""));
        assert!(validate(&m).errors().any(|f| f.code == "UNKNOWN_OUTCOME"));
    }

    #[test]
    fn unreachable_child_warns() {
        let mut m = two_step();
        m.root.children.push(StateDef::execution("C", "return \"success\""));
        m.root.transitions.push(Transition::to_parent("C", OutcomeId(0), OutcomeId(0)));
        assert!(validate(&m).warnings().any(|f| f.code == "UNREACHABLE"));
    }
}
