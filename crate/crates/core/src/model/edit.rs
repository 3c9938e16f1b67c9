//! Reversible structural edits and the modification history built from them.
//!
//! Every edit carries enough of the prior state to build its own inverse, so undo never
//! needs to consult the machine it is undoing.

use serde::{Deserialize, Serialize};

use super::{DataFlow, DataPort, StateDef, StateId, StateKind, StateMachineDef, Transition, TransitionTarget};
use crate::script::Script;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EditError {
    #[error("EDIT_REJECTED: {0}")]
    Rejected(String),
    #[error("NOTHING_TO_UNDO")]
    NothingToUndo,
    #[error("NOTHING_TO_REDO")]
    NothingToRedo,
}

impl EditError {
    pub fn code(&self) -> &'static str {
        match self {
            EditError::Rejected(_) => "EDIT_REJECTED",
            EditError::NothingToUndo => "NOTHING_TO_UNDO",
            EditError::NothingToRedo => "NOTHING_TO_REDO",
        }
    }
}

fn reject<T>(msg: impl Into<String>) -> Result<T, EditError> {
    Err(EditError::Rejected(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDirection {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "snake_case")]
pub enum Edit {
    AddState { parent: StateId, index: usize, state: StateDef },
    RemoveState { parent: StateId, index: usize, state: StateDef },
    AddTransition { owner: StateId, index: usize, transition: Transition },
    RemoveTransition { owner: StateId, index: usize, transition: Transition },
    AddDataFlow { owner: StateId, index: usize, flow: DataFlow },
    RemoveDataFlow { owner: StateId, index: usize, flow: DataFlow },
    SetScript { state: StateId, before: Option<Script>, after: Option<Script> },
    /// Insert (`before` absent), remove (`after` absent) or replace a port.
    SetPort { state: StateId, direction: PortDirection, index: usize, before: Option<DataPort>, after: Option<DataPort> },
    SetStartChild { state: StateId, before: Option<StateId>, after: Option<StateId> },
    Rename { state: StateId, before: String, after: String },
    /// Applied all-or-nothing, in order.
    Batch(Vec<Edit>),
}

fn state<'a>(m: &'a StateMachineDef, id: &StateId) -> Result<&'a StateDef, EditError> {
    m.find(id.as_str()).ok_or_else(|| EditError::Rejected(format!("no state `{id}`")))
}

fn state_mut<'a>(m: &'a mut StateMachineDef, id: &StateId) -> Result<&'a mut StateDef, EditError> {
    m.find_mut(id.as_str()).ok_or_else(|| EditError::Rejected(format!("no state `{id}`")))
}

impl Edit {
    pub fn add_state(m: &StateMachineDef, parent: impl Into<StateId>, child: StateDef) -> Result<Edit, EditError> {
        let parent = parent.into();
        let index = state(m, &parent)?.children.len();
        Ok(Edit::AddState { parent, index, state: child })
    }

    pub fn remove_state(m: &StateMachineDef, id: &str) -> Result<Edit, EditError> {
        let path = m.path_of(id).ok_or_else(|| EditError::Rejected(format!("no state `{id}`")))?;
        let parent_path = path.parent().ok_or_else(|| EditError::Rejected("cannot remove the root".into()))?;
        let parent = m.resolve(&parent_path).expect("parent of a resolved path");
        let index = parent.children.iter().position(|c| c.id.as_str() == id).expect("child present");
        Ok(Edit::RemoveState { parent: parent.id.clone(), index, state: parent.children[index].clone() })
    }

    pub fn add_transition(m: &StateMachineDef, owner: impl Into<StateId>, t: Transition) -> Result<Edit, EditError> {
        let owner = owner.into();
        let index = state(m, &owner)?.transitions.len();
        Ok(Edit::AddTransition { owner, index, transition: t })
    }

    pub fn remove_transition(m: &StateMachineDef, owner: impl Into<StateId>, t: &Transition) -> Result<Edit, EditError> {
        let owner = owner.into();
        let index = state(m, &owner)?
            .transitions
            .iter()
            .position(|x| x == t)
            .ok_or_else(|| EditError::Rejected("no such transition".into()))?;
        Ok(Edit::RemoveTransition { owner, index, transition: t.clone() })
    }

    /// Replaces whatever transition leaves `(from, outcome)` under `owner` with `t`.
    pub fn rewire(m: &StateMachineDef, owner: impl Into<StateId>, t: Transition) -> Result<Edit, EditError> {
        let owner = owner.into();
        let o = state(m, &owner)?;
        let mut batch = Vec::new();
        if let Some(old) = o.transition_from(&t.from_state, t.from_outcome) {
            batch.push(Edit::remove_transition(m, owner.clone(), old)?);
        }
        let index = o.transitions.len() - batch.len();
        batch.push(Edit::AddTransition { owner, index, transition: t });
        Ok(Edit::Batch(batch))
    }

    pub fn add_data_flow(m: &StateMachineDef, owner: impl Into<StateId>, flow: DataFlow) -> Result<Edit, EditError> {
        let owner = owner.into();
        let index = state(m, &owner)?.data_flows.len();
        Ok(Edit::AddDataFlow { owner, index, flow })
    }

    pub fn remove_data_flow(m: &StateMachineDef, owner: impl Into<StateId>, flow: &DataFlow) -> Result<Edit, EditError> {
        let owner = owner.into();
        let index = state(m, &owner)?
            .data_flows
            .iter()
            .position(|x| x == flow)
            .ok_or_else(|| EditError::Rejected("no such data flow".into()))?;
        Ok(Edit::RemoveDataFlow { owner, index, flow: flow.clone() })
    }

    pub fn set_script(m: &StateMachineDef, id: impl Into<StateId>, script: Script) -> Result<Edit, EditError> {
        let id = id.into();
        let before = state(m, &id)?.script.clone();
        Ok(Edit::SetScript { state: id, before, after: Some(script) })
    }

    pub fn set_start_child(m: &StateMachineDef, id: impl Into<StateId>, start: Option<StateId>) -> Result<Edit, EditError> {
        let id = id.into();
        let before = state(m, &id)?.start_child.clone();
        Ok(Edit::SetStartChild { state: id, before, after: start })
    }

    pub fn rename(m: &StateMachineDef, id: impl Into<StateId>, name: impl Into<String>) -> Result<Edit, EditError> {
        let id = id.into();
        let before = state(m, &id)?.name.clone();
        Ok(Edit::Rename { state: id, before, after: name.into() })
    }

    /// Adds a port (`index` = end) or replaces the port with the same name.
    pub fn set_port(
        m: &StateMachineDef,
        id: impl Into<StateId>,
        direction: PortDirection,
        port: DataPort,
    ) -> Result<Edit, EditError> {
        let id = id.into();
        let s = state(m, &id)?;
        let ports = match direction {
            PortDirection::Input => &s.input_ports,
            PortDirection::Output => &s.output_ports,
        };
        Ok(match ports.iter().position(|p| p.name == port.name) {
            Some(i) => Edit::SetPort { state: id, direction, index: i, before: Some(ports[i].clone()), after: Some(port) },
            None => Edit::SetPort { state: id, direction, index: ports.len(), before: None, after: Some(port) },
        })
    }

    pub fn remove_port(m: &StateMachineDef, id: impl Into<StateId>, direction: PortDirection, name: &str) -> Result<Edit, EditError> {
        let id = id.into();
        let s = state(m, &id)?;
        let ports = match direction {
            PortDirection::Input => &s.input_ports,
            PortDirection::Output => &s.output_ports,
        };
        let index = ports
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| EditError::Rejected(format!("no port `{name}`")))?;
        Ok(Edit::SetPort { state: id, direction, index, before: Some(ports[index].clone()), after: None })
    }

    /// The edit that undoes this one.
    pub fn inverse(&self) -> Edit {
        match self.clone() {
            Edit::AddState { parent, index, state } => Edit::RemoveState { parent, index, state },
            Edit::RemoveState { parent, index, state } => Edit::AddState { parent, index, state },
            Edit::AddTransition { owner, index, transition } => Edit::RemoveTransition { owner, index, transition },
            Edit::RemoveTransition { owner, index, transition } => Edit::AddTransition { owner, index, transition },
            Edit::AddDataFlow { owner, index, flow } => Edit::RemoveDataFlow { owner, index, flow },
            Edit::RemoveDataFlow { owner, index, flow } => Edit::AddDataFlow { owner, index, flow },
            Edit::SetScript { state, before, after } => Edit::SetScript { state, before: after, after: before },
            Edit::SetPort { state, direction, index, before, after } => {
                Edit::SetPort { state, direction, index, before: after, after: before }
            }
            Edit::SetStartChild { state, before, after } => Edit::SetStartChild { state, before: after, after: before },
            Edit::Rename { state, before, after } => Edit::Rename { state, before: after, after: before },
            Edit::Batch(edits) => Edit::Batch(edits.iter().rev().map(Edit::inverse).collect()),
        }
    }

    /// States whose own definition this edit changes or removes.
    pub fn touched_states(&self) -> Vec<StateId> {
        match self {
            Edit::RemoveState { state, .. } => state.walk().map(|s| s.id.clone()).collect(),
            Edit::SetScript { state, .. }
            | Edit::SetPort { state, .. }
            | Edit::Rename { state, .. }
            | Edit::SetStartChild { state, .. } => vec![state.clone()],
            Edit::Batch(edits) => edits.iter().flat_map(Edit::touched_states).collect(),
            Edit::AddState { .. }
            | Edit::AddTransition { .. }
            | Edit::RemoveTransition { .. }
            | Edit::AddDataFlow { .. }
            | Edit::RemoveDataFlow { .. } => Vec::new(),
        }
    }

    /// Applies the edit, leaving the machine untouched on rejection.
    pub fn apply(&self, m: &mut StateMachineDef) -> Result<(), EditError> {
        if let Edit::Batch(edits) = self {
            let mut scratch = m.clone();
            for e in edits {
                e.apply(&mut scratch)?;
            }
            *m = scratch;
            return Ok(());
        }
        self.apply_single(m)
    }

    fn apply_single(&self, m: &mut StateMachineDef) -> Result<(), EditError> {
        match self {
            Edit::AddState { parent, index, state: child } => {
                let p = state(m, parent)?;
                if !p.kind.is_composite() {
                    return reject(format!("`{parent}` cannot have children"));
                }
                if *index > p.children.len() {
                    return reject(format!("index {index} out of range"));
                }
                if let Some(clash) = child.walk().find(|s| m.find(s.id.as_str()).is_some()) {
                    return reject(format!("state id `{}` already exists", clash.id));
                }
                state_mut(m, parent)?.children.insert(*index, child.clone());
            }
            Edit::RemoveState { parent, index, state: child } => {
                let p = state(m, parent)?;
                if p.children.get(*index) != Some(child) {
                    return reject(format!("`{}` is not child {index} of `{parent}` in the recorded form", child.id));
                }
                let id = &child.id;
                if p.transitions.iter().any(|t| &t.from_state == id || t.to == TransitionTarget::State(id.clone())) {
                    return reject(format!("`{id}` still has transitions"));
                }
                if p.data_flows.iter().any(|f| f.from.state() == id || f.to.state() == id) {
                    return reject(format!("`{id}` still has data flows"));
                }
                if p.start_child.as_ref() == Some(id) {
                    return reject(format!("`{id}` is the start child of `{parent}`"));
                }
                state_mut(m, parent)?.children.remove(*index);
            }
            Edit::AddTransition { owner, index, transition: t } => {
                let o = state(m, owner)?;
                if !o.kind.is_composite() {
                    return reject(format!("`{owner}` has no children to connect"));
                }
                if *index > o.transitions.len() {
                    return reject(format!("index {index} out of range"));
                }
                let Some(from) = o.child(t.from_state.as_str()) else {
                    return reject(format!("`{}` is not a child of `{owner}`", t.from_state));
                };
                if from.outcome_by_id(t.from_outcome).is_none() {
                    return reject(format!("`{}` has no outcome {}", t.from_state, t.from_outcome));
                }
                if o.transition_from(&t.from_state, t.from_outcome).is_some() {
                    return reject(format!("outcome {} of `{}` is already connected", t.from_outcome, t.from_state));
                }
                match &t.to {
                    TransitionTarget::State(to) if o.child(to.as_str()).is_none() => {
                        return reject(format!("`{to}` is not a child of `{owner}`"));
                    }
                    TransitionTarget::ParentOutcome(po) if o.outcome_by_id(*po).is_none() => {
                        return reject(format!("`{owner}` has no outcome {po}"));
                    }
                    _ => {}
                }
                state_mut(m, owner)?.transitions.insert(*index, t.clone());
            }
            Edit::RemoveTransition { owner, index, transition } => {
                let o = state_mut(m, owner)?;
                if o.transitions.get(*index) != Some(transition) {
                    return reject("transition not found at the recorded index");
                }
                o.transitions.remove(*index);
            }
            Edit::AddDataFlow { owner, index, flow } => {
                let o = state(m, owner)?;
                let endpoint_ok = |id: &StateId| id == &o.id || o.child(id.as_str()).is_some();
                if !endpoint_ok(flow.from.state()) || !endpoint_ok(flow.to.state()) {
                    return reject("data flow endpoints must be the owner or its children");
                }
                if *index > o.data_flows.len() {
                    return reject(format!("index {index} out of range"));
                }
                state_mut(m, owner)?.data_flows.insert(*index, flow.clone());
            }
            Edit::RemoveDataFlow { owner, index, flow } => {
                let o = state_mut(m, owner)?;
                if o.data_flows.get(*index) != Some(flow) {
                    return reject("data flow not found at the recorded index");
                }
                o.data_flows.remove(*index);
            }
            Edit::SetScript { state: id, before, after } => {
                let s = state_mut(m, id)?;
                if s.kind != StateKind::Execution {
                    return reject(format!("`{id}` is not an execution state"));
                }
                if &s.script != before {
                    return reject(format!("script of `{id}` changed since the edit was recorded"));
                }
                s.script = after.clone();
            }
            Edit::SetPort { state: id, direction, index, before, after } => {
                let s = state_mut(m, id)?;
                let ports = match direction {
                    PortDirection::Input => &mut s.input_ports,
                    PortDirection::Output => &mut s.output_ports,
                };
                match (before, after) {
                    (None, Some(p)) => {
                        if *index > ports.len() || ports.iter().any(|q| q.name == p.name) {
                            return reject(format!("cannot insert port `{}`", p.name));
                        }
                        ports.insert(*index, p.clone());
                    }
                    (Some(b), after) => {
                        if ports.get(*index) != Some(b) {
                            return reject(format!("port `{}` changed since the edit was recorded", b.name));
                        }
                        match after {
                            Some(p) => ports[*index] = p.clone(),
                            None => {
                                ports.remove(*index);
                            }
                        }
                    }
                    (None, None) => return reject("empty port edit"),
                }
            }
            Edit::SetStartChild { state: id, before, after } => {
                let s = state_mut(m, id)?;
                if s.kind != StateKind::Hierarchy {
                    return reject(format!("`{id}` is not a hierarchy state"));
                }
                if &s.start_child != before {
                    return reject(format!("start child of `{id}` changed since the edit was recorded"));
                }
                if let Some(a) = after {
                    if s.child(a.as_str()).is_none() {
                        return reject(format!("`{a}` is not a child of `{id}`"));
                    }
                }
                s.start_child = after.clone();
            }
            Edit::Rename { state: id, before, after } => {
                let s = state_mut(m, id)?;
                if &s.name != before {
                    return reject(format!("name of `{id}` changed since the edit was recorded"));
                }
                s.name = after.clone();
            }
            Edit::Batch(_) => unreachable!("handled in apply"),
        }
        Ok(())
    }
}

/// Linear modification history with a cursor; applying a new edit drops the redo tail.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EditLog {
    edits: Vec<Edit>,
    cursor: usize,
}

impl EditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    pub fn apply(&mut self, m: &mut StateMachineDef, edit: Edit) -> Result<(), EditError> {
        edit.apply(m)?;
        self.edits.truncate(self.cursor);
        self.edits.push(edit);
        self.cursor += 1;
        Ok(())
    }

    pub fn undo(&mut self, m: &mut StateMachineDef) -> Result<(), EditError> {
        if self.cursor == 0 {
            return Err(EditError::NothingToUndo);
        }
        self.edits[self.cursor - 1].inverse().apply(m)?;
        self.cursor -= 1;
        Ok(())
    }

    pub fn redo(&mut self, m: &mut StateMachineDef) -> Result<(), EditError> {
        if self.cursor == self.edits.len() {
            return Err(EditError::NothingToRedo);
        }
        self.edits[self.cursor].apply(m)?;
        self.cursor += 1;
        Ok(())
    }
}
