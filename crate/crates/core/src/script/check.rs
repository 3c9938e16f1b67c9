//! Static checks against a state's declared interface.

use std::collections::{BTreeSet, HashSet};

use super::ast::*;
use super::eval::BUILTINS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptFinding {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
    pub pos: Pos,
}

/// Names visible to a script.
#[derive(Clone, Debug, Default)]
pub struct Interface<'a> {
    pub inputs: BTreeSet<&'a str>,
    pub outputs: BTreeSet<&'a str>,
    pub outcomes: BTreeSet<&'a str>,
}

pub fn check(program: &Program, iface: &Interface<'_>) -> Vec<ScriptFinding> {
    let mut c = Checker { iface, findings: Vec::new(), assigned_anywhere: HashSet::new(), read: HashSet::new() };
    collect_assigned(&program.stmts, &mut c.assigned_anywhere);
    let flow = c.block(&program.stmts, Flow::default());
    if !flow.terminates {
        let pos = program.stmts.last().map(|s| s.pos).unwrap_or_default();
        c.push(Severity::Warning, "MISSING_RETURN", "execution can reach the end without returning an outcome", pos);
    }
    let mut unused: Vec<_> = c
        .assigned_anywhere
        .iter()
        .filter(|n| !iface.outputs.contains(n.as_str()) && !c.read.contains(*n))
        .cloned()
        .collect();
    unused.sort();
    for name in unused {
        c.push(
            Severity::Warning,
            "UNDECLARED_OUTPUT",
            format!("`{name}` is assigned but is neither a declared output nor read"),
            Pos::default(),
        );
    }
    c.findings
}

fn collect_assigned(stmts: &[Stmt], out: &mut HashSet<String>) {
    for s in stmts {
        match &s.kind {
            StmtKind::Assign { name, .. } => {
                out.insert(name.clone());
            }
            StmtKind::If { then, otherwise, .. } => {
                collect_assigned(then, out);
                match otherwise {
                    Some(Else::Block(b)) => collect_assigned(b, out),
                    Some(Else::If(inner)) => collect_assigned(std::slice::from_ref(inner.as_ref()), out),
                    None => {}
                }
            }
            StmtKind::While { body, .. } => collect_assigned(body, out),
            _ => {}
        }
    }
}

/// Definitely-assigned locals along the current path.
#[derive(Clone, Debug, Default)]
struct Flow {
    assigned: HashSet<String>,
    terminates: bool,
}

impl Flow {
    fn join(a: Flow, b: Flow) -> Flow {
        match (a.terminates, b.terminates) {
            (true, true) => Flow { assigned: a.assigned, terminates: true },
            (true, false) => b,
            (false, true) => a,
            (false, false) => {
                Flow { assigned: a.assigned.intersection(&b.assigned).cloned().collect(), terminates: false }
            }
        }
    }
}

struct Checker<'a, 'b> {
    iface: &'a Interface<'b>,
    findings: Vec<ScriptFinding>,
    assigned_anywhere: HashSet<String>,
    read: HashSet<String>,
}

impl Checker<'_, '_> {
    fn push(&mut self, severity: Severity, code: &'static str, message: impl Into<String>, pos: Pos) {
        self.findings.push(ScriptFinding { severity, code, message: message.into(), pos });
    }

    fn block(&mut self, stmts: &[Stmt], mut flow: Flow) -> Flow {
        for s in stmts {
            if flow.terminates {
                break;
            }
            flow = self.stmt(s, flow);
        }
        flow
    }

    fn stmt(&mut self, stmt: &Stmt, mut flow: Flow) -> Flow {
        match &stmt.kind {
            StmtKind::Assign { name, value } => {
                self.expr(value, &flow);
                if self.iface.inputs.contains(name.as_str()) && !self.iface.outputs.contains(name.as_str()) {
                    self.push(Severity::Error, "ASSIGN_TO_INPUT", format!("input `{name}` is read-only"), stmt.pos);
                }
                flow.assigned.insert(name.clone());
                flow
            }
            StmtKind::If { cond, then, otherwise } => {
                self.expr(cond, &flow);
                let then_flow = self.block(then, flow.clone());
                let else_flow = match otherwise {
                    None => flow,
                    Some(Else::Block(b)) => self.block(b, flow),
                    Some(Else::If(inner)) => self.stmt(inner, flow),
                };
                Flow::join(then_flow, else_flow)
            }
            StmtKind::While { cond, body } => {
                self.expr(cond, &flow);
                self.block(body, flow.clone());
                // Without `break`, a literal `while true` never falls through.
                if matches!(cond.kind, ExprKind::Bool(true)) {
                    flow.terminates = true;
                }
                flow
            }
            StmtKind::Return(e) => {
                self.expr(e, &flow);
                match &e.kind {
                    ExprKind::Str(name) => {
                        if !self.iface.outcomes.contains(name.as_str()) {
                            self.push(Severity::Error, "UNKNOWN_OUTCOME", format!("no outcome named {name:?}"), e.pos);
                        }
                    }
                    ExprKind::Int(_)
                    | ExprKind::Float(_)
                    | ExprKind::Bool(_)
                    | ExprKind::List(_)
                    | ExprKind::Map(_) => {
                        self.push(Severity::Error, "UNKNOWN_OUTCOME", "returned literal is not an outcome name", e.pos);
                    }
                    _ => self.push(
                        Severity::Warning,
                        "DYNAMIC_OUTCOME",
                        "outcome is computed at runtime and cannot be checked",
                        e.pos,
                    ),
                }
                flow.terminates = true;
                flow
            }
            StmtKind::Expr(e) => {
                self.expr(e, &flow);
                flow
            }
        }
    }

    fn expr(&mut self, expr: &Expr, flow: &Flow) {
        match &expr.kind {
            ExprKind::Ident(name) => {
                self.read.insert(name.clone());
                if flow.assigned.contains(name)
                    || self.iface.inputs.contains(name.as_str())
                    || self.iface.outputs.contains(name.as_str())
                {
                    return;
                }
                if self.assigned_anywhere.contains(name) {
                    self.push(
                        Severity::Error,
                        "USE_BEFORE_ASSIGN",
                        format!("`{name}` may be read before it is assigned"),
                        expr.pos,
                    );
                } else {
                    self.push(Severity::Error, "UNDECLARED_INPUT", format!("no input port named `{name}`"), expr.pos);
                }
            }
            ExprKind::Call { callee, args } => {
                match &callee.kind {
                    ExprKind::Ident(name) if BUILTINS.contains(&name.as_str()) => {}
                    ExprKind::Ident(name) => {
                        self.push(Severity::Error, "UNKNOWN_FUNCTION", format!("no builtin named `{name}`"), callee.pos)
                    }
                    _ => self.push(Severity::Error, "UNKNOWN_FUNCTION", "only builtins can be called", callee.pos),
                }
                for a in args {
                    self.expr(a, flow);
                }
            }
            ExprKind::List(items) => items.iter().for_each(|e| self.expr(e, flow)),
            ExprKind::Map(entries) => entries.iter().for_each(|(_, e)| self.expr(e, flow)),
            ExprKind::Unary { operand, .. } => self.expr(operand, flow),
            ExprKind::Binary { lhs, rhs, .. } => {
                self.expr(lhs, flow);
                self.expr(rhs, flow);
            }
            ExprKind::Index { target, index } => {
                self.expr(target, flow);
                self.expr(index, flow);
            }
            ExprKind::Int(_) | ExprKind::Float(_) | ExprKind::Str(_) | ExprKind::Bool(_) => {}
        }
    }
}
