//! Tree-walking evaluator with a statement budget.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ast::*;
use crate::value::{DataType, Value, ValueMap};

/// Default statement budget per script invocation.
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

/// Services a script can reach beyond its own ports.
///
/// Implementations must be usable from several evaluations at once.
pub trait ScriptHost: Sync {
    fn get_global(&self, name: &str) -> Option<Value>;
    fn set_global(&self, name: &str, value: Value);
    fn preempted(&self) -> bool;
    /// Blocks up to `ms` milliseconds; returns `false` if cut short by preemption.
    fn wait(&self, ms: u64) -> bool;
    fn call(&self, service: &str, args: &Value) -> Result<Value, String>;
    fn log(&self, level: &str, message: &str);
}

/// A host with no globals, no services and no preemption. Useful for tests and tools.
#[derive(Default)]
pub struct DetachedHost {
    globals: std::sync::Mutex<BTreeMap<String, Value>>,
}

impl DetachedHost {
    pub fn with_globals(globals: BTreeMap<String, Value>) -> Self {
        DetachedHost { globals: std::sync::Mutex::new(globals) }
    }

    pub fn globals(&self) -> BTreeMap<String, Value> {
        self.globals.lock().unwrap().clone()
    }
}

impl ScriptHost for DetachedHost {
    fn get_global(&self, name: &str) -> Option<Value> {
        self.globals.lock().unwrap().get(name).cloned()
    }
    fn set_global(&self, name: &str, value: Value) {
        self.globals.lock().unwrap().insert(name.to_string(), value);
    }
    fn preempted(&self) -> bool {
        false
    }
    fn wait(&self, _ms: u64) -> bool {
        true
    }
    fn call(&self, service: &str, _args: &Value) -> Result<Value, String> {
        Err(format!("no handler for service `{service}`"))
    }
    fn log(&self, level: &str, message: &str) {
        log::info!(target: "orc::script", "[{level}] {message}");
    }
}

pub struct ScriptContext<'a> {
    pub inputs: &'a ValueMap,
    /// Declared output ports with their defaults.
    pub outputs: ValueMap,
    pub output_types: BTreeMap<String, DataType>,
    pub host: &'a dyn ScriptHost,
    pub step_budget: u64,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptResult {
    pub outcome_name: String,
    pub outputs: ValueMap,
    pub statements_executed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuntimeErrorKind {
    TypeError,
    DivisionByZero,
    UndefinedName,
    IndexOutOfRange,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("{kind:?} at {pos}: {message}")]
    Runtime { kind: RuntimeErrorKind, message: String, pos: Pos },
    #[error("statement budget of {budget} exhausted")]
    BudgetExhausted { budget: u64 },
    /// The script finished without a `return`. Backward scripts are allowed to do this.
    #[error("script ended without returning an outcome")]
    NoOutcome,
}

/// A failed evaluation, with whatever outputs were written before the failure.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptFailure {
    pub error: EvalError,
    pub outputs: ValueMap,
    pub statements_executed: u64,
}

pub const BUILTINS: &[&str] =
    &["log", "wait", "preempted", "get_global", "set_global", "len", "str", "int", "float", "rand", "call"];

pub fn evaluate(program: &Program, ctx: ScriptContext<'_>) -> Result<ScriptResult, ScriptFailure> {
    let mut ev = Evaluator {
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        output_types: ctx.output_types,
        locals: HashMap::new(),
        host: ctx.host,
        budget: ctx.step_budget,
        executed: 0,
        rng: ChaCha8Rng::seed_from_u64(ctx.rng_seed),
    };
    let res = ev.block(&program.stmts);
    let executed = ev.executed;
    match res {
        Ok(Flow::Return(v, pos)) => match v {
            Value::Str(outcome_name) => {
                Ok(ScriptResult { outcome_name, outputs: ev.outputs, statements_executed: executed })
            }
            other => Err(ScriptFailure {
                error: type_error(pos, format!("return needs an outcome name string, found {}", other.dtype())),
                outputs: ev.outputs,
                statements_executed: executed,
            }),
        },
        Ok(Flow::Normal) => Err(ScriptFailure {
            error: EvalError::NoOutcome,
            outputs: ev.outputs,
            statements_executed: executed,
        }),
        Err(error) => Err(ScriptFailure { error, outputs: ev.outputs, statements_executed: executed }),
    }
}

enum Flow {
    Normal,
    Return(Value, Pos),
}

struct Evaluator<'a> {
    inputs: &'a ValueMap,
    outputs: ValueMap,
    output_types: BTreeMap<String, DataType>,
    locals: HashMap<String, Value>,
    host: &'a dyn ScriptHost,
    budget: u64,
    executed: u64,
    rng: ChaCha8Rng,
}

fn type_error(pos: Pos, message: impl Into<String>) -> EvalError {
    EvalError::Runtime { kind: RuntimeErrorKind::TypeError, message: message.into(), pos }
}

fn runtime(kind: RuntimeErrorKind, pos: Pos, message: impl Into<String>) -> EvalError {
    EvalError::Runtime { kind, message: message.into(), pos }
}

type EvalResult<T> = Result<T, EvalError>;

impl Evaluator<'_> {
    fn tick(&mut self) -> EvalResult<()> {
        if self.executed >= self.budget {
            return Err(EvalError::BudgetExhausted { budget: self.budget });
        }
        self.executed += 1;
        Ok(())
    }

    fn block(&mut self, stmts: &[Stmt]) -> EvalResult<Flow> {
        for s in stmts {
            if let Flow::Return(v, p) = self.stmt(s)? {
                return Ok(Flow::Return(v, p));
            }
        }
        Ok(Flow::Normal)
    }

    fn condition(&mut self, cond: &Expr) -> EvalResult<bool> {
        let v = self.expr(cond)?;
        v.truthy().ok_or_else(|| type_error(cond.pos, format!("condition must be bool, found {}", v.dtype())))
    }

    fn stmt(&mut self, stmt: &Stmt) -> EvalResult<Flow> {
        self.tick()?;
        match &stmt.kind {
            StmtKind::Assign { name, value } => {
                let v = self.expr(value)?;
                self.assign(name, v, stmt.pos)?;
                Ok(Flow::Normal)
            }
            StmtKind::If { cond, then, otherwise } => {
                if self.condition(cond)? {
                    self.block(then)
                } else {
                    match otherwise {
                        None => Ok(Flow::Normal),
                        Some(Else::Block(b)) => self.block(b),
                        Some(Else::If(inner)) => self.stmt(inner),
                    }
                }
            }
            StmtKind::While { cond, body } => {
                let mut first = true;
                loop {
                    // Every iteration past the first costs one unit, so empty loops still terminate.
                    if !first {
                        self.tick()?;
                    }
                    first = false;
                    if !self.condition(cond)? {
                        return Ok(Flow::Normal);
                    }
                    if let Flow::Return(v, p) = self.block(body)? {
                        return Ok(Flow::Return(v, p));
                    }
                }
            }
            StmtKind::Return(e) => {
                let v = self.expr(e)?;
                Ok(Flow::Return(v, e.pos))
            }
            StmtKind::Expr(e) => {
                self.expr(e)?;
                Ok(Flow::Normal)
            }
        }
    }

    fn assign(&mut self, name: &str, v: Value, pos: Pos) -> EvalResult<()> {
        if let Some(&dtype) = self.output_types.get(name) {
            if v.dtype() != dtype {
                return Err(type_error(pos, format!("output `{name}` is {dtype}, assigned {}", v.dtype())));
            }
            self.outputs.insert(name.to_string(), v);
        } else if self.inputs.contains_key(name) {
            return Err(type_error(pos, format!("input `{name}` is read-only")));
        } else {
            self.locals.insert(name.to_string(), v);
        }
        Ok(())
    }

    fn lookup(&self, name: &str, pos: Pos) -> EvalResult<Value> {
        self.locals
            .get(name)
            .or_else(|| self.outputs.get(name))
            .or_else(|| self.inputs.get(name))
            .cloned()
            .ok_or_else(|| runtime(RuntimeErrorKind::UndefinedName, pos, format!("`{name}` is not defined")))
    }

    fn expr(&mut self, expr: &Expr) -> EvalResult<Value> {
        let pos = expr.pos;
        Ok(match &expr.kind {
            ExprKind::Int(i) => Value::Int(*i),
            ExprKind::Float(x) => Value::Float(*x),
            ExprKind::Str(s) => Value::Str(s.clone()),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::Ident(name) => self.lookup(name, pos)?,
            ExprKind::List(items) => Value::List(items.iter().map(|e| self.expr(e)).collect::<EvalResult<_>>()?),
            ExprKind::Map(entries) => {
                let mut m = BTreeMap::new();
                for (k, e) in entries {
                    let v = self.expr(e)?;
                    m.insert(k.clone(), v);
                }
                Value::Map(m)
            }
            ExprKind::Unary { op, operand } => {
                let v = self.expr(operand)?;
                match (op, v) {
                    (UnaryOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    (UnaryOp::Neg, Value::Int(i)) => {
                        Value::Int(i.checked_neg().ok_or_else(|| type_error(pos, "integer overflow"))?)
                    }
                    (UnaryOp::Neg, Value::Float(x)) => Value::Float(-x),
                    (op, v) => return Err(type_error(pos, format!("cannot apply {op:?} to {}", v.dtype()))),
                }
            }
            ExprKind::Binary { op: BinaryOp::And, lhs, rhs } => {
                Value::Bool(self.condition(lhs)? && self.condition(rhs)?)
            }
            ExprKind::Binary { op: BinaryOp::Or, lhs, rhs } => {
                Value::Bool(self.condition(lhs)? || self.condition(rhs)?)
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let a = self.expr(lhs)?;
                let b = self.expr(rhs)?;
                binary(*op, a, b, pos)?
            }
            ExprKind::Index { target, index } => {
                let t = self.expr(target)?;
                let i = self.expr(index)?;
                index_value(t, i, pos)?
            }
            ExprKind::Call { callee, args } => {
                let ExprKind::Ident(name) = &callee.kind else {
                    return Err(type_error(pos, "only builtin functions can be called"));
                };
                let args = args.iter().map(|a| self.expr(a)).collect::<EvalResult<Vec<_>>>()?;
                self.builtin(name, args, pos)?
            }
        })
    }

    fn builtin(&mut self, name: &str, args: Vec<Value>, pos: Pos) -> EvalResult<Value> {
        let arity = |n: usize| -> EvalResult<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(type_error(pos, format!("`{name}` takes {n} argument(s), got {}", args.len())))
            }
        };
        let mut args_iter = args.clone().into_iter();
        let mut arg = || args_iter.next().unwrap();
        match name {
            "log" => {
                arity(2)?;
                let Value::Str(level) = arg() else { return Err(type_error(pos, "log level must be a string")) };
                let msg = arg().to_string();
                self.host.log(&level, &msg);
                Ok(Value::Bool(true))
            }
            "wait" => {
                arity(1)?;
                match arg() {
                    Value::Int(ms) if ms >= 0 => Ok(Value::Bool(self.host.wait(ms as u64))),
                    other => Err(type_error(pos, format!("wait needs a non-negative int, found {other}"))),
                }
            }
            "preempted" => {
                arity(0)?;
                Ok(Value::Bool(self.host.preempted()))
            }
            "get_global" => {
                arity(1)?;
                let Value::Str(key) = arg() else { return Err(type_error(pos, "global name must be a string")) };
                self.host.get_global(&key).ok_or_else(|| {
                    runtime(RuntimeErrorKind::UndefinedName, pos, format!("global `{key}` is not defined"))
                })
            }
            "set_global" => {
                arity(2)?;
                let Value::Str(key) = arg() else { return Err(type_error(pos, "global name must be a string")) };
                self.host.set_global(&key, arg());
                Ok(Value::Bool(true))
            }
            "len" => {
                arity(1)?;
                match arg() {
                    Value::List(l) => Ok(Value::Int(l.len() as i64)),
                    Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
                    Value::Map(m) => Ok(Value::Int(m.len() as i64)),
                    other => Err(type_error(pos, format!("len of {}", other.dtype()))),
                }
            }
            "str" => {
                arity(1)?;
                Ok(Value::Str(arg().to_string()))
            }
            "int" => {
                arity(1)?;
                match arg() {
                    Value::Int(i) => Ok(Value::Int(i)),
                    Value::Float(x) if x.is_finite() && x.abs() < 9.2e18 => Ok(Value::Int(x.trunc() as i64)),
                    Value::Bool(b) => Ok(Value::Int(b as i64)),
                    Value::Str(s) => s
                        .trim()
                        .parse::<i64>()
                        .map(Value::Int)
                        .map_err(|_| type_error(pos, format!("cannot convert {s:?} to int"))),
                    other => Err(type_error(pos, format!("cannot convert {other} to int"))),
                }
            }
            "float" => {
                arity(1)?;
                match arg() {
                    Value::Int(i) => Ok(Value::Float(i as f64)),
                    Value::Float(x) => Ok(Value::Float(x)),
                    Value::Str(s) => s
                        .trim()
                        .parse::<f64>()
                        .map(Value::Float)
                        .map_err(|_| type_error(pos, format!("cannot convert {s:?} to float"))),
                    other => Err(type_error(pos, format!("cannot convert {other} to float"))),
                }
            }
            "rand" => {
                arity(0)?;
                Ok(Value::Float(self.rng.gen::<f64>()))
            }
            "call" => {
                arity(2)?;
                let Value::Str(service) = arg() else { return Err(type_error(pos, "service name must be a string")) };
                let payload = arg();
                if !matches!(payload, Value::Map(_)) {
                    return Err(type_error(pos, "call arguments must be a map"));
                }
                self.host.call(&service, &payload).map_err(|e| type_error(pos, format!("call `{service}`: {e}")))
            }
            other => Err(runtime(RuntimeErrorKind::UndefinedName, pos, format!("unknown function `{other}`"))),
        }
    }
}

fn binary(op: BinaryOp, a: Value, b: Value, pos: Pos) -> EvalResult<Value> {
    use Value::*;
    let overflow = || type_error(pos, "integer overflow");
    Ok(match (op, a, b) {
        (BinaryOp::Eq, a, b) => Bool(a == b),
        (BinaryOp::Ne, a, b) => Bool(a != b),
        (BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge, a, b) => {
            let ord = match (&a, &b) {
                (Int(x), Int(y)) => x.partial_cmp(y),
                (Float(x), Float(y)) => x.partial_cmp(y),
                (Str(x), Str(y)) => x.partial_cmp(y),
                _ => {
                    return Err(type_error(pos, format!("cannot compare {} with {}", a.dtype(), b.dtype())));
                }
            };
            let Some(ord) = ord else { return Ok(Bool(false)) };
            Bool(match op {
                BinaryOp::Lt => ord.is_lt(),
                BinaryOp::Le => ord.is_le(),
                BinaryOp::Gt => ord.is_gt(),
                _ => ord.is_ge(),
            })
        }
        (BinaryOp::Add, Int(x), Int(y)) => Int(x.checked_add(y).ok_or_else(overflow)?),
        (BinaryOp::Add, Float(x), Float(y)) => Float(x + y),
        (BinaryOp::Add, Str(x), Str(y)) => Str(x + &y),
        (BinaryOp::Add, List(mut x), List(y)) => {
            x.extend(y);
            List(x)
        }
        (BinaryOp::Sub, Int(x), Int(y)) => Int(x.checked_sub(y).ok_or_else(overflow)?),
        (BinaryOp::Sub, Float(x), Float(y)) => Float(x - y),
        (BinaryOp::Mul, Int(x), Int(y)) => Int(x.checked_mul(y).ok_or_else(overflow)?),
        (BinaryOp::Mul, Float(x), Float(y)) => Float(x * y),
        (BinaryOp::Div | BinaryOp::Rem, Int(_), Int(0)) => {
            return Err(runtime(RuntimeErrorKind::DivisionByZero, pos, "division by zero"));
        }
        (BinaryOp::Div | BinaryOp::Rem, Float(_), Float(y)) if y == 0.0 => {
            return Err(runtime(RuntimeErrorKind::DivisionByZero, pos, "division by zero"));
        }
        (BinaryOp::Div, Int(x), Int(y)) => Int(x.checked_div(y).ok_or_else(overflow)?),
        (BinaryOp::Div, Float(x), Float(y)) => Float(x / y),
        (BinaryOp::Rem, Int(x), Int(y)) => Int(x.checked_rem(y).ok_or_else(overflow)?),
        (BinaryOp::Rem, Float(x), Float(y)) => Float(x % y),
        (op, a, b) => {
            return Err(type_error(pos, format!("cannot apply `{}` to {} and {}", op.symbol(), a.dtype(), b.dtype())));
        }
    })
}

fn index_value(target: Value, index: Value, pos: Pos) -> EvalResult<Value> {
    let out_of_range = |what: String| runtime(RuntimeErrorKind::IndexOutOfRange, pos, what);
    match (target, index) {
        (Value::List(items), Value::Int(i)) => usize::try_from(i)
            .ok()
            .and_then(|i| items.get(i).cloned())
            .ok_or_else(|| out_of_range(format!("index {i} out of range for list of {}", items.len()))),
        (Value::Str(s), Value::Int(i)) => usize::try_from(i)
            .ok()
            .and_then(|i| s.chars().nth(i))
            .map(|c| Value::Str(c.to_string()))
            .ok_or_else(|| out_of_range(format!("index {i} out of range for string"))),
        (Value::Map(m), Value::Str(k)) => m.get(&k).cloned().ok_or_else(|| out_of_range(format!("no key {k:?}"))),
        (t, i) => Err(type_error(pos, format!("cannot index {} with {}", t.dtype(), i.dtype()))),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse;
    use super::*;

    fn run(src: &str, inputs: &[(&str, Value)], outputs: &[(&str, Value)]) -> Result<ScriptResult, ScriptFailure> {
        run_budget(src, inputs, outputs, DEFAULT_STEP_BUDGET)
    }

    fn run_budget(
        src: &str,
        inputs: &[(&str, Value)],
        outputs: &[(&str, Value)],
        budget: u64,
    ) -> Result<ScriptResult, ScriptFailure> {
        let program = parse(src).unwrap();
        let inputs: ValueMap = inputs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let outs: ValueMap = outputs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let types = outs.iter().map(|(k, v)| (k.clone(), v.dtype())).collect();
        let host = DetachedHost::default();
        evaluate(&program, ScriptContext {
            inputs: &inputs,
            outputs: outs,
            output_types: types,
            host: &host,
            step_budget: budget,
            rng_seed: 7,
        })
    }

    fn kind(f: ScriptFailure) -> Option<RuntimeErrorKind> {
        match f.error {
            EvalError::Runtime { kind, .. } => Some(kind),
            EvalError::BudgetExhausted { .. } | EvalError::NoOutcome => None,
        }
    }

    #[test]
    fn plain_return_keeps_defaults() {
        let r = run("return \"success\"", &[], &[("o", Value::Int(4))]).unwrap();
        assert_eq!(r.outcome_name, "success");
        assert_eq!(r.outputs["o"], Value::Int(4));
        assert_eq!(r.statements_executed, 1);
    }

    #[test]
    fn arithmetic_into_output() {
        let r = run(
            "out_count = in_a + in_b\nreturn \"ok\"",
            &[("in_a", Value::Int(2)), ("in_b", Value::Int(3))],
            &[("out_count", Value::Int(0))],
        )
        .unwrap();
        assert_eq!(r.outputs["out_count"], Value::Int(5));
    }

    #[test]
    fn empty_infinite_loop_exhausts_budget() {
        let f = run_budget("while true { }", &[], &[], 10_000).unwrap_err();
        assert_eq!(f.error, EvalError::BudgetExhausted { budget: 10_000 });
        assert!(f.statements_executed <= 10_000);
    }

    #[test]
    fn division_by_zero() {
        assert_eq!(kind(run("x = 10 / 0", &[], &[]).unwrap_err()), Some(RuntimeErrorKind::DivisionByZero));
    }

    #[test]
    fn error_kinds() {
        assert_eq!(kind(run("x = y", &[], &[]).unwrap_err()), Some(RuntimeErrorKind::UndefinedName));
        assert_eq!(kind(run("x = [1][3]", &[], &[]).unwrap_err()), Some(RuntimeErrorKind::IndexOutOfRange));
        assert_eq!(kind(run("x = 1 + 1.0", &[], &[]).unwrap_err()), Some(RuntimeErrorKind::TypeError));
        assert_eq!(
            kind(run("o = 1.5\nreturn \"x\"", &[], &[("o", Value::Int(0))]).unwrap_err()),
            Some(RuntimeErrorKind::TypeError)
        );
        assert_eq!(kind(run("a = 1\nreturn \"x\"", &[("a", Value::Int(0))], &[]).unwrap_err()), Some(RuntimeErrorKind::TypeError));
    }

    #[test]
    fn int_float_equality_is_explicit() {
        let r = run("o = 1 == 1.0 or float(1) != 1.0\nreturn \"x\"", &[], &[("o", Value::Bool(true))]).unwrap();
        assert_eq!(r.outputs["o"], Value::Bool(false));
    }

    #[test]
    fn loops_and_collections() {
        let src = "i = 0\nacc = []\nwhile i < 3 { acc = acc + [i * 2]\n i = i + 1 }\nm = #{\"k\": acc}\nout = len(m[\"k\"]) + acc[2]\nreturn \"done\"";
        let r = run(src, &[], &[("out", Value::Int(0))]).unwrap();
        assert_eq!(r.outputs["out"], Value::Int(7));
    }

    #[test]
    fn rand_is_seeded() {
        let a = run("o = rand()\nreturn \"x\"", &[], &[("o", Value::Float(0.0))]).unwrap();
        let b = run("o = rand()\nreturn \"x\"", &[], &[("o", Value::Float(0.0))]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn globals_round_trip_through_host() {
        let program = parse("set_global(\"g\", get_global(\"g\") + 1)\nreturn \"x\"").unwrap();
        let host = DetachedHost::with_globals([("g".to_string(), Value::Int(1))].into());
        let inputs = ValueMap::new();
        evaluate(&program, ScriptContext {
            inputs: &inputs,
            outputs: ValueMap::new(),
            output_types: BTreeMap::new(),
            host: &host,
            step_budget: 100,
            rng_seed: 0,
        })
        .unwrap();
        assert_eq!(host.globals()["g"], Value::Int(2));
    }

    #[test]
    fn missing_return_is_an_error() {
        assert_eq!(run("x = 1", &[], &[]).unwrap_err().error, EvalError::NoOutcome);
    }
}
