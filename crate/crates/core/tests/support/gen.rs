//! Proptest strategies shared by the property tests and the acceptance run.

use proptest::collection::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value as Json};

use orc::model::{
    Edit, EditLog, GeneratorProfile, OutcomeId, PortDirection, StateDef, StateKind, StateMachineDef, Transition,
};
use orc::remote::{Ack, ClientFrame, CommandMessage, EventKind, EventMessage, Handshake, Role, ServerFrame, Verb};
use orc::script::ast::{BinaryOp, Else, Expr, ExprKind, Pos, Program, Stmt, StmtKind, UnaryOp};
use orc::script::Script;
use orc::value::Value;

// ---- scripts

const KEYWORDS: &[&str] = &["if", "else", "while", "return", "true", "false", "and", "or", "not"];

fn ident() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,6}".prop_filter("keyword", |s| !KEYWORDS.contains(&s.as_str()))
}

fn e(kind: ExprKind) -> Expr {
    Expr::new(kind, Pos::default())
}

fn s(kind: StmtKind) -> Stmt {
    Stmt { kind, pos: Pos::default() }
}

const BINARY: [BinaryOp; 13] = [
    BinaryOp::Or,
    BinaryOp::And,
    BinaryOp::Eq,
    BinaryOp::Ne,
    BinaryOp::Lt,
    BinaryOp::Le,
    BinaryOp::Gt,
    BinaryOp::Ge,
    BinaryOp::Add,
    BinaryOp::Sub,
    BinaryOp::Mul,
    BinaryOp::Div,
    BinaryOp::Rem,
];

pub fn expr() -> BoxedStrategy<Expr> {
    let leaf = prop_oneof![
        (0..i64::MAX).prop_map(|n| e(ExprKind::Int(n))),
        prop_oneof![Just(0.0), Just(0.1), Just(1e300), 0.0..1e6f64, any::<f64>().prop_map(f64::abs)]
            .prop_filter("finite", |x: &f64| x.is_finite())
            .prop_map(|x| e(ExprKind::Float(x))),
        any::<String>().prop_map(|t| e(ExprKind::Str(t))),
        any::<bool>().prop_map(|b| e(ExprKind::Bool(b))),
        ident().prop_map(|n| e(ExprKind::Ident(n))),
    ];
    leaf.prop_recursive(4, 48, 4, |inner| {
        let boxed = |x: Expr| Box::new(x);
        prop_oneof![
            vec(inner.clone(), 0..4).prop_map(|xs| e(ExprKind::List(xs))),
            vec((any::<String>(), inner.clone()), 0..3).prop_map(|kv| e(ExprKind::Map(kv))),
            (any::<bool>(), inner.clone()).prop_map(move |(neg, x)| {
                let op = if neg { UnaryOp::Neg } else { UnaryOp::Not };
                e(ExprKind::Unary { op, operand: boxed(x) })
            }),
            (0..BINARY.len(), inner.clone(), inner.clone()).prop_map(move |(i, l, r)| {
                e(ExprKind::Binary { op: BINARY[i], lhs: boxed(l), rhs: boxed(r) })
            }),
            (inner.clone(), inner.clone())
                .prop_map(move |(t, i)| e(ExprKind::Index { target: boxed(t), index: boxed(i) })),
            (ident(), vec(inner, 0..3)).prop_map(move |(f, args)| {
                e(ExprKind::Call { callee: boxed(e(ExprKind::Ident(f))), args })
            }),
        ]
    })
    .boxed()
}

fn call_expr() -> impl Strategy<Value = Expr> {
    (ident(), vec(expr(), 0..3)).prop_map(|(f, args)| e(ExprKind::Call { callee: Box::new(e(ExprKind::Ident(f))), args }))
}

pub fn stmt() -> BoxedStrategy<Stmt> {
    let leaf = prop_oneof![
        (ident(), expr()).prop_map(|(name, value)| s(StmtKind::Assign { name, value })),
        expr().prop_map(|x| s(StmtKind::Return(x))),
        call_expr().prop_map(|x| s(StmtKind::Expr(x))),
    ];
    leaf.prop_recursive(3, 24, 3, |inner| {
        let block = vec(inner.clone(), 0..3);
        let otherwise = prop_oneof![
            Just(None),
            vec(inner.clone(), 0..3).prop_map(|b| Some(Else::Block(b))),
            (expr(), vec(inner.clone(), 0..2)).prop_map(|(cond, then)| {
                Some(Else::If(Box::new(s(StmtKind::If { cond, then, otherwise: None }))))
            }),
        ];
        prop_oneof![
            (expr(), block.clone(), otherwise).prop_map(|(cond, then, otherwise)| s(StmtKind::If { cond, then, otherwise })),
            (expr(), block).prop_map(|(cond, body)| s(StmtKind::While { cond, body })),
        ]
    })
    .boxed()
}

pub fn program() -> impl Strategy<Value = Program> {
    vec(stmt(), 0..6).prop_map(|stmts| Program { stmts })
}

// ---- protocol

fn json() -> impl Strategy<Value = Json> {
    let leaf = prop_oneof![
        Just(Json::Null),
        any::<bool>().prop_map(Json::from),
        any::<i64>().prop_map(Json::from),
        any::<u64>().prop_map(Json::from),
        any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Json::from),
        any::<String>().prop_map(Json::from),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            vec(inner.clone(), 0..4).prop_map(Json::Array),
            vec((".{0,8}", inner), 0..4).prop_map(|kv| Json::Object(kv.into_iter().collect())),
        ]
    })
}

fn json_map() -> impl Strategy<Value = Map<String, Json>> {
    vec((".{0,8}", json()), 0..4).prop_map(|kv| kv.into_iter().collect())
}

const KINDS: [EventKind; 7] = [
    EventKind::Status,
    EventKind::Entered,
    EventKind::Exited,
    EventKind::SteppedBack,
    EventKind::Ports,
    EventKind::Log,
    EventKind::MachineDigest,
];

pub fn client_frame() -> impl Strategy<Value = ClientFrame> {
    prop_oneof![
        (any::<bool>(), proptest::option::of(any::<u64>())).prop_map(|(c, resume_from)| {
            let role = if c { Role::Controller } else { Role::Observer };
            ClientFrame::Handshake(Handshake { role, resume_from })
        }),
        (any::<u64>(), 0..Verb::ALL.len(), json_map())
            .prop_map(|(req_id, v, args)| ClientFrame::Command(CommandMessage { req_id, verb: Verb::ALL[v], args })),
    ]
}

pub fn server_frame() -> impl Strategy<Value = ServerFrame> {
    let text = proptest::option::of(".{0,12}");
    prop_oneof![
        (any::<u64>(), any::<bool>(), text.clone(), text, proptest::option::of(json())).prop_map(
            |(req_id, ok, error, message, result)| ServerFrame::Ack(Ack { req_id, ok, error, message, result })
        ),
        (any::<u64>(), 0..KINDS.len(), proptest::option::of(vec("[A-Za-z0-9_]{1,6}", 0..4)), json_map())
            .prop_map(|(seq, k, path, payload)| ServerFrame::Event(EventMessage { seq, kind: KINDS[k], path, payload })),
    ]
}

// ---- machines

const PROFILES: [GeneratorProfile; 4] =
    [GeneratorProfile::Scale, GeneratorProfile::Semantics, GeneratorProfile::Sequential, GeneratorProfile::PureScript];

pub fn machine() -> impl Strategy<Value = StateMachineDef> {
    (0..PROFILES.len(), any::<u64>(), 1..60usize, 1..6usize).prop_map(|(p, seed, n, d)| PROFILES[p].generate(seed, n, d))
}

// ---- edit walks

#[derive(Clone, Debug)]
pub enum Op {
    Edit(u64),
    Undo,
    Redo,
}

pub fn walk() -> impl Strategy<Value = (u64, Vec<Op>)> {
    let op = prop_oneof![6 => any::<u64>().prop_map(Op::Edit), 2 => Just(Op::Undo), 2 => Just(Op::Redo)];
    (any::<u64>(), vec(op, 1..60))
}

fn pick<'a>(rng: &mut ChaCha8Rng, states: &[&'a StateDef]) -> Option<&'a StateDef> {
    (!states.is_empty()).then(|| states[rng.gen_range(0..states.len())])
}

/// A random edit against `m`; `None` when the drawn kind does not apply.
pub fn random_edit(m: &StateMachineDef, r: u64) -> Option<Edit> {
    let mut rng = ChaCha8Rng::seed_from_u64(r);
    let all: Vec<&StateDef> = m.states().collect();
    let composites: Vec<&StateDef> = all.iter().copied().filter(|s| s.kind.is_composite()).collect();
    let hierarchies: Vec<&StateDef> =
        composites.iter().copied().filter(|s| s.kind == StateKind::Hierarchy && !s.children.is_empty()).collect();
    let execs: Vec<&StateDef> = all.iter().copied().filter(|s| s.kind == StateKind::Execution).collect();
    let edit = match rng.gen_range(0..8) {
        0 => Edit::rename(m, pick(&mut rng, &all)?.id.clone(), format!("n{}", rng.gen::<u16>())),
        1 => {
            let id = format!("x{}", rng.gen::<u32>());
            if m.find(&id).is_some() {
                return None;
            }
            Edit::add_state(m, pick(&mut rng, &composites)?.id.clone(), StateDef::execution(id.as_str(), "return \"success\""))
        }
        2 => {
            let victim = pick(&mut rng, &all)?;
            (victim.id != m.root.id).then_some(())?;
            Edit::remove_state(m, victim.id.as_str())
        }
        3 => {
            let src = format!("x = {}\nreturn \"success\"", rng.gen::<u16>());
            Edit::set_script(m, pick(&mut rng, &execs)?.id.clone(), Script::forward(src))
        }
        4 => {
            let h = pick(&mut rng, &hierarchies)?;
            let child = &h.children[rng.gen_range(0..h.children.len())];
            let outcome = [OutcomeId(0), OutcomeId::ABORTED, OutcomeId::PREEMPTED][rng.gen_range(0..3)];
            let t = if rng.gen_bool(0.5) {
                Transition::to_parent(child.id.clone(), outcome, OutcomeId(0))
            } else {
                let to = &h.children[rng.gen_range(0..h.children.len())];
                Transition::to_state(child.id.clone(), outcome, to.id.clone())
            };
            Edit::rewire(m, h.id.clone(), t)
        }
        5 => {
            let st = pick(&mut rng, &all)?;
            let dir = if rng.gen_bool(0.5) { PortDirection::Input } else { PortDirection::Output };
            let port = orc::model::DataPort::new(format!("p{}", rng.gen_range(0..3)), Value::Int(rng.gen_range(0..100)));
            Edit::set_port(m, st.id.clone(), dir, port)
        }
        6 => {
            let h = pick(&mut rng, &hierarchies)?;
            let start = h.children[rng.gen_range(0..h.children.len())].id.clone();
            Edit::set_start_child(m, h.id.clone(), Some(start))
        }
        _ => {
            // Two edits built against the same machine, applied as one.
            let a = random_edit(m, rng.gen())?;
            let b = random_edit(m, rng.gen())?;
            Ok(Edit::Batch(vec![a, b]))
        }
    };
    edit.ok()
}

/// Performs the walk and checks every intermediate machine against replaying the log's
/// first `cursor` edits onto a fresh copy. Returns how many edits were applied.
pub fn check_walk(seed: u64, ops: &[Op]) -> Result<usize, String> {
    let base = GeneratorProfile::Sequential.generate(seed, 1 + (seed % 12) as usize, 1 + (seed % 3) as usize);
    let mut m = base.clone();
    let mut log = EditLog::new();
    let mut applied = 0;
    for (n, op) in ops.iter().enumerate() {
        let before = m.clone();
        let result = match op {
            Op::Edit(r) => match random_edit(&m, *r) {
                Some(edit) => log.apply(&mut m, edit).map_err(|e| e.to_string()),
                None => Ok(()),
            },
            Op::Undo => log.undo(&mut m).map_err(|e| e.to_string()),
            Op::Redo => log.redo(&mut m).map_err(|e| e.to_string()),
        };
        applied += usize::from(matches!(op, Op::Edit(_)) && result.is_ok() && m != before);
        if result.is_err() && m != before {
            return Err(format!("op {n} {op:?} failed but changed the machine"));
        }
        let mut oracle = base.clone();
        for (i, e) in log.edits()[..log.cursor()].iter().enumerate() {
            e.apply(&mut oracle).map_err(|err| format!("op {n}: replaying edit {i} failed: {err}"))?;
        }
        if oracle != m {
            return Err(format!("op {n} {op:?}: machine differs from replay of {} edits", log.cursor()));
        }
    }
    Ok(applied)
}
