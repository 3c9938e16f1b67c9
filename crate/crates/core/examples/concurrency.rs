//! Preemptive and barrier concurrency side by side.
//!
//! The preemptive state finishes with its fastest child and preempts the rest; the
//! barrier waits for every child and reports the first of its own outcomes.

use std::time::Duration;

use orc::engine::{Engine, EngineConfig};
use orc::model::{StateDef, StateKind, StateMachineDef};

fn race() -> StateDef {
    let fast = StateDef::execution("fast", "return \"success\"");
    // Polls `preempted()` so it stops promptly when the race is lost.
    let slow = StateDef::execution(
        "slow",
        "n = 0\nwhile n < 100 {\n  if preempted() {\n    return \"preempted\"\n  }\n  wait(50)\n  n = n + 1\n}\nreturn \"success\"",
    );
    StateDef::concurrency("race", StateKind::PreemptiveConcurrency, vec![fast, slow])
}

fn barrier() -> StateDef {
    let a = StateDef::execution("a", "wait(20)\nreturn \"success\"");
    let b = StateDef::execution("b", "wait(40)\nreturn \"success\"");
    StateDef::concurrency("both", StateKind::BarrierConcurrency, vec![a, b])
}

fn main() {
    let machine = StateMachineDef::new("conc", StateDef::sequence("root", vec![race(), barrier()]));
    let engine = Engine::new(machine, EngineConfig::default());
    let status = engine.run(Duration::from_secs(10)).unwrap();
    for h in engine.history() {
        println!("{}", h.line());
    }
    println!("status: {status}");
}
