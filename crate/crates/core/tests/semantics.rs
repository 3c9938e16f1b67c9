mod support;

use orc::engine::{EngineConfig, Status};
use orc::model::{OutcomeId, StateDef, StateKind, StateMachineDef, Transition};

#[test]
fn engine_agrees_with_reference() {
    for seed in 0..150 {
        let m = support::semantics_machine(seed);
        if let Err(e) = support::agree_with_reference(&m) {
            panic!("seed {seed}: {e}");
        }
    }
}

fn exec(id: &str, tail: &str) -> StateDef {
    StateDef::execution(id, tail)
}

#[test]
fn reference_matches_hand_traces() {
    // Fast finisher against a sleeper: the sleeper is preempted, the concurrency mirrors `fast`.
    let conc = StateDef::concurrency(
        "P",
        StateKind::PreemptiveConcurrency,
        vec![exec("slow", "wait(60000)\nreturn \"success\""), exec("fast", "return \"success\"")],
    );
    let m = StateMachineDef::new("m", StateDef::sequence("R", vec![conc]));
    let r = support::reference::interpret(&m);
    assert_eq!(r.outcome, "success");
    let slow = &r.events["R/P/slow"];
    assert_eq!(slow[1], support::reference::Ev::Preempted);
    assert!(matches!(&slow[2], support::reference::Ev::Exited(o, _) if o == "preempted"));
    support::agree_with_reference(&m).unwrap();

    // Unconnected `aborted` bubbles through two hierarchies.
    let inner = StateDef::sequence("H", vec![exec("x", "return \"aborted\"")]);
    let m = StateMachineDef::new("m", StateDef::sequence("R", vec![inner]));
    assert_eq!(support::reference::interpret(&m).outcome, "aborted");
    let (status, _) = support::run(&m, EngineConfig::default());
    assert!(matches!(status, Status::Aborted(_)));

    // Barrier: aborted dominates preempted.
    let barrier = StateDef::concurrency(
        "B",
        StateKind::BarrierConcurrency,
        vec![exec("a", "return \"preempted\""), exec("b", "return \"aborted\""), exec("c", "return \"success\"")],
    );
    let mut root = StateDef::sequence("R", vec![barrier]);
    root.transitions.push(Transition::to_parent("B", OutcomeId::ABORTED, OutcomeId(0)));
    let m = StateMachineDef::new("m", root);
    let r = support::reference::interpret(&m);
    assert!(matches!(r.events["R/B"].last(), Some(support::reference::Ev::Exited(o, _)) if o == "aborted"));
    support::agree_with_reference(&m).unwrap();
}
