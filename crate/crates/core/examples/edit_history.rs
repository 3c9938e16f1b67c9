//! Edits a machine through an undoable log, then amends a paused engine so a later
//! state runs a new script.

use std::time::Duration;

use orc::engine::{Engine, EngineConfig, Status, StepCommand};
use orc::model::{Edit, EditLog, StateDef, StateMachineDef};
use orc::script::Script;

const T: Duration = Duration::from_secs(10);

fn names(m: &StateMachineDef) -> Vec<String> {
    m.states().map(|s| format!("{}({})", s.id.as_str(), s.name)).collect()
}

fn main() {
    let mut m = StateMachineDef::new(
        "edits",
        StateDef::sequence("root", vec![StateDef::execution("a", "return \"success\""), StateDef::execution("b", "return \"success\"")]),
    );
    let mut log = EditLog::new();

    let e = Edit::rename(&m, "a", "first").unwrap();
    log.apply(&mut m, e).unwrap();
    let e = Edit::add_state(&m, "root", StateDef::execution("c", "return \"success\"")).unwrap();
    log.apply(&mut m, e).unwrap();
    println!("edited:  {:?}", names(&m));
    log.undo(&mut m).unwrap();
    log.undo(&mut m).unwrap();
    println!("undone:  {:?}", names(&m));
    log.redo(&mut m).unwrap();
    println!("redone:  {:?} (cursor {} of {})", names(&m), log.cursor(), log.len());

    let engine = Engine::new(m, EngineConfig::default());
    engine.start_paused().unwrap();
    engine.wait_settled(T);
    engine.step(StepCommand::Into).unwrap();
    engine.wait_settled(T);
    println!("paused {}", engine.position().unwrap());

    let live = engine.machine();
    let amend = Edit::set_script(&live, "b", Script::forward("log(\"info\", \"patched\")\nreturn \"success\"")).unwrap();
    engine.amend(vec![amend]).unwrap();
    // Active states are refused.
    let busy = Edit::rename(&engine.machine(), "root", "top").unwrap();
    println!("amend root: {}", engine.amend(vec![busy]).unwrap_err());
    println!("b now runs: {:?}", engine.machine().find("b").unwrap().script.as_ref().unwrap().forward_source());
    engine.resume().unwrap();
    engine.wait_for(T, Status::is_terminal);
    for h in engine.history() {
        println!("{}", h.line());
    }
}
