//! Steps through a machine, rewinds with step-back and replays from a chosen state.

use std::time::Duration;

use orc::engine::{Engine, EngineConfig, Status, StepCommand};
use orc::model::{StateDef, StateMachineDef, StatePath};

const T: Duration = Duration::from_secs(10);

fn show(engine: &Engine, what: &str) {
    engine.wait_settled(T);
    let at = engine.position().map(|p| p.to_string()).unwrap_or_else(|| "-".into());
    println!("{what:>6}: {at}  [{}]", engine.status());
}

fn main() {
    // `count` is a global; the backward script undoes the increment.
    let inc = StateDef::execution("inc", "set_global(\"count\", get_global(\"count\") + 1)\nreturn \"success\"")
        .with_backward("set_global(\"count\", get_global(\"count\") - 1)\nreturn \"success\"");
    let check = StateDef::execution("check", "log(\"info\", \"count is \" + str(get_global(\"count\")))\nreturn \"success\"");
    let machine = StateMachineDef::new("steps", StateDef::sequence("root", vec![inc, check]));

    let engine = Engine::new(machine, EngineConfig::default());
    engine.set_global("count", orc::value::Value::Int(0));
    engine.start_paused().unwrap();
    show(&engine, "start");
    engine.step(StepCommand::Into).unwrap();
    show(&engine, "into");
    engine.step(StepCommand::Over).unwrap();
    show(&engine, "over");
    println!("count = {}", engine.get_global("count").unwrap());

    engine.step_back().unwrap();
    show(&engine, "back");
    println!("count = {}", engine.get_global("count").unwrap());

    engine.resume().unwrap();
    let done = engine.wait_for(T, Status::is_terminal);
    println!("finished: {done}, count = {}", engine.get_global("count").unwrap());

    // Run again from the second state only.
    let engine = Engine::new((*engine.machine()).clone(), EngineConfig::default());
    engine.set_global("count", orc::value::Value::Int(40));
    engine.start_from("root/check".parse::<StatePath>().unwrap()).unwrap();
    engine.wait_for(T, Status::is_terminal);
    for h in engine.history() {
        println!("{}", h.line());
    }
}
