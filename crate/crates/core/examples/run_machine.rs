//! Builds a two-step pipeline with data flows, runs it and prints the history.

use std::time::Duration;

use orc::engine::{Engine, EngineConfig};
use orc::model::{DataFlow, DataPort, PortRef, StateDef, StateMachineDef};
use orc::value::Value;

fn main() {
    let double = StateDef::execution("double", "y = x * 2\nreturn \"success\"")
        .with_input(DataPort::new("x", Value::Int(0)))
        .with_output(DataPort::new("y", Value::Int(0)));
    let report = StateDef::execution("report", "log(\"info\", \"got \" + str(v))\nreturn \"success\"")
        .with_input(DataPort::new("v", Value::Int(0)));

    let root = StateDef::sequence("pipeline", vec![double, report])
        .with_input(DataPort::new("seed", Value::Int(21)))
        .with_flow(DataFlow::new(PortRef::new("pipeline", "seed"), PortRef::new("double", "x")))
        .with_flow(DataFlow::new(PortRef::new("double", "y"), PortRef::new("report", "v")));
    let machine = StateMachineDef::new("pipeline", root);

    let engine = Engine::new(machine, EngineConfig::default());
    let status = engine.run(Duration::from_secs(10)).expect("start");
    for h in engine.history() {
        println!("{}", h.line());
    }
    println!("status: {status}");
}
