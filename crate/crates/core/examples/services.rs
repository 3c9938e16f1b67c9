//! Scripts calling host services and sharing globals.

use std::sync::Arc;
use std::time::Duration;

use orc::engine::{Engine, EngineConfig};
use orc::model::{DataPort, StateDef, StateMachineDef};
use orc::value::Value;

fn main() {
    let ask = StateDef::execution("ask", "r = call(\"square\", #{\"n\": get_global(\"n\")})\nset_global(\"n\", r)\nreturn \"success\"");
    let fail = StateDef::execution("fail", "call(\"missing\", #{})\nreturn \"success\"")
        .with_output(DataPort::new("unused", Value::Int(0)));
    let machine = StateMachineDef::new("svc", StateDef::sequence("root", vec![ask, fail]));

    let engine = Engine::new(machine, EngineConfig::default());
    engine.register_service(
        "square",
        Arc::new(|args: &Value| match args {
            Value::Map(m) => match m.get("n") {
                Some(Value::Int(n)) => Ok(Value::Int(n * n)),
                other => Err(format!("expected an int `n`, got {other:?}")),
            },
            _ => Err("expected a map".into()),
        }),
    );
    engine.set_global("n", Value::Int(12));
    let status = engine.run(Duration::from_secs(10)).unwrap();
    for h in engine.history() {
        println!("{}", h.line());
    }
    // The unknown service raises a script error, so the root ends aborted.
    println!("status: {status}, n = {}", engine.get_global("n").unwrap());
}
