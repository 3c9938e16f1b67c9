//! Saves a reusable machine into a library directory, wraps it twice in another
//! machine and resolves both uses from the registry.

use std::time::Duration;

use orc::engine::{Engine, EngineConfig};
use orc::model::{DataFlow, DataPort, LibraryRef, PortRef, StateDef, StateMachineDef};
use orc::storage::{self, LibraryRegistry};
use orc::value::Value;

fn port(name: &str) -> DataPort {
    DataPort::new(name, Value::Int(0))
}

fn increment() -> StateMachineDef {
    let step = StateDef::execution("step", "o = i + 1\nreturn \"success\"").with_input(port("i")).with_output(port("o"));
    let root = StateDef::sequence("main", vec![step])
        .with_input(port("i"))
        .with_output(port("o"))
        .with_flow(DataFlow::new(PortRef::new("main", "i"), PortRef::new("step", "i")))
        .with_flow(DataFlow::new(PortRef::new("step", "o"), PortRef::new("main", "o")));
    StateMachineDef::new("inc", root)
}

fn use_of(id: &str) -> StateDef {
    let r = LibraryRef { library_name: "util/inc".into(), machine_id: "inc".into(), version_req: "^1".into() };
    StateDef::library(id, r).with_input(port("i")).with_output(port("o"))
}

fn main() {
    let libs = tempfile::tempdir().unwrap();
    storage::save(&increment(), &libs.path().join("util/inc")).unwrap();

    let root = StateDef::sequence("top", vec![use_of("first"), use_of("second")])
        .with_input(DataPort::new("start", Value::Int(40)))
        .with_output(port("result"))
        .with_flow(DataFlow::new(PortRef::new("top", "start"), PortRef::new("first", "i")))
        .with_flow(DataFlow::new(PortRef::new("first", "o"), PortRef::new("second", "i")))
        .with_flow(DataFlow::new(PortRef::new("second", "o"), PortRef::new("top", "result")));
    let user = StateMachineDef::new("user", root);

    // Saved machines keep the references; `load` resolves them against the registry.
    let dir = tempfile::tempdir().unwrap();
    let manifest = storage::save(&user, dir.path()).unwrap();
    let registry = LibraryRegistry::new(vec![libs.path().to_path_buf()]);
    for (name, id, version) in registry.entries() {
        println!("library {name} :: {id} {version}");
    }
    let resolved = storage::load(&manifest, &registry).unwrap();
    println!("{} states after resolution", resolved.state_count());

    let engine = Engine::new(resolved, EngineConfig::default());
    println!("status: {}", engine.run(Duration::from_secs(10)).unwrap());
    let last = engine.history().into_iter().last().unwrap();
    println!("result = {}", last.context.outputs["result"]);
}
