//! Serves an engine over WebSocket and drives it with a controller and an observer.
//! The observer goes through a delay proxy and resumes from the last event it saw
//! after being cut off.

use std::sync::Arc;
use std::time::Duration;

use orc::engine::{Engine, EngineConfig};
use orc::model::{StateDef, StateMachineDef};
use orc::remote::{Client, CommandMessage, DelayProxy, EventKind, Role, Server, ServerConfig, ServerFrame, Verb, SESSION_PATH};

const T: Duration = Duration::from_secs(10);

fn main() {
    let steps = (0..4).map(|i| StateDef::execution(format!("s{i}").as_str(), "wait(100)\nreturn \"success\"")).collect();
    let machine = StateMachineDef::new("remote", StateDef::sequence("root", steps));
    let engine = Arc::new(Engine::new(machine, EngineConfig::default()));
    let server = Server::start(engine.clone(), "127.0.0.1:0", ServerConfig::default()).unwrap();
    println!("serving {}", server.url());

    let proxy = DelayProxy::start(server.local_addr(), Duration::from_millis(50)).unwrap();
    let via_proxy = format!("ws://{}{SESSION_PATH}", proxy.local_addr());
    let mut observer = Client::connect(&via_proxy, Role::Observer, None).unwrap();
    observer.request(&CommandMessage::new(1, Verb::Subscribe), T).unwrap();

    let mut ctl = Client::connect(&server.url(), Role::Controller, None).unwrap();
    let (ack, _) = ctl.request(&CommandMessage::new(1, Verb::Start), T).unwrap();
    println!("start ok={}", ack.ok);

    let mut last = 0;
    let mut dropped = false;
    loop {
        let frame = match observer.recv(T) {
            Ok(Some(f)) => f,
            Ok(None) => panic!("no events"),
            Err(e) => {
                println!("observer lost: {e}; resuming after seq {last}");
                observer = Client::connect(&via_proxy, Role::Observer, Some(last)).unwrap();
                continue;
            }
        };
        let ServerFrame::Event(e) = frame else { continue };
        last = e.seq;
        let path = e.path.as_ref().map(|p| p.join("/")).unwrap_or_default();
        println!("{:>3} {:?} {path} {}", e.seq, e.kind, serde_json::Value::Object(e.payload.clone()));
        if !dropped && e.kind == EventKind::Exited {
            dropped = true;
            proxy.disconnect_all();
        }
        if e.kind == EventKind::Status && (e.payload["status"] == "finished" || e.payload["status"] == "aborted") {
            break;
        }
    }
    ctl.close();
    server.shutdown();
}
