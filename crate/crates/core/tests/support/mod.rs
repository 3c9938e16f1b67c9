#![allow(dead_code)]

pub mod gen;
pub mod reference;

use std::time::Duration;

use orc::engine::{Engine, EngineConfig, HistoryEntry, Status};
use orc::model::StateMachineDef;

pub const SETTLE: Duration = Duration::from_secs(60);

/// Runs `m` to completion and returns the final status with the full history.
pub fn run(m: &StateMachineDef, config: EngineConfig) -> (Status, Vec<HistoryEntry>) {
    let e = Engine::new(m.clone(), config);
    let status = e.run(SETTLE).expect("machine starts");
    assert!(status.is_terminal(), "run did not finish: {status:?}");
    (status, e.history())
}

/// Machine-readable event lines, as printed by `orc run`.
pub fn lines(history: &[HistoryEntry]) -> String {
    history.iter().map(|h| h.line() + "\n").collect()
}

/// Semantics-profile machine number `seed`: at most 30 states, depth up to 5.
pub fn semantics_machine(seed: u64) -> StateMachineDef {
    let n = 1 + (seed % 29) as usize * 7 % 29;
    orc::model::GeneratorProfile::Semantics.generate(seed, n, 1 + (seed % 5) as usize)
}

/// Runs a semantics machine on the engine and on the reference; describes the first disagreement.
pub fn agree_with_reference(m: &StateMachineDef) -> Result<(), String> {
    let expected = reference::interpret(m);
    let (status, history) = run(m, EngineConfig::default());
    let got = match &status {
        Status::Finished(o) => o.clone(),
        Status::Aborted(_) => orc::model::ABORTED.to_string(),
        s => return Err(format!("unexpected status {s:?}")),
    };
    if got != expected.outcome {
        return Err(format!("final outcome {got}, reference {}", expected.outcome));
    }
    let projected = reference::project(&history);
    for (path, evs) in &expected.events {
        if projected.get(path) != Some(evs) {
            return Err(format!("{path}: engine {:?}, reference {evs:?}", projected.get(path)));
        }
    }
    if projected.len() != expected.events.len() {
        return Err(format!("engine visited {} paths, reference {}", projected.len(), expected.events.len()));
    }
    Ok(())
}
