//! Generates a large synthetic machine, validates it, saves it and runs it.

use std::time::{Duration, Instant};

use orc::engine::{Engine, EngineConfig};
use orc::model::{machine_depth, validate, GeneratorProfile};
use orc::storage;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let m = GeneratorProfile::Scale.generate(seed, 750, 8);
    println!("{} states, {} transitions, depth {}", m.state_count(), m.transition_count(), machine_depth(&m));

    let t = Instant::now();
    let report = validate(&m);
    println!("validated in {:?}: {} findings, {} errors", t.elapsed(), report.findings.len(), report.errors().count());

    let dir = tempfile::tempdir().unwrap();
    let path = storage::save(&m, dir.path()).unwrap();
    println!("manifest: {} bytes", std::fs::metadata(&path).unwrap().len());

    let t = Instant::now();
    let engine = Engine::new(m, EngineConfig::default());
    let status = engine.run(Duration::from_secs(60)).unwrap();
    println!("{status} after {} events in {:?}", engine.last_seq(), t.elapsed());
}
