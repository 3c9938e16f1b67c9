mod support;

use std::collections::BTreeMap;

use orc::engine::{EngineConfig, HistoryEntry, HistoryEvent};
use orc::model::{GeneratorProfile, StateKind, StateMachineDef, ABORTED, PREEMPTED};
use orc::remote::{ClientFrame, ServerFrame};
use orc::script::{parse, print_program};
use orc::storage;
use proptest::prelude::*;
use support::gen;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

/// Entered/Exited events nest like brackets along the state tree.
fn check_bracketing(history: &[HistoryEntry]) -> Result<(), String> {
    let mut open: Vec<String> = Vec::new();
    for h in history {
        let p = h.path.to_string();
        match &h.event {
            HistoryEvent::Entered => {
                if let Some(parent) = h.path.parent() {
                    if !open.contains(&parent.to_string()) {
                        return Err(format!("{p} entered outside its parent"));
                    }
                }
                open.push(p);
            }
            HistoryEvent::Exited { .. } => {
                let i = open.iter().position(|o| o == &p).ok_or_else(|| format!("{p} exited without entering"))?;
                if open.iter().any(|o| o.starts_with(&format!("{p}/"))) {
                    return Err(format!("{p} exited before its children"));
                }
                open.remove(i);
            }
            _ if !open.contains(&p) => return Err(format!("{} for inactive {p}", h.event.name())),
            _ => {}
        }
    }
    if open.is_empty() { Ok(()) } else { Err(format!("still open: {open:?}")) }
}

/// Concurrency truths read off a finished history.
fn check_concurrency(m: &StateMachineDef, history: &[HistoryEntry]) -> Result<(), String> {
    let mut exits: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
    let mut preempted: Vec<String> = Vec::new();
    for h in history {
        match &h.event {
            HistoryEvent::Exited { outcome } => exits.entry(h.path.to_string()).or_default().push((h.seq, outcome.clone())),
            HistoryEvent::Preempted => preempted.push(h.path.to_string()),
            _ => {}
        }
    }
    for (path, ex) in &exits {
        let def = m.resolve(&path.parse().unwrap()).unwrap();
        if !def.kind.is_concurrency() || preempted.contains(path) {
            continue;
        }
        let kids: Vec<(String, u64, String)> = def
            .children
            .iter()
            .filter_map(|c| {
                let cp = format!("{path}/{}", c.id);
                exits.get(&cp).map(|v| (cp, v[0].0, v[0].1.clone()))
            })
            .collect();
        let own = &ex[0].1;
        if def.kind == StateKind::BarrierConcurrency {
            let outcomes: Vec<&str> = kids.iter().map(|k| k.2.as_str()).collect();
            let want = if outcomes.contains(&ABORTED) {
                ABORTED.to_string()
            } else if outcomes.contains(&PREEMPTED) {
                PREEMPTED.to_string()
            } else {
                def.first_user_outcome().unwrap().name.clone()
            };
            if *own != want {
                return Err(format!("barrier {path} exited {own}, children {outcomes:?}"));
            }
        } else {
            let first = kids.iter().min_by_key(|k| k.1).ok_or_else(|| format!("{path} has no exited child"))?;
            for k in kids.iter().filter(|k| k.0 != first.0) {
                if k.2 != PREEMPTED || !preempted.contains(&k.0) {
                    return Err(format!("{} did not rest preempted after {} finished first", k.0, first.0));
                }
            }
            if def.outcome_by_name(&first.2).is_some() && *own != first.2 {
                return Err(format!("{path} exited {own}, first finisher {}", first.2));
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn dsl_print_parse(p in gen::program()) {
        let text = print_program(&p);
        let parsed = parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&parsed, &p);
        prop_assert_eq!(print_program(&parsed), text);
    }

    #[test]
    fn client_frames_round_trip(f in gen::client_frame()) {
        prop_assert_eq!(ClientFrame::decode(&f.encode()).unwrap(), f);
    }

    #[test]
    fn server_frames_round_trip(f in gen::server_frame()) {
        prop_assert_eq!(ServerFrame::decode(&f.encode()).unwrap(), f);
    }

    #[test]
    fn manifests_round_trip(m in gen::machine()) {
        let text = storage::to_manifest(&m);
        let back = storage::from_manifest(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(storage::to_manifest(&back), text);
    }

    #[test]
    fn undo_redo_matches_replay((seed, ops) in gen::walk()) {
        let edits = ops.iter().filter(|o| matches!(o, gen::Op::Edit(_))).count();
        let applied = gen::check_walk(seed, &ops).map_err(TestCaseError::fail)?;
        prop_assert!(applied <= edits);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn runs_are_well_bracketed(seed in any::<u64>()) {
        let m = support::semantics_machine(seed % 10_000);
        let (_, history) = support::run(&m, EngineConfig::default());
        check_bracketing(&history).map_err(TestCaseError::fail)?;
        let seqs: Vec<u64> = history.iter().map(|h| h.seq).collect();
        prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]), "seq not increasing: {:?}", seqs);
        check_concurrency(&m, &history).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn sequential_runs_are_deterministic(seed in any::<u64>(), rng_seed in any::<u64>()) {
        let m = GeneratorProfile::Sequential.generate(seed, 1 + (seed % 25) as usize, 1 + (seed % 4) as usize);
        let c = EngineConfig { rng_seed, ..EngineConfig::default() };
        let (_, a) = support::run(&m, c.clone());
        let (_, b) = support::run(&m, c);
        prop_assert_eq!(support::lines(&a), support::lines(&b));
    }

    #[test]
    fn engine_agrees_with_reference(seed in any::<u64>()) {
        let m = support::semantics_machine(seed);
        support::agree_with_reference(&m).map_err(TestCaseError::fail)?;
    }
}
