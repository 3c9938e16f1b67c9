//! Seeded synthetic machines for benchmarks and property tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataFlow, DataPort, OutcomeId, PortRef, StateDef, StateId, StateKind, StateMachineDef, Transition};
use crate::value::Value;

const SUCCESS: OutcomeId = OutcomeId(0);
const FAILURE: OutcomeId = OutcomeId(1);

/// What kind of machine to generate. Every profile yields machines with zero validation
/// errors whose scripts always terminate on their own or when preempted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorProfile {
    /// Large machines with trivial scripts; every outcome is wired explicitly.
    Scale,
    /// Small machines mixing all composite kinds, random outcomes, runtime errors,
    /// bubbling reserved outcomes and blocking children under preemptive concurrency.
    Semantics,
    /// No concurrency; scripts use `rand`, globals and logging.
    Sequential,
    /// No concurrency and no globals; every execution state has a backward script.
    PureScript,
}

impl GeneratorProfile {
    fn composite_chance(self) -> f64 {
        match self {
            GeneratorProfile::Scale => 0.15,
            _ => 0.3,
        }
    }

    fn concurrency(self) -> bool {
        matches!(self, GeneratorProfile::Scale | GeneratorProfile::Semantics)
    }

    /// Builds a machine with `n_states` states below the root and at most `max_depth`
    /// levels of composite nesting (the root is level one).
    pub fn generate(self, seed: u64, n_states: usize, max_depth: usize) -> StateMachineDef {
        assert!(n_states >= 1 && max_depth >= 1, "need at least one state and one level");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::build(&mut rng, self, n_states, max_depth);
        let mut g = Builder { rng, profile: self, shape: &shape };
        let root = g.state(0, None, true);
        let mut m = StateMachineDef::new(format!("synthetic-{seed}"), root);
        m.metadata.insert("generator".into(), format!("{self:?}").to_lowercase());
        m.metadata.insert("seed".into(), seed.to_string());
        m
    }
}

/// Scale profile machine: the benchmark shape.
pub fn generate_synthetic(seed: u64, n_states: usize, max_depth: usize) -> StateMachineDef {
    GeneratorProfile::Scale.generate(seed, n_states, max_depth)
}

/// Largest number of composite states on any root-to-leaf path.
pub fn machine_depth(m: &StateMachineDef) -> usize {
    fn go(s: &StateDef) -> usize {
        if s.kind.is_composite() {
            1 + s.children.iter().map(go).max().unwrap_or(0)
        } else {
            0
        }
    }
    go(&m.root)
}

/// The tree skeleton: parent links and composite flags, kinds decided later.
struct Shape {
    children: Vec<Vec<usize>>,
    composite: Vec<bool>,
    kind: Vec<StateKind>,
}

impl Shape {
    fn build(rng: &mut ChaCha8Rng, profile: GeneratorProfile, n_states: usize, max_depth: usize) -> Shape {
        let depth = max_depth.min(n_states);
        let mut s = Shape { children: vec![Vec::new()], composite: vec![true], kind: vec![StateKind::Hierarchy] };
        let mut level = vec![1usize];
        // Spine reaching the target depth: depth-1 nested composites and a leaf.
        let mut parent = 0;
        for _ in 1..depth {
            parent = s.push(parent, true, &mut level);
        }
        s.push(parent, false, &mut level);
        let mut remaining = n_states - depth;
        while remaining > 0 {
            let containers: Vec<usize> = (0..s.composite.len()).filter(|&i| s.composite[i]).collect();
            let c = *containers.choose(rng).expect("root is composite");
            if remaining >= 2 && level[c] < depth && rng.gen_bool(profile.composite_chance()) {
                let inner = s.push(c, true, &mut level);
                s.push(inner, false, &mut level);
                remaining -= 2;
            } else {
                s.push(c, false, &mut level);
                remaining -= 1;
            }
        }
        for i in 1..s.composite.len() {
            if !s.composite[i] {
                s.kind[i] = StateKind::Execution;
                continue;
            }
            let roll: f64 = rng.gen();
            s.kind[i] = match profile {
                _ if !profile.concurrency() => StateKind::Hierarchy,
                GeneratorProfile::Scale if roll < 0.1 => StateKind::BarrierConcurrency,
                GeneratorProfile::Scale if roll < 0.2 => StateKind::PreemptiveConcurrency,
                GeneratorProfile::Semantics if roll < 0.25 => StateKind::BarrierConcurrency,
                GeneratorProfile::Semantics if roll < 0.5 => StateKind::PreemptiveConcurrency,
                _ => StateKind::Hierarchy,
            };
        }
        s
    }

    fn push(&mut self, parent: usize, composite: bool, level: &mut Vec<usize>) -> usize {
        let id = self.composite.len();
        self.children.push(Vec::new());
        self.composite.push(composite);
        self.kind.push(StateKind::Hierarchy);
        level.push(level[parent] + 1);
        self.children[parent].push(id);
        id
    }
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    profile: GeneratorProfile,
    shape: &'a Shape,
}

fn state_id(i: usize) -> StateId {
    if i == 0 { StateId::new("root") } else { StateId::new(format!("s{i}")) }
}

impl Builder<'_> {
    /// Execution states directly under a preemptive concurrency may block until preempted,
    /// except the one child picked to finish (`must_finish`).
    fn state(&mut self, i: usize, parent_kind: Option<StateKind>, must_finish: bool) -> StateDef {
        let kind = self.shape.kind[i];
        let mut s = if kind == StateKind::Execution {
            let may_block = parent_kind == Some(StateKind::PreemptiveConcurrency) && !must_finish;
            let (forward, backward) = self.script(may_block);
            let mut s = StateDef::execution(state_id(i), &forward);
            if let Some(b) = backward {
                s = s.with_backward(&b);
            }
            s
        } else {
            StateDef::new(state_id(i), kind)
        };
        s = s
            .with_outcome(FAILURE.0, "failure")
            .with_input(DataPort::new("i", Value::Int(0)))
            .with_output(DataPort::new("o", Value::Int(0)));
        if kind.is_composite() {
            self.compose(&mut s, i);
        }
        s
    }

    fn compose(&mut self, s: &mut StateDef, i: usize) {
        let ids = &self.shape.children[i];
        let finisher = self.rng.gen_range(0..ids.len());
        for (n, &c) in ids.iter().enumerate() {
            let child = self.state(c, Some(s.kind), n == finisher);
            s.children.push(child);
        }
        let kids: Vec<StateId> = s.children.iter().map(|c| c.id.clone()).collect();
        let owner = s.id.clone();
        let port = |id: &StateId, p: &str| PortRef::new(id.clone(), p);
        if s.kind.is_concurrency() {
            for k in &kids {
                s.data_flows.push(DataFlow::new(port(&owner, "i"), port(k, "i")));
            }
            s.data_flows.push(DataFlow::new(port(&kids[0], "o"), port(&owner, "o")));
            return;
        }
        s.start_child = Some(kids[0].clone());
        s.data_flows.push(DataFlow::new(port(&owner, "i"), port(&kids[0], "i")));
        for pair in kids.windows(2) {
            s.data_flows.push(DataFlow::new(port(&pair[0], "o"), port(&pair[1], "i")));
        }
        s.data_flows.push(DataFlow::new(port(kids.last().unwrap(), "o"), port(&owner, "o")));
        for (n, k) in kids.iter().enumerate() {
            let next = kids.get(n + 1);
            // Only forward edges, so every hierarchy terminates.
            let later = |rng: &mut ChaCha8Rng| -> Option<StateId> {
                (n + 1 < kids.len()).then(|| kids[rng.gen_range(n + 1..kids.len())].clone())
            };
            match next {
                Some(nx) => s.transitions.push(Transition::to_state(k.clone(), SUCCESS, nx.clone())),
                None => s.transitions.push(Transition::to_parent(k.clone(), SUCCESS, SUCCESS)),
            }
            let failure = match self.profile {
                GeneratorProfile::Scale => None,
                _ if self.rng.gen_bool(0.5) => later(&mut self.rng),
                _ => None,
            };
            s.transitions.push(match failure {
                Some(t) => Transition::to_state(k.clone(), FAILURE, t),
                None => Transition::to_parent(k.clone(), FAILURE, FAILURE),
            });
            for reserved in [OutcomeId::ABORTED, OutcomeId::PREEMPTED] {
                let roll: f64 = if self.profile == GeneratorProfile::Scale { 0.0 } else { self.rng.gen() };
                let t = if roll < 0.4 {
                    Some(Transition::to_parent(k.clone(), reserved, reserved))
                } else if roll < 0.6 {
                    later(&mut self.rng).map(|t| Transition::to_state(k.clone(), reserved, t))
                } else if roll < 0.7 {
                    Some(Transition::to_parent(k.clone(), reserved, FAILURE))
                } else {
                    None
                };
                s.transitions.extend(t);
            }
        }
    }

    /// Forward and optional backward source for an execution state.
    fn script(&mut self, may_block: bool) -> (String, Option<String>) {
        let k = self.rng.gen_range(1..10);
        match self.profile {
            GeneratorProfile::Scale => (format!("o = i + {k}\nreturn \"success\""), None),
            GeneratorProfile::Semantics => {
                if may_block && self.rng.gen_bool(0.6) {
                    let body = if self.rng.gen_bool(0.5) {
                        "wait(60000)\nreturn \"success\"".to_string()
                    } else {
                        "while not preempted() {\n    wait(50)\n}\nreturn \"preempted\"".to_string()
                    };
                    return (format!("o = i + {k}\n{body}"), None);
                }
                let tail = match self.rng.gen_range(0..10) {
                    0..=4 => "return \"success\"",
                    5..=6 => "return \"failure\"",
                    7 => "return \"aborted\"",
                    8 => "x = 1 / 0\nreturn \"success\"",
                    _ => "if preempted() {\n    return \"preempted\"\n}\nreturn \"success\"",
                };
                (format!("o = i + {k}\n{tail}"), None)
            }
            GeneratorProfile::Sequential => {
                let g = self.rng.gen_range(0..3);
                let forward = format!(
                    "set_global(\"g{g}\", rand())\nlog(\"info\", \"at \" + str(i))\no = i + {k} + int(rand() * 100.0)\n\
                     if o % 3 == 0 {{\n    return \"failure\"\n}}\nreturn \"success\""
                );
                (forward, None)
            }
            GeneratorProfile::PureScript => {
                let m = self.rng.gen_range(2..5);
                let forward = format!(
                    "o = (i * {m} + {k}) % 1000\nif o % 4 == 0 {{\n    return \"failure\"\n}}\nreturn \"success\""
                );
                (forward, Some("log(\"debug\", \"rewind from \" + str(i))".to_string()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;

    #[test]
    fn single_state() {
        let m = generate_synthetic(0, 1, 1);
        assert_eq!(m.state_count(), 2);
        assert_eq!(m.root.children[0].kind, StateKind::Execution);
        assert_eq!(machine_depth(&m), 1);
        assert!(!validate(&m).has_errors());
    }

    #[test]
    fn depth_is_capped_by_state_count() {
        assert_eq!(machine_depth(&generate_synthetic(3, 4, 8)), 4);
        assert_eq!(machine_depth(&generate_synthetic(3, 40, 8)), 8);
    }

    #[test]
    fn same_seed_same_machine() {
        for p in [GeneratorProfile::Scale, GeneratorProfile::Semantics, GeneratorProfile::PureScript] {
            assert_eq!(p.generate(11, 30, 4), p.generate(11, 30, 4));
        }
        assert_ne!(generate_synthetic(1, 30, 4), generate_synthetic(2, 30, 4));
    }

    #[test]
    fn every_profile_validates() {
        for p in [
            GeneratorProfile::Scale,
            GeneratorProfile::Semantics,
            GeneratorProfile::Sequential,
            GeneratorProfile::PureScript,
        ] {
            for seed in 0..30 {
                let m = p.generate(seed, 1 + seed as usize, 1 + (seed as usize % 5));
                let r = validate(&m);
                assert!(!r.has_errors(), "{p:?} seed {seed}: {:?}", r.errors().collect::<Vec<_>>());
            }
        }
    }
}
