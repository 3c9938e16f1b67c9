//! Where stepping stops.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::StatePath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCommand {
    Over,
    Into,
    Out,
    Back,
}

/// An execution position: just before a state is entered, or just after it exited.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "at", content = "path", rename_all = "snake_case")]
pub enum Checkpoint {
    BeforeEnter(StatePath),
    AfterExit(StatePath),
}

impl Checkpoint {
    pub fn path(&self) -> &StatePath {
        match self {
            Checkpoint::BeforeEnter(p) | Checkpoint::AfterExit(p) => p,
        }
    }

    pub fn depth(&self) -> usize {
        self.path().depth()
    }
}

impl fmt::Display for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Checkpoint::BeforeEnter(p) => write!(f, "before {p}"),
            Checkpoint::AfterExit(p) => write!(f, "after {p}"),
        }
    }
}

/// Whether a step issued at `from` ends when execution reaches `at`.
///
/// `Over` stops at the next state on the same level or the first exit above it, `Into`
/// stops at the very next entry, `Out` stops once the enclosing state has been left.
pub fn stops_at(cmd: StepCommand, from: &Checkpoint, at: &Checkpoint) -> bool {
    let d = from.depth();
    match (cmd, at) {
        (StepCommand::Into, Checkpoint::BeforeEnter(_)) => true,
        (StepCommand::Into | StepCommand::Over, Checkpoint::AfterExit(p)) => p.depth() < d,
        (StepCommand::Over, Checkpoint::BeforeEnter(p)) => p.depth() <= d,
        (StepCommand::Out, Checkpoint::BeforeEnter(p)) => p.depth() < d,
        (StepCommand::Out, Checkpoint::AfterExit(p)) => p.depth() + 1 < d,
        (StepCommand::Back, _) => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn before(p: &str) -> Checkpoint {
        Checkpoint::BeforeEnter(p.parse().unwrap())
    }
    fn after(p: &str) -> Checkpoint {
        Checkpoint::AfterExit(p.parse().unwrap())
    }

    // Trace of H[A, B] with H under root R and a sibling S after H.
    #[test]
    fn over_stays_on_level() {
        let at_a = before("R/H/A");
        assert!(!stops_at(StepCommand::Over, &at_a, &after("R/H/A")));
        assert!(stops_at(StepCommand::Over, &at_a, &before("R/H/B")));
        assert!(stops_at(StepCommand::Over, &before("R/H/B"), &after("R/H")));
    }

    #[test]
    fn into_descends() {
        assert!(stops_at(StepCommand::Into, &before("R/H"), &before("R/H/A")));
        assert!(!stops_at(StepCommand::Into, &before("R/H/A"), &after("R/H/A")));
    }

    #[test]
    fn out_leaves_parent() {
        let at_b = before("R/H/B");
        assert!(!stops_at(StepCommand::Out, &at_b, &after("R/H/B")));
        assert!(!stops_at(StepCommand::Out, &at_b, &after("R/H")));
        assert!(stops_at(StepCommand::Out, &at_b, &before("R/S")));
        assert!(stops_at(StepCommand::Out, &at_b, &after("R")));
    }
}
