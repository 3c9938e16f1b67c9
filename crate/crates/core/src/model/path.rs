use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StateId;

/// Ids from the root to a state. Rendered as `root/child/grandchild`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatePath(Vec<StateId>);

impl StatePath {
    pub fn new(segments: Vec<StateId>) -> Self {
        StatePath(segments)
    }

    pub fn root(id: StateId) -> Self {
        StatePath(vec![id])
    }

    pub fn segments(&self) -> &[StateId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of ancestors; the root has depth 0.
    pub fn depth(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn last(&self) -> Option<&StateId> {
        self.0.last()
    }

    pub fn child(&self, id: StateId) -> StatePath {
        let mut v = self.0.clone();
        v.push(id);
        StatePath(v)
    }

    pub fn parent(&self) -> Option<StatePath> {
        (self.0.len() > 1).then(|| StatePath(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn starts_with(&self, prefix: &StatePath) -> bool {
        self.0.starts_with(&prefix.0)
    }
}

impl fmt::Display for StatePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            f.write_str(s.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for StatePath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let segments: Vec<StateId> = s.split('/').filter(|p| !p.is_empty()).map(StateId::from).collect();
        if segments.is_empty() {
            return Err(format!("empty state path {s:?}"));
        }
        Ok(StatePath(segments))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse() {
        let p: StatePath = "root/H/B".parse().unwrap();
        assert_eq!(p.to_string(), "root/H/B");
        assert_eq!(p.depth(), 2);
        assert_eq!(p.parent().unwrap().to_string(), "root/H");
        assert!("".parse::<StatePath>().is_err());
    }
}
