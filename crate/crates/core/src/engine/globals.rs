use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::value::{Value, ValueMap};

/// Engine-wide variables shared by all scripts. Every operation takes one lock, so each
/// key is linearizable; read-modify-write sequences across calls are not atomic.
#[derive(Debug, Default)]
pub struct GlobalStore {
    inner: Mutex<BTreeMap<String, (Value, u64)>>,
}

impl GlobalStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<Value> {
        self.inner.lock().unwrap().get(name).map(|(v, _)| v.clone())
    }

    /// Sets `name` and returns its new version (1 for a fresh key).
    pub fn set(&self, name: &str, value: Value) -> u64 {
        let mut g = self.inner.lock().unwrap();
        let e = g.entry(name.to_string()).or_insert((Value::Bool(false), 0));
        e.0 = value;
        e.1 += 1;
        e.1
    }

    pub fn remove(&self, name: &str) -> Option<Value> {
        self.inner.lock().unwrap().remove(name).map(|(v, _)| v)
    }

    pub fn version(&self, name: &str) -> u64 {
        self.inner.lock().unwrap().get(name).map_or(0, |(_, n)| *n)
    }

    pub fn snapshot(&self) -> ValueMap {
        self.inner.lock().unwrap().iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versions_count_writes() {
        let g = GlobalStore::new();
        assert_eq!(g.get("g"), None);
        assert_eq!(g.set("g", Value::Int(1)), 1);
        assert_eq!(g.set("g", Value::Int(2)), 2);
        assert_eq!(g.get("g"), Some(Value::Int(2)));
        assert_eq!(g.version("h"), 0);
    }
}
