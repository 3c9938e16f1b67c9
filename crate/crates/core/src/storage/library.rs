use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{load_unresolved, StorageError, MANIFEST};
use crate::model::{LibraryRef, StateDef, StateId, StateKind, StateMachineDef, TransitionTarget};

/// Environment variable holding the registry's search directories.
pub const LIBRARY_PATH_VAR: &str = "ORC_LIBRARY_PATH";

#[derive(Clone, Debug)]
struct Entry {
    manifest: PathBuf,
    version: String,
}

/// Libraries found under a list of search directories.
///
/// Every directory below a search path that holds a manifest is a library, named by
/// its path relative to the search path (`nav/approach`). A library is looked up by
/// that name and the id of the machine inside; earlier search paths shadow later ones.
#[derive(Clone, Debug, Default)]
pub struct LibraryRegistry {
    search_paths: Vec<PathBuf>,
    index: BTreeMap<(String, String), Vec<Entry>>,
}

impl LibraryRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(search_paths: Vec<PathBuf>) -> Self {
        let mut r = LibraryRegistry { search_paths, index: BTreeMap::new() };
        r.rebuild();
        r
    }

    pub fn from_env() -> Self {
        let paths = std::env::var_os(LIBRARY_PATH_VAR).map(|v| std::env::split_paths(&v).collect()).unwrap_or_default();
        Self::new(paths)
    }

    /// Registry from `ORC_LIBRARY_PATH` with `extra` searched first.
    pub fn with_env(extra: Vec<PathBuf>) -> Self {
        let mut paths = extra;
        paths.extend(Self::from_env().search_paths);
        Self::new(paths)
    }

    pub fn search_paths(&self) -> &[PathBuf] {
        &self.search_paths
    }

    /// Rescans the search paths.
    pub fn rebuild(&mut self) {
        self.index.clear();
        for root in &self.search_paths {
            let files = walkdir::WalkDir::new(root)
                .sort_by_file_name()
                .into_iter()
                .filter_map(Result::ok)
                .filter(|e| e.file_type().is_file() && e.file_name() == MANIFEST);
            for file in files {
                let Some(dir) = file.path().parent() else { continue };
                let Some(name) = library_name(root, dir) else { continue };
                match load_unresolved(file.path()) {
                    Ok(m) => self
                        .index
                        .entry((name, m.id.clone()))
                        .or_default()
                        .push(Entry { manifest: file.path().to_path_buf(), version: m.version }),
                    Err(e) => log::warn!(target: "orc::library", "skipping {}: {e}", file.path().display()),
                }
            }
        }
    }

    /// `(library_name, machine_id, version)` of every library, in index order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.index.iter().flat_map(|((n, id), es)| es.iter().map(move |e| (n.as_str(), id.as_str(), e.version.as_str())))
    }

    /// The manifest that `r` refers to.
    pub fn locate(&self, r: &LibraryRef) -> Result<&Path, StorageError> {
        let unresolved = || StorageError::UnresolvedLibrary {
            library: r.library_name.clone(),
            machine: r.machine_id.clone(),
            req: r.version_req.clone(),
        };
        let entries = self.index.get(&(r.library_name.clone(), r.machine_id.clone())).ok_or_else(unresolved)?;
        entries.iter().find(|e| version_matches(&r.version_req, &e.version)).map(|e| e.manifest.as_path()).ok_or_else(unresolved)
    }

    /// A copy of `machine` with every library state replaced by the machine it wraps.
    pub fn resolve(&self, machine: &StateMachineDef) -> Result<StateMachineDef, StorageError> {
        let mut out = machine.clone();
        let mut stack = Vec::new();
        resolve_state(self, &mut out.root, &mut stack)?;
        Ok(out)
    }
}

fn library_name(root: &Path, dir: &Path) -> Option<String> {
    let rel = dir.strip_prefix(root).ok()?;
    let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    (!parts.is_empty()).then(|| parts.join("/"))
}

/// Empty and `*` accept anything; otherwise a semver requirement, or an exact match
/// for versions that are not semver.
fn version_matches(req: &str, version: &str) -> bool {
    let req = req.trim();
    if req.is_empty() || req == "*" {
        return true;
    }
    match (semver::VersionReq::parse(req), semver::Version::parse(version)) {
        (Ok(r), Ok(v)) => r.matches(&v),
        _ => req == version,
    }
}

fn resolve_state(reg: &LibraryRegistry, state: &mut StateDef, stack: &mut Vec<String>) -> Result<(), StorageError> {
    if state.kind != StateKind::Library {
        for c in &mut state.children {
            resolve_state(reg, c, stack)?;
        }
        return Ok(());
    }
    let Some(r) = state.library_ref.clone() else {
        return Err(StorageError::UnresolvedLibrary {
            library: String::new(),
            machine: String::new(),
            req: format!("library state `{}` has no reference", state.id),
        });
    };
    let key = format!("{}:{}", r.library_name, r.machine_id);
    if stack.contains(&key) {
        let mut cycle = stack.clone();
        cycle.push(key);
        return Err(StorageError::LibraryCycle(cycle));
    }
    let lib = load_unresolved(reg.locate(&r)?)?;
    stack.push(key);
    let mut root = lib.root;
    resolve_state(reg, &mut root, stack)?;
    stack.pop();
    check_interface(state, &root, &r)?;
    rename(&mut root, &state.id);
    root.name = state.name.clone();
    *state = root;
    Ok(())
}

fn check_interface(wrapper: &StateDef, root: &StateDef, r: &LibraryRef) -> Result<(), StorageError> {
    let mismatch = |detail: String| StorageError::LoadMismatch {
        state: wrapper.id.to_string(),
        library: format!("{}:{}", r.library_name, r.machine_id),
        detail,
    };
    let outcomes = |s: &StateDef| {
        let mut v: Vec<(i32, String)> = s.outcomes.iter().map(|o| (o.id.0, o.name.clone())).collect();
        v.sort();
        v
    };
    if outcomes(wrapper) != outcomes(root) {
        return Err(mismatch(format!("outcomes {:?} vs {:?}", outcomes(wrapper), outcomes(root))));
    }
    let ports = |ps: &[crate::model::DataPort]| {
        let mut v: Vec<(String, &'static str)> = ps.iter().map(|p| (p.name.clone(), p.dtype.name())).collect();
        v.sort();
        v
    };
    for (dir, a, b) in [("inputs", &wrapper.input_ports, &root.input_ports), ("outputs", &wrapper.output_ports, &root.output_ports)] {
        if ports(a) != ports(b) {
            return Err(mismatch(format!("{dir} {:?} vs {:?}", ports(a), ports(b))));
        }
    }
    Ok(())
}

/// Gives the copied root the wrapper's id and prefixes every id below it with it.
fn rename(root: &mut StateDef, wrapper: &StateId) {
    let old = root.id.clone();
    let map = |id: &StateId, is_self: bool| {
        if is_self { wrapper.clone() } else { StateId::new(format!("{wrapper}.{id}")) }
    };
    fn go(s: &mut StateDef, old_root: &StateId, map: &dyn Fn(&StateId, bool) -> StateId) {
        let me = s.id.clone();
        let fix = |id: &StateId| map(id, id == old_root);
        s.id = fix(&me);
        if let Some(start) = &s.start_child {
            s.start_child = Some(fix(start));
        }
        for t in &mut s.transitions {
            t.from_state = fix(&t.from_state);
            if let TransitionTarget::State(to) = &t.to {
                t.to = TransitionTarget::State(fix(to));
            }
        }
        for f in &mut s.data_flows {
            f.from.0 = fix(&f.from.0);
            f.to.0 = fix(&f.to.0);
        }
        for c in &mut s.children {
            go(c, old_root, map);
        }
    }
    go(root, &old, &map);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, DataPort, LibraryRef, StateDef};
    use crate::storage::save;
    use crate::value::Value;

    fn lref(name: &str, id: &str) -> LibraryRef {
        LibraryRef { library_name: name.into(), machine_id: id.into(), version_req: "*".into() }
    }

    fn leaf_lib() -> StateMachineDef {
        let inner = StateDef::execution("step", "o = i + 1\nreturn \"success\"")
            .with_input(DataPort::new("i", Value::Int(0)))
            .with_output(DataPort::new("o", Value::Int(0)));
        let root = StateDef::sequence("main", vec![inner])
            .with_input(DataPort::new("i", Value::Int(0)))
            .with_output(DataPort::new("o", Value::Int(0)))
            .with_flow(crate::model::DataFlow::new(crate::model::PortRef::new("main", "i"), crate::model::PortRef::new("step", "i")))
            .with_flow(crate::model::DataFlow::new(crate::model::PortRef::new("step", "o"), crate::model::PortRef::new("main", "o")));
        StateMachineDef::new("inc", root)
    }

    fn wrapper(id: &str) -> StateDef {
        StateDef::library(id, lref("util/inc", "inc"))
            .with_input(DataPort::new("i", Value::Int(0)))
            .with_output(DataPort::new("o", Value::Int(0)))
    }

    #[test]
    fn two_uses_become_independent_copies() {
        let dir = tempfile::tempdir().unwrap();
        save(&leaf_lib(), &dir.path().join("util/inc")).unwrap();
        let reg = LibraryRegistry::new(vec![dir.path().to_path_buf()]);
        let m = StateMachineDef::new("user", StateDef::sequence("top", vec![wrapper("a"), wrapper("b")]));
        let resolved = reg.resolve(&m).unwrap();
        assert!(!validate(&resolved).has_errors(), "{:?}", validate(&resolved));
        assert!(resolved.find("a.step").is_some() && resolved.find("b.step").is_some());
        assert_eq!(resolved.find("a").unwrap().kind, StateKind::Hierarchy);
        assert_eq!(resolved.find("a").unwrap().start_child.as_ref().unwrap().as_str(), "a.step");
        // Resolution is idempotent.
        assert_eq!(reg.resolve(&resolved).unwrap(), resolved);
    }

    #[test]
    fn earlier_search_path_wins() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut other = leaf_lib();
        other.version = "2.0.0".into();
        save(&leaf_lib(), &d1.path().join("util/inc")).unwrap();
        save(&other, &d2.path().join("util/inc")).unwrap();
        let reg = LibraryRegistry::new(vec![d1.path().into(), d2.path().into()]);
        assert!(reg.locate(&lref("util/inc", "inc")).unwrap().starts_with(d1.path()));
        let mut want2 = lref("util/inc", "inc");
        want2.version_req = "^2".into();
        assert!(reg.locate(&want2).unwrap().starts_with(d2.path()));
    }

    #[test]
    fn missing_cyclic_and_mismatched_libraries() {
        let dir = tempfile::tempdir().unwrap();
        let reg = LibraryRegistry::new(vec![dir.path().to_path_buf()]);
        let m = StateMachineDef::new("user", StateDef::sequence("top", vec![wrapper("a")]));
        let err = reg.resolve(&m).unwrap_err();
        assert_eq!(err.code(), "UNRESOLVED_LIBRARY");
        assert!(err.to_string().contains("util/inc"));

        let l1 = StateMachineDef::new("l1", StateDef::sequence("r", vec![StateDef::library("x", lref("l2", "l2"))]));
        let l2 = StateMachineDef::new("l2", StateDef::sequence("r", vec![StateDef::library("y", lref("l1", "l1"))]));
        save(&l1, &dir.path().join("l1")).unwrap();
        save(&l2, &dir.path().join("l2")).unwrap();
        save(&leaf_lib(), &dir.path().join("util/inc")).unwrap();
        let reg = LibraryRegistry::new(vec![dir.path().to_path_buf()]);
        let m = StateMachineDef::new("user", StateDef::sequence("top", vec![StateDef::library("z", lref("l1", "l1"))]));
        assert_eq!(reg.resolve(&m).unwrap_err().code(), "LIBRARY_CYCLE");

        let bad = StateMachineDef::new("user", StateDef::sequence("top", vec![StateDef::library("w", lref("util/inc", "inc"))]));
        assert_eq!(reg.resolve(&bad).unwrap_err().code(), "LOAD_MISMATCH");
    }
}
