//! On-disk manifests and the library registry.
//!
//! A machine lives in one `machine.orc.json` file holding `{format_version, machine}`.
//! Output is canonical: fixed key order, two-space indentation, shortest round-trip
//! floats and a trailing newline, so saving a loaded machine reproduces its bytes.

mod library;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use library::{LibraryRegistry, LIBRARY_PATH_VAR};

use crate::model::{validate, StateMachineDef};

pub const MANIFEST: &str = "machine.orc.json";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("format version `{0}` is not supported (expected \"{FORMAT_VERSION}\")")]
    UnsupportedVersion(String),
    #[error("refusing to save an invalid machine: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("no library `{library}` with machine `{machine}` matching `{req}`")]
    UnresolvedLibrary { library: String, machine: String, req: String },
    #[error("library cycle: {}", .0.join(" -> "))]
    LibraryCycle(Vec<String>),
    #[error("library state `{state}` does not match `{library}`: {detail}")]
    LoadMismatch { state: String, library: String, detail: String },
}

impl StorageError {
    pub fn code(&self) -> &'static str {
        match self {
            StorageError::Io { .. } => "IO_ERROR",
            StorageError::Parse(_) => "PARSE_ERROR",
            StorageError::UnsupportedVersion(_) => "UNSUPPORTED_VERSION",
            StorageError::Invalid(_) => "INVALID_STATE_MACHINE",
            StorageError::UnresolvedLibrary { .. } => "UNRESOLVED_LIBRARY",
            StorageError::LibraryCycle(_) => "LIBRARY_CYCLE",
            StorageError::LoadMismatch { .. } => "LOAD_MISMATCH",
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        StorageError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    format_version: &'static str,
    machine: &'a StateMachineDef,
}

#[derive(Deserialize)]
struct ManifestIn {
    format_version: serde_json::Value,
    machine: serde_json::Value,
}

/// The canonical manifest text for `machine`.
pub fn to_manifest(machine: &StateMachineDef) -> String {
    let mut s = serde_json::to_string_pretty(&ManifestOut { format_version: FORMAT_VERSION, machine })
        .expect("machines always serialize");
    s.push('\n');
    s
}

/// Parses manifest text without resolving library states.
pub fn from_manifest(text: &str) -> Result<StateMachineDef, StorageError> {
    let m: ManifestIn = serde_json::from_str(text).map_err(|e| StorageError::Parse(e.to_string()))?;
    match &m.format_version {
        serde_json::Value::String(v) if v == FORMAT_VERSION => {}
        serde_json::Value::String(v) => return Err(StorageError::UnsupportedVersion(v.clone())),
        other => return Err(StorageError::UnsupportedVersion(other.to_string())),
    }
    serde_json::from_value(m.machine).map_err(|e| StorageError::Parse(format!("machine: {e}")))
}

/// `path` itself if it names a file, else the manifest inside the directory.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() }
}

/// Validates and writes `machine` to `dir/machine.orc.json`, creating `dir` if needed.
pub fn save(machine: &StateMachineDef, dir: &Path) -> Result<PathBuf, StorageError> {
    let report = validate(machine);
    if report.has_errors() {
        return Err(StorageError::Invalid(report.errors().map(|f| f.to_string()).collect()));
    }
    fs::create_dir_all(dir).map_err(|e| StorageError::io(dir, e))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, to_manifest(machine)).map_err(|e| StorageError::io(&path, e))?;
    Ok(path)
}

pub fn load_unresolved(path: &Path) -> Result<StateMachineDef, StorageError> {
    let file = manifest_path(path);
    let text = fs::read_to_string(&file).map_err(|e| StorageError::io(&file, e))?;
    from_manifest(&text).map_err(|e| match e {
        StorageError::Parse(msg) => StorageError::Parse(format!("{}: {msg}", file.display())),
        e => e,
    })
}

/// Loads a machine and replaces every library state with a copy of the machine it wraps.
pub fn load(path: &Path, registry: &LibraryRegistry) -> Result<StateMachineDef, StorageError> {
    registry.resolve(&load_unresolved(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_synthetic, DataPort, StateDef};
    use crate::value::Value;

    #[test]
    fn save_load_save_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(7, 40, 4);
        let first = save(&m, dir.path()).unwrap();
        let bytes = fs::read(&first).unwrap();
        let back = load_unresolved(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_manifest(&back).into_bytes(), bytes);
    }

    #[test]
    fn floats_use_shortest_form() {
        let s = StateDef::execution("root", "return \"success\"").with_output(DataPort::new("x", Value::Float(0.1)));
        let text = to_manifest(&StateMachineDef::new("m", s));
        assert!(text.contains("\"default\": 0.1\n"), "{text}");
        assert!(text.ends_with("}\n") && !text.contains('\r'));
    }

    #[test]
    fn rejects_invalid_and_unknown_versions() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = StateDef::sequence("H", vec![StateDef::execution("A", "return \"success\"")]);
        h.start_child = None;
        let err = save(&StateMachineDef::new("m", h), dir.path()).unwrap_err();
        assert_eq!(err.code(), "INVALID_STATE_MACHINE");

        let text = to_manifest(&generate_synthetic(1, 3, 2)).replace("\"format_version\": \"1\"", "\"format_version\": \"9\"");
        assert_eq!(from_manifest(&text).unwrap_err().code(), "UNSUPPORTED_VERSION");
        assert_eq!(from_manifest("{").unwrap_err().code(), "PARSE_ERROR");
        assert_eq!(load_unresolved(&dir.path().join("nope")).unwrap_err().code(), "IO_ERROR");
    }
}
