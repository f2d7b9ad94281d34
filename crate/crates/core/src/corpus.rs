//! Built-in protocols, formulas and traces.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::execution::{ExecError, Protocol, Trace};
use crate::logic::Formula;
use crate::syntax::{parse_formula, parse_protocol, parse_trace, ParseError, TraceScript};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Protocol,
    Formula,
    Trace,
}

impl EntryKind {
    pub fn extension(self) -> &'static str {
        match self {
            EntryKind::Protocol => "proto.dsl",
            EntryKind::Formula => "formula.dsl",
            EntryKind::Trace => "trace.dsl",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CorpusEntry {
    pub name: &'static str,
    pub kind: EntryKind,
    pub note: &'static str,
    #[serde(skip)]
    pub source: &'static str,
}

impl CorpusEntry {
    pub fn file_name(&self) -> String {
        format!("{}.{}", self.name, self.kind.extension())
    }
}

macro_rules! entry {
    ($name:literal, $kind:ident, $note:literal) => {
        CorpusEntry {
            name: $name,
            kind: EntryKind::$kind,
            note: $note,
            source: include_str!(concat!("../corpus/", $name, ".", entry!(@ext $kind))),
        }
    };
    (@ext Protocol) => { "proto.dsl" };
    (@ext Formula) => { "formula.dsl" };
    (@ext Trace) => { "trace.dsl" };
}

static ENTRIES: &[CorpusEntry] = &[
    entry!("nsl", Protocol, "Needham-Schroeder-Lowe, two roles"),
    entry!(
        "nsl-secrecy-rig",
        Protocol,
        "NSL plus a witness role receiving X1@A3"
    ),
    entry!(
        "example41",
        Protocol,
        "nonce sent with two differently labeled ciphertexts for a third party"
    ),
    entry!(
        "phi-s",
        Formula,
        "secrecy against the witness, comparing with X1@A2 at LS(1, 1)"
    ),
    entry!(
        "phi-s-corrected",
        Formula,
        "secrecy of X1@A1 against the witness"
    ),
    entry!("phi-a", Formula, "weak agreement on X1@A1 for NSL"),
    entry!(
        "phi1",
        Formula,
        "agreement implies equal ciphertexts; outside the equality-restricted fragment"
    ),
    entry!("phi2", Formula, "agreement implies distinct ciphertexts"),
    entry!("trace-ex22", Trace, "a3 corrupted, impersonates a1 to a2"),
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no corpus entry named `{0}`")]
    Unknown(String),
    #[error("corpus entry `{name}` is a {found:?}, not a {wanted:?}")]
    WrongKind {
        name: String,
        wanted: EntryKind,
        found: EntryKind,
    },
    #[error("corpus entry `{name}`: {error}")]
    Parse { name: String, error: ParseError },
    #[error("trace `{name}` does not replay: {error}")]
    Replay { name: String, error: ExecError },
    #[error("trace `{0}` does not name its protocol")]
    NoProtocol(String),
}

pub fn entries() -> &'static [CorpusEntry] {
    ENTRIES
}

pub fn get(name: &str) -> Result<&'static CorpusEntry, CorpusError> {
    ENTRIES
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| CorpusError::Unknown(name.to_string()))
}

fn get_kind(name: &str, wanted: EntryKind) -> Result<&'static CorpusEntry, CorpusError> {
    let e = get(name)?;
    if e.kind != wanted {
        return Err(CorpusError::WrongKind {
            name: name.to_string(),
            wanted,
            found: e.kind,
        });
    }
    Ok(e)
}

pub fn protocol(name: &str) -> Result<Protocol, CorpusError> {
    let e = get_kind(name, EntryKind::Protocol)?;
    parse_protocol(e.source).map_err(|error| CorpusError::Parse {
        name: name.to_string(),
        error,
    })
}

pub fn formula(name: &str) -> Result<Formula, CorpusError> {
    let e = get_kind(name, EntryKind::Formula)?;
    parse_formula(e.source).map_err(|error| CorpusError::Parse {
        name: name.to_string(),
        error,
    })
}

pub fn trace_script(name: &str) -> Result<TraceScript, CorpusError> {
    let e = get_kind(name, EntryKind::Trace)?;
    parse_trace(e.source).map_err(|error| CorpusError::Parse {
        name: name.to_string(),
        error,
    })
}

/// A trace entry replayed under the protocol it names.
pub fn trace(name: &str) -> Result<(Protocol, Trace), CorpusError> {
    let script = trace_script(name)?;
    let proto_name = script
        .protocol
        .clone()
        .ok_or_else(|| CorpusError::NoProtocol(name.to_string()))?;
    let p = protocol(&proto_name)?;
    let tr = Trace::from_events(&p, script.events).map_err(|error| CorpusError::Replay {
        name: name.to_string(),
        error,
    })?;
    Ok((p, tr))
}

/// Writes every entry to `dir` and returns the paths written.
pub fn export(dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    ENTRIES
        .iter()
        .map(|e| {
            let path = dir.join(e.file_name());
            fs::write(&path, e.source)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::execution::is_valid_trace;
    use crate::term::Mode;

    #[test]
    fn every_entry_loads() {
        for e in entries() {
            match e.kind {
                EntryKind::Protocol => {
                    let p = protocol(e.name).unwrap();
                    assert_eq!(p.mode, Mode::Labeled, "{}", e.name);
                }
                EntryKind::Formula => assert!(formula(e.name).unwrap().free_subs().is_empty()),
                EntryKind::Trace => {
                    let (p, tr) = trace(e.name).unwrap();
                    assert_eq!(is_valid_trace(&p, &tr), Ok(true));
                }
            }
        }
    }

    #[test]
    fn lookup_errors() {
        assert!(matches!(get("nope"), Err(CorpusError::Unknown(_))));
        assert!(matches!(
            protocol("phi1"),
            Err(CorpusError::WrongKind { .. })
        ));
    }

    #[test]
    fn classification_flags() {
        assert!(!formula("phi1").unwrap().is_l2());
        for name in ["phi2", "phi-s", "phi-s-corrected", "phi-a"] {
            assert!(formula(name).unwrap().is_l2(), "{name}");
        }
        assert_eq!(protocol("nsl").unwrap().parties(), 2);
        assert_eq!(protocol("example41").unwrap().parties(), 3);
    }

    #[test]
    fn export_writes_every_file() {
        let dir = std::env::temp_dir().join(format!("labelcheck-corpus-{}", std::process::id()));
        let paths = export(&dir).unwrap();
        assert_eq!(paths.len(), entries().len());
        assert!(dir.join("nsl.proto.dsl").exists());
        fs::remove_dir_all(&dir).unwrap();
    }
}
