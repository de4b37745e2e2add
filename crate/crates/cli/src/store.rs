//! Log-structured persistence for feeders and placement sessions.
//!
//! A session is stored as its configuration plus the ordered event log; the
//! in-memory state is always rebuilt by replaying that log.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use derplace::placement::{Event, PlacementError, Session, SessionConfig};
use derplace::{Configuration, Feeder, FeederError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

/// Length of the hex prefix of the feeder hash used as a feeder id.
const FEEDER_ID_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed document: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid feeder: {0}")]
    Feeder(#[from] FeederError),
    #[error("feeder hash mismatch: session was built on {expected}, got {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("unsupported session format version {0}")]
    Version(u32),
    #[error("unknown feeder {0}")]
    UnknownFeeder(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session log does not replay: {0}")]
    Replay(#[from] PlacementError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// SHA-256 of the canonical feeder JSON, hex encoded.
pub fn feeder_hash(f: &Feeder) -> String {
    hex::encode(Sha256::digest(f.to_json().as_bytes()))
}

pub fn feeder_id(f: &Feeder) -> String {
    feeder_hash(f)[..FEEDER_ID_LEN].to_string()
}

/// Persisted form of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub version: u32,
    pub feeder_sha256: String,
    /// Canonical feeder JSON, so the document is self-contained.
    pub feeder: serde_json::Value,
    pub config: SessionConfig,
    pub events: Vec<Event>,
    /// Core configuration after the last event. Written for inspection;
    /// loading recomputes it from the log.
    #[serde(default)]
    pub core: Configuration,
}

impl SessionDocument {
    pub fn of(session: &Session) -> Self {
        let feeder = session.feeder();
        SessionDocument {
            version: FORMAT_VERSION,
            feeder_sha256: feeder_hash(feeder),
            feeder: serde_json::from_str(&feeder.to_json()).expect("canonical feeder JSON"),
            config: *session.config(),
            events: session.log().to_vec(),
            core: session.core().clone(),
        }
    }

    /// Parses the embedded feeder and checks it against the recorded hash.
    pub fn embedded_feeder(&self) -> Result<Feeder, StoreError> {
        if self.version != FORMAT_VERSION {
            return Err(StoreError::Version(self.version));
        }
        let f = Feeder::parse(&self.feeder.to_string())?;
        check_hash(&self.feeder_sha256, &f)?;
        Ok(f)
    }

    /// Replays the log on `feeder`, which must hash to the recorded value.
    pub fn restore(&self, feeder: Arc<Feeder>) -> Result<Session, StoreError> {
        if self.version != FORMAT_VERSION {
            return Err(StoreError::Version(self.version));
        }
        check_hash(&self.feeder_sha256, &feeder)?;
        Ok(Session::replay(feeder, self.config, &self.events)?)
    }
}

fn check_hash(expected: &str, f: &Feeder) -> Result<(), StoreError> {
    let actual = feeder_hash(f);
    if actual == expected {
        Ok(())
    } else {
        Err(StoreError::HashMismatch {
            expected: expected.to_string(),
            actual,
        })
    }
}

pub fn read_document(path: &Path) -> Result<SessionDocument, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary file and rename so readers never see a
/// partial document.
pub fn write_document(path: &Path, doc: &SessionDocument) -> Result<(), StoreError> {
    let mut text = serde_json::to_string_pretty(doc).expect("session documents serialize");
    text.push('\n');
    write_atomic(path, &text)
}

fn write_atomic(path: &Path, text: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Directory-backed store: `feeders/<id>.json` and `sessions/<id>.json`.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["feeders", "sessions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(SessionStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn feeder_path(&self, id: &str) -> Option<PathBuf> {
        valid_id(id).then(|| self.root.join("feeders").join(format!("{id}.json")))
    }

    fn session_path(&self, id: &str) -> Option<PathBuf> {
        valid_id(id).then(|| self.root.join("sessions").join(format!("{id}.json")))
    }

    /// Validates and stores a feeder; the id is content-derived, so storing
    /// the same feeder twice returns the same id.
    pub fn put_feeder(&self, text: &str) -> Result<(String, Feeder), StoreError> {
        let f = Feeder::parse(text)?;
        let id = feeder_id(&f);
        let path = self.feeder_path(&id).expect("hex ids are valid");
        if !path.exists() {
            write_atomic(&path, &f.to_json())?;
        }
        Ok((id, f))
    }

    pub fn feeder(&self, id: &str) -> Result<Feeder, StoreError> {
        let path = self
            .feeder_path(id)
            .filter(|p| p.exists())
            .ok_or_else(|| StoreError::UnknownFeeder(id.to_string()))?;
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(Feeder::parse(&text)?)
    }

    /// Allocates the next free id of the form `s<n>` and persists an empty
    /// session under it.
    pub fn create_session(&self, session: &Session) -> Result<String, StoreError> {
        let doc = SessionDocument::of(session);
        let text = serde_json::to_string_pretty(&doc).expect("session documents serialize");
        let mut n = fs::read_dir(self.root.join("sessions"))
            .map_err(io_err(&self.root))?
            .count()
            + 1;
        loop {
            let id = format!("s{n}");
            let path = self.session_path(&id).expect("generated ids are valid");
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => {
                    write_atomic(&path, &(text + "\n"))?;
                    return Ok(id);
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
    }

    pub fn save_session(&self, id: &str, session: &Session) -> Result<(), StoreError> {
        let path = self
            .session_path(id)
            .ok_or_else(|| StoreError::UnknownSession(id.to_string()))?;
        write_document(&path, &SessionDocument::of(session))
    }

    pub fn load_session(&self, id: &str) -> Result<Session, StoreError> {
        let path = self
            .session_path(id)
            .filter(|p| p.exists())
            .ok_or_else(|| StoreError::UnknownSession(id.to_string()))?;
        let doc = read_document(&path)?;
        let feeder = doc.embedded_feeder()?;
        doc.restore(Arc::new(feeder))
    }
}

/// Ids are used as file names, so only plain alphanumerics are accepted.
fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric())
}
