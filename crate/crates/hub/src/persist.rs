//! One canonical JSON file per session under `<data_dir>/sessions/`,
//! replaced atomically (write temp file, fsync, rename).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::session::SessionRecord;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("CorruptFile({0})")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
#[error("BadDataDir: {path}: {source}")]
pub struct BadDataDir {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

pub fn session_path(sessions_dir: &Path, id: &str) -> PathBuf {
    sessions_dir.join(format!("{id}.json"))
}

/// Writes `record` into `sessions_dir`, replacing any previous file.
pub fn persist_session(record: &SessionRecord, sessions_dir: &Path) -> io::Result<PathBuf> {
    let path = session_path(sessions_dir, record.id.as_str());
    let tmp = sessions_dir.join(format!(".{}.json.tmp", record.id));
    let json = teleshift_core::canonical_json(record).map_err(io::Error::other)?;
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(json.as_bytes())?;
        file.write_all(b"\n")?;
        file.sync_all()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Reads and validates a session file. The error names the first failing
/// invariant.
pub fn load_session(path: &Path) -> Result<SessionRecord, PersistError> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| PersistError::CorruptFile(e.to_string()))
}

/// Directory-backed session storage.
#[derive(Debug, Clone)]
pub struct SessionStore {
    sessions_dir: PathBuf,
}

impl SessionStore {
    /// Creates `<data_dir>/sessions` if needed and checks it is writable.
    pub fn open(data_dir: &Path) -> Result<Self, BadDataDir> {
        let sessions_dir = data_dir.join("sessions");
        let bad = |source| BadDataDir {
            path: data_dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(&sessions_dir).map_err(bad)?;
        let probe = sessions_dir.join(".write-probe");
        fs::write(&probe, b"").map_err(bad)?;
        fs::remove_file(&probe).map_err(bad)?;
        Ok(Self { sessions_dir })
    }

    pub fn dir(&self) -> &Path {
        &self.sessions_dir
    }

    pub fn save(&self, record: &SessionRecord) -> io::Result<PathBuf> {
        persist_session(record, &self.sessions_dir)
    }

    /// Loads every `*.json` session file. Corrupt files are returned as
    /// errors alongside the good ones rather than aborting the scan.
    pub fn load_all(&self) -> io::Result<Vec<Result<SessionRecord, (PathBuf, PersistError)>>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.sessions_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
            })
            .collect();
        paths.sort();
        Ok(paths
            .into_iter()
            .map(|p| load_session(&p).map_err(|e| (p, e)))
            .collect())
    }
}
