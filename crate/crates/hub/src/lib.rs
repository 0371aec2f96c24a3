//! Realtime rendezvous for shape replicas.
//!
//! The hub hosts sessions, orders and fans out arm updates according to the
//! session mode, keeps followers' private edits as per-follower shadows,
//! stores snapshots, answers full-state fetches for recovery and persists
//! every session to disk.
//!
//! [`Hub`] is transport-free; [`server`] binds it to TCP (newline-delimited
//! JSON) and WebSocket (one envelope per text frame), and [`client`] is a
//! small blocking client for tools and tests.

pub mod client;
pub mod envelope;
mod hub;
pub mod persist;
pub mod server;
pub mod session;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use envelope::{ErrorCode, Kind, SyncEnvelope, HUB_SENDER};
pub use hub::{ConnId, Hub, Liveness, MAX_MISSED_PONGS};
pub use persist::{load_session, persist_session, PersistError, SessionStore};
pub use session::{HubError, SessionRecord};

/// Clients are identified by the same id they stamp their writes with.
pub type ClientId = teleshift_core::ActorId;

/// Session identifier. Doubles as a file name, so it is limited to ASCII
/// letters, digits, `-`, `_` and `.`, must not start with `.`, and is at most
/// 64 characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SessionId(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid session id {0:?}: use 1-64 of [A-Za-z0-9._-], not starting with '.'")]
pub struct InvalidSessionId(pub String);

impl SessionId {
    pub fn new(s: impl Into<String>) -> Result<Self, InvalidSessionId> {
        let s = s.into();
        let ok = !s.is_empty()
            && s.len() <= 64
            && !s.starts_with('.')
            && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
        if ok {
            Ok(Self(s))
        } else {
            Err(InvalidSessionId(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::str::FromStr for SessionId {
    type Err = InvalidSessionId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for SessionId {
    type Error = InvalidSessionId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<SessionId> for String {
    fn from(id: SessionId) -> String {
        id.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_ids() {
        assert!(SessionId::new("mouse-1.v2_x").is_ok());
        for bad in ["", ".hidden", "a/b", "..", "sp ace", &"x".repeat(65)] {
            assert!(SessionId::new(bad).is_err(), "{bad}");
        }
    }
}
