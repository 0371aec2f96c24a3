//! Wire envelopes: one JSON object per line with fields `kind`, `session`,
//! `sender`, `seq` and `payload`. Unknown fields are ignored.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use teleshift_core::{ArmUpdateF64, Role, SessionMode, SnapshotMeta, SubstructureId, TopologyF64};

use crate::ClientId;

/// Sender name the hub uses on envelopes it originates.
pub const HUB_SENDER: &str = "hub";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Kind {
    Hello,
    Welcome,
    Update,
    FullStateRequest,
    FullState,
    SnapshotSave,
    SnapshotList,
    SnapshotRestore,
    ModeSet,
    Error,
    Ping,
    Pong,
}

impl Kind {
    pub const ALL: [Kind; 12] = [
        Kind::Hello,
        Kind::Welcome,
        Kind::Update,
        Kind::FullStateRequest,
        Kind::FullState,
        Kind::SnapshotSave,
        Kind::SnapshotList,
        Kind::SnapshotRestore,
        Kind::ModeSet,
        Kind::Error,
        Kind::Ping,
        Kind::Pong,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "HELLO",
            Kind::Welcome => "WELCOME",
            Kind::Update => "UPDATE",
            Kind::FullStateRequest => "FULL_STATE_REQUEST",
            Kind::FullState => "FULL_STATE",
            Kind::SnapshotSave => "SNAPSHOT_SAVE",
            Kind::SnapshotList => "SNAPSHOT_LIST",
            Kind::SnapshotRestore => "SNAPSHOT_RESTORE",
            Kind::ModeSet => "MODE_SET",
            Kind::Error => "ERROR",
            Kind::Ping => "PING",
            Kind::Pong => "PONG",
        }
    }

    fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncEnvelope {
    pub kind: Kind,
    pub session: String,
    pub sender: String,
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
}

impl SyncEnvelope {
    pub fn new(kind: Kind, session: impl Into<String>, sender: impl Into<String>, payload: impl Serialize) -> Self {
        Self {
            kind,
            session: session.into(),
            sender: sender.into(),
            seq: 0,
            payload: serde_json::to_value(payload).expect("payload types serialize"),
        }
    }

    /// Encodes as a single `\n`-terminated line.
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("envelope serializes");
        line.push('\n');
        line
    }

    /// Decodes one line (trailing newline optional).
    pub fn from_line(line: &str) -> Result<Self, DecodeError> {
        let value: Value = serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| DecodeError::Malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| DecodeError::Malformed("envelope must be a JSON object".into()))?;
        let kind_str = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| DecodeError::Malformed("missing string field `kind`".into()))?;
        let kind = Kind::parse(kind_str).ok_or_else(|| DecodeError::UnknownKind(kind_str.into()))?;
        let text = |name: &str| {
            obj.get(name)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| DecodeError::Malformed(format!("missing string field `{name}`")))
        };
        let seq = obj
            .get("seq")
            .and_then(Value::as_u64)
            .ok_or_else(|| DecodeError::Malformed("missing non-negative integer field `seq`".into()))?;
        Ok(Self {
            kind,
            session: text("session")?,
            sender: text("sender")?,
            seq,
            payload: obj.get("payload").cloned().unwrap_or(Value::Null),
        })
    }

    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, DecodeError> {
        let payload = if self.payload.is_null() {
            Value::Object(Default::default())
        } else {
            self.payload.clone()
        };
        serde_json::from_value(payload)
            .map_err(|e| DecodeError::Malformed(format!("{} payload: {e}", self.kind)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    MalformedEnvelope,
    UnknownKind,
    UnknownSession,
    DuplicateClientId,
    SecondPresenter,
    PresenterRequired,
    RoleModeMismatch,
    NotAMember,
    StaleSeq,
    InvalidUpdate,
    UnknownSubstructure,
    UnknownSnapshot,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::MalformedEnvelope => "MalformedEnvelope",
            ErrorCode::UnknownKind => "UnknownKind",
            ErrorCode::UnknownSession => "UnknownSession",
            ErrorCode::DuplicateClientId => "DuplicateClientId",
            ErrorCode::SecondPresenter => "SecondPresenter",
            ErrorCode::PresenterRequired => "PresenterRequired",
            ErrorCode::RoleModeMismatch => "RoleModeMismatch",
            ErrorCode::NotAMember => "NotAMember",
            ErrorCode::StaleSeq => "StaleSeq",
            ErrorCode::InvalidUpdate => "InvalidUpdate",
            ErrorCode::UnknownSubstructure => "UnknownSubstructure",
            ErrorCode::UnknownSnapshot => "UnknownSnapshot",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    /// Required when the session does not exist yet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SessionMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    /// Substructures this client mirrors; missing ones are created.
    #[serde(default)]
    pub substructures: Vec<SubstructureId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welcome {
    pub mode: SessionMode,
    pub role: Role,
    pub topology: TopologyF64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow: Option<TopologyF64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Updates {
    pub updates: Vec<ArmUpdateF64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FullStateRequest {
    /// Followers only: discard the private shadow and adopt the presenter's state.
    #[serde(default)]
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub topology: TopologyF64,
    /// A follower's private state, when it differs from `topology`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow: Option<TopologyF64>,
    #[serde(default)]
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSave {
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSaved {
    pub snapshot: SnapshotMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotListing {
    pub snapshots: Vec<SnapshotMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRestore {
    pub snapshot_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRestored {
    pub snapshot_id: String,
    pub updates: Vec<ArmUpdateF64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub mode: SessionMode,
    /// Members not listed get the mode's default role.
    #[serde(default)]
    pub roles: BTreeMap<ClientId, Role>,
}

/// Heartbeat probe. `sent` counts envelopes the prober has sent on this
/// connection, this one included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ping {
    #[serde(default)]
    pub sent: u64,
}

/// Heartbeat answer: echoes the probe's count and reports how many
/// envelopes the answering side has accepted from and sent to the prober
/// (excluding this reply). Comparing them exposes lost messages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pong {
    pub expect: u64,
    pub accepted: u64,
    pub sent: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_a_line() {
        let env = SyncEnvelope::new(Kind::Ping, "s1", "d0", Ping { sent: 3 });
        let line = env.to_line();
        assert!(line.ends_with('\n'));
        assert_eq!(line.matches('\n').count(), 1);
        assert_eq!(SyncEnvelope::from_line(&line).unwrap(), env);
    }

    #[test]
    fn ignores_unknown_fields() {
        let line = r#"{"kind":"PING","session":"s","sender":"c","seq":1,"payload":{},"extra":true}"#;
        assert_eq!(SyncEnvelope::from_line(line).unwrap().kind, Kind::Ping);
    }

    #[test]
    fn unknown_kind_is_distinguished() {
        let line = r#"{"kind":"TELEPORT","session":"s","sender":"c","seq":1,"payload":{}}"#;
        assert_eq!(
            SyncEnvelope::from_line(line),
            Err(DecodeError::UnknownKind("TELEPORT".into()))
        );
    }

    #[test]
    fn malformed_inputs() {
        for line in [
            "{",
            "[]",
            r#"{"kind":"PING","session":"s","sender":"c"}"#,
            r#"{"kind":"PING","session":"s","sender":"c","seq":-1}"#,
            r#"{"kind":"PING","session":3,"sender":"c","seq":1}"#,
        ] {
            assert!(matches!(SyncEnvelope::from_line(line), Err(DecodeError::Malformed(_))), "{line}");
        }
    }

    #[test]
    fn kinds_serialize_screaming() {
        for kind in Kind::ALL {
            assert_eq!(serde_json::to_value(kind).unwrap(), kind.as_str());
        }
    }

    #[test]
    fn error_codes_serialize_as_names() {
        let p = ErrorPayload { code: ErrorCode::StaleSeq, message: "x".into() };
        assert_eq!(serde_json::to_value(p).unwrap()["code"], "StaleSeq");
    }
}
