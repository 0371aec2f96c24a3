//! Scripted scenarios: who is in the session and what their hands do when.
//!
//! ```json
//! {
//!   "name": "demo", "session": "demo", "mode": "collaboration",
//!   "limit_ms": 60000,
//!   "net": {"latency_ms": 40, "jitter_ms": 10, "drop_prob": 0, "seed": 7},
//!   "devices": [{"id": "alice", "substructure": "S1"}],
//!   "events": [
//!     {"at_ms": 500, "device": "alice", "action": {"override": {"arm": "+x", "mm": 35}}},
//!     {"at_ms": 900, "device": "alice", "action": "disconnect"}
//!   ]
//! }
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use teleshift_core::{ArmId, Role, SessionMode, SubstructureId};
use teleshift_hub::{ClientId, SessionId};

use crate::actuation::ActuationParams;
use crate::net::NetProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Override { arm: ArmId, mm: f64 },
    Disconnect,
    Reconnect,
    Join { other_id: SubstructureId, arm: ArmId },
    SnapshotSave { label: String },
    /// A snapshot id, or a label meaning the latest snapshot with it.
    SnapshotRestore { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at_ms: u64,
    pub device: ClientId,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: ClientId,
    pub substructure: SubstructureId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    /// Start disconnected; join with a `reconnect` event.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub offline: bool,
}

fn default_limit() -> u64 {
    120_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub session: SessionId,
    pub mode: SessionMode,
    /// Virtual time budget for reaching quiescence.
    #[serde(default = "default_limit")]
    pub limit_ms: u64,
    #[serde(default)]
    pub net: NetProfile,
    #[serde(default)]
    pub actuation: ActuationParams,
    pub devices: Vec<DeviceSpec>,
    pub events: Vec<Event>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("BadScenario(line {line}: {reason})")]
    BadScenario { line: usize, reason: String },
    #[error("Timeout({limit_ms} ms)")]
    Timeout { limit_ms: u64 },
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
}

fn bad(reason: impl Into<String>) -> ScenarioError {
    ScenarioError::BadScenario {
        line: 0,
        reason: reason.into(),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::BadScenario {
            line: e.line(),
            reason: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.net.validate().map_err(|e| bad(format!("net: {e}")))?;
        ActuationParams::new(self.actuation.v_max, self.actuation.tick_ms)
            .map_err(|e| bad(e.to_string()))?;
        if self.devices.is_empty() {
            return Err(bad("no devices"));
        }
        let mut ids = BTreeSet::new();
        for d in &self.devices {
            if d.id.as_str().is_empty() {
                return Err(bad("device id must not be empty"));
            }
            if !ids.insert(&d.id) {
                return Err(bad(format!("device {} listed twice", d.id)));
            }
            if let Some(role) = d.role {
                if !self.mode.admits(role) {
                    return Err(bad(format!("device {}: role {role} not valid in {} mode", d.id, self.mode)));
                }
            }
        }
        if self.mode == SessionMode::Presentation {
            let presenters = self
                .devices
                .iter()
                .filter(|d| d.role == Some(Role::Presenter))
                .count();
            if presenters != 1 {
                return Err(bad(format!("presentation needs exactly one presenter, found {presenters}")));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            let Some(spec) = self.devices.iter().find(|d| d.id == e.device) else {
                return Err(bad(format!("event {i}: unknown device {}", e.device)));
            };
            match &e.action {
                Action::Override { mm, .. } if !mm.is_finite() => {
                    return Err(bad(format!("event {i}: override needs a finite length")))
                }
                Action::Join { other_id, .. } if *other_id == spec.substructure => {
                    return Err(bad(format!("event {i}: {} cannot join itself", other_id)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Events in execution order: by time, then by listing order.
    pub fn timeline(&self) -> Vec<Event> {
        let mut events = self.events.clone();
        events.sort_by_key(|e| e.at_ms);
        events
    }
}
