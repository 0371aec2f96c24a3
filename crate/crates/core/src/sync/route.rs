use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    /// Every member edits the shared shape.
    Collaboration,
    /// One presenter drives; followers' edits stay private.
    Presentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Peer,
    Presenter,
    Follower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingDecision {
    BroadcastAllOthers,
    LocalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("role {role} is not valid in a {mode} session")]
pub struct RoleModeMismatch {
    pub mode: SessionMode,
    pub role: Role,
}

impl SessionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionMode::Collaboration => "collaboration",
            SessionMode::Presentation => "presentation",
        }
    }

    pub fn admits(self, role: Role) -> bool {
        matches!(
            (self, role),
            (SessionMode::Collaboration, Role::Peer)
                | (SessionMode::Presentation, Role::Presenter | Role::Follower)
        )
    }

    /// Role given to a member who did not ask for one.
    pub fn default_role(self) -> Role {
        match self {
            SessionMode::Collaboration => Role::Peer,
            SessionMode::Presentation => Role::Follower,
        }
    }
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Peer => "peer",
            Role::Presenter => "presenter",
            Role::Follower => "follower",
        }
    }
}

impl fmt::Display for SessionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SessionMode {
    type Err = String;

    /// Accepts the full names and the short CLI forms `collab` / `present`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collaboration" | "collab" => Ok(SessionMode::Collaboration),
            "presentation" | "present" => Ok(SessionMode::Presentation),
            other => Err(format!("unknown session mode {other:?}")),
        }
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "peer" => Ok(Role::Peer),
            "presenter" => Ok(Role::Presenter),
            "follower" => Ok(Role::Follower),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// Decides who hears about an edit made by a member with `origin_role`.
pub fn route_update(
    mode: SessionMode,
    origin_role: Role,
) -> Result<RoutingDecision, RoleModeMismatch> {
    match (mode, origin_role) {
        (SessionMode::Collaboration, Role::Peer)
        | (SessionMode::Presentation, Role::Presenter) => Ok(RoutingDecision::BroadcastAllOthers),
        (SessionMode::Presentation, Role::Follower) => Ok(RoutingDecision::LocalOnly),
        (mode, role) => Err(RoleModeMismatch { mode, role }),
    }
}
