//! Per-session state and the operations the hub performs on it.
//!
//! Nothing here knows about connections; [`crate::Hub`] maps connections to
//! members and turns [`SessionRecord`] results into envelopes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use teleshift_core::shape::blank_like;
use teleshift_core::sync::route_update;
use teleshift_core::{
    ArmUpdateF64, LamportClock, Role, RoutingDecision, SessionMode, SnapshotF64, SnapshotMeta,
    SubstructureId, TopologyError, TopologyF64,
};

use crate::envelope::ErrorCode;
use crate::{ClientId, SessionId};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{code}: {message}")]
pub struct HubError {
    pub code: ErrorCode,
    pub message: String,
}

impl HubError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

/// Authoritative state of one session plus the followers' private shadows.
///
/// The hub keeps its copies settled (extension == target) since it has no
/// motors; they describe the shape every replica is converging toward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SessionRepr", into = "SessionRepr")]
pub struct SessionRecord {
    pub id: SessionId,
    pub mode: SessionMode,
    pub roles: BTreeMap<ClientId, Role>,
    pub topology: TopologyF64,
    pub snapshots: Vec<SnapshotF64>,
    /// Every update applied to `topology`, in application order.
    pub log: Vec<ArmUpdateF64>,
    /// Followers whose private state differs from `topology`.
    pub shadows: BTreeMap<ClientId, TopologyF64>,
}

/// What an UPDATE did.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub routing: RoutingDecision,
    pub applied: Vec<ArmUpdateF64>,
    pub unknown: Vec<SubstructureId>,
}

/// What a SNAPSHOT_RESTORE did.
#[derive(Debug, Clone, PartialEq)]
pub struct RestoreOutcome {
    pub routing: RoutingDecision,
    pub updates: Vec<ArmUpdateF64>,
}

impl SessionRecord {
    pub fn new(id: SessionId, mode: SessionMode) -> Self {
        Self {
            id,
            mode,
            roles: BTreeMap::new(),
            topology: TopologyF64::new(),
            snapshots: Vec::new(),
            log: Vec::new(),
            shadows: BTreeMap::new(),
        }
    }

    pub fn presenter(&self) -> Option<&ClientId> {
        self.roles
            .iter()
            .find(|(_, r)| **r == Role::Presenter)
            .map(|(c, _)| c)
    }

    pub fn role_of(&self, client: &ClientId) -> Result<Role, HubError> {
        self.roles
            .get(client)
            .copied()
            .ok_or_else(|| HubError::new(ErrorCode::NotAMember, format!("{client} is not a member of {}", self.id)))
    }

    /// State a member sees: the follower's shadow if it has one, else the
    /// authoritative topology.
    pub fn view_of(&self, client: &ClientId) -> &TopologyF64 {
        self.shadows.get(client).unwrap_or(&self.topology)
    }

    pub fn is_diverged(&self, client: &ClientId) -> bool {
        self.shadows.contains_key(client)
    }

    /// Largest lamport counter anywhere in the session.
    pub fn max_lamport(&self) -> u64 {
        std::iter::once(&self.topology)
            .chain(self.shadows.values())
            .flat_map(|t| t.substructures())
            .flat_map(|s| s.arms.iter().map(|(_, a)| a.stamp.lamport))
            .max()
            .unwrap_or(0)
    }

    /// Picks the role for a joining client and checks it against the
    /// session. `presenter_online` reports whether the current presenter
    /// seat is held by a live connection.
    pub fn admit(
        &self,
        client: &ClientId,
        requested: Option<Role>,
        presenter_online: bool,
    ) -> Result<Role, HubError> {
        let role = match (requested, self.roles.get(client)) {
            (Some(r), _) => r,
            (None, Some(existing)) => *existing,
            (None, None) => self.mode.default_role(),
        };
        if !self.mode.admits(role) {
            return Err(HubError::new(
                ErrorCode::RoleModeMismatch,
                format!("role {role} is not valid in a {} session", self.mode),
            ));
        }
        match (role, self.presenter()) {
            (Role::Presenter, Some(p)) if p != client || presenter_online => {
                return Err(HubError::new(
                    ErrorCode::SecondPresenter,
                    format!("{} already has presenter {p}", self.id),
                ));
            }
            (Role::Follower, None) => {
                return Err(HubError::new(
                    ErrorCode::PresenterRequired,
                    format!("{} has no presenter yet; the first member must present", self.id),
                ));
            }
            _ => {}
        }
        Ok(role)
    }

    pub fn register(&mut self, client: ClientId, role: Role, substructures: &[SubstructureId]) {
        if self.roles.get(&client) != Some(&role) {
            self.shadows.remove(&client);
        }
        self.roles.insert(client, role);
        for id in substructures {
            self.topology.ensure_substructure(id);
            for shadow in self.shadows.values_mut() {
                shadow.ensure_substructure(id);
            }
        }
    }

    /// Applies a member's edits per the session's routing rule.
    pub fn apply_update(
        &mut self,
        from: &ClientId,
        updates: &[ArmUpdateF64],
    ) -> Result<UpdateOutcome, HubError> {
        let role = self.role_of(from)?;
        let routing = route_update(self.mode, role)
            .map_err(|e| HubError::new(ErrorCode::RoleModeMismatch, e.to_string()))?;
        for update in updates {
            update
                .validate()
                .map_err(|e| HubError::new(ErrorCode::InvalidUpdate, e.to_string()))?;
        }
        let (applied, unknown) = match routing {
            RoutingDecision::BroadcastAllOthers => {
                let report = self.apply_authoritative(updates);
                (report.0, report.1)
            }
            RoutingDecision::LocalOnly => {
                let mut shadow = self
                    .shadows
                    .remove(from)
                    .unwrap_or_else(|| self.topology.clone());
                let report = shadow.merge_updates(updates);
                shadow.settle();
                self.keep_shadow(from.clone(), shadow);
                (report.applied, report.unknown)
            }
        };
        Ok(UpdateOutcome {
            routing,
            applied,
            unknown,
        })
    }

    fn apply_authoritative(
        &mut self,
        updates: &[ArmUpdateF64],
    ) -> (Vec<ArmUpdateF64>, Vec<SubstructureId>) {
        let report = self.topology.merge_updates(updates);
        self.topology.settle();
        self.log.extend(report.applied.iter().cloned());
        let shadows = std::mem::take(&mut self.shadows);
        for (client, mut shadow) in shadows {
            shadow.merge_updates(&report.applied);
            shadow.settle();
            self.keep_shadow(client, shadow);
        }
        (report.applied, report.unknown)
    }

    fn keep_shadow(&mut self, client: ClientId, shadow: TopologyF64) {
        if shadow != self.topology {
            self.shadows.insert(client, shadow);
        }
    }

    /// Drops a follower's private state so it sees the presenter's again.
    pub fn reset_shadow(&mut self, client: &ClientId) {
        self.shadows.remove(client);
    }

    pub fn save_snapshot(
        &mut self,
        from: &ClientId,
        label: &str,
        now_ms: u64,
    ) -> Result<SnapshotMeta, HubError> {
        self.role_of(from)?;
        let id = format!("snap-{:04}", self.snapshots.len() + 1);
        let snapshot = SnapshotF64::with_id(id, label, now_ms, self.view_of(from));
        let meta = snapshot.meta();
        self.snapshots.push(snapshot);
        Ok(meta)
    }

    pub fn list_snapshots(&self) -> Vec<SnapshotMeta> {
        self.snapshots.iter().map(SnapshotF64::meta).collect()
    }

    /// Restores a snapshot onto the requester's view: the authoritative
    /// state for peers and presenters, the private shadow for followers.
    pub fn restore_snapshot(
        &mut self,
        from: &ClientId,
        snapshot_id: &str,
    ) -> Result<RestoreOutcome, HubError> {
        let role = self.role_of(from)?;
        let routing = route_update(self.mode, role)
            .map_err(|e| HubError::new(ErrorCode::RoleModeMismatch, e.to_string()))?;
        let snapshot = self
            .snapshots
            .iter()
            .find(|s| s.snapshot_id() == snapshot_id)
            .cloned()
            .ok_or_else(|| HubError::new(ErrorCode::UnknownSnapshot, format!("no snapshot {snapshot_id}")))?;
        let mut clock = LamportClock::with_counter(from.clone(), self.max_lamport());
        let restore_err = |e: TopologyError| match e {
            TopologyError::UnknownSubstructure(id) => {
                HubError::new(ErrorCode::UnknownSubstructure, format!("snapshot references {id}"))
            }
            other => HubError::new(ErrorCode::InvalidUpdate, other.to_string()),
        };
        let updates = match routing {
            RoutingDecision::BroadcastAllOthers => {
                let mut restored = self.topology.clone();
                let updates = restored.restore_targets(&snapshot, &mut clock).map_err(restore_err)?;
                self.apply_authoritative(&updates);
                updates
            }
            RoutingDecision::LocalOnly => {
                let mut shadow = self.view_of(from).clone();
                let updates = shadow.restore_targets(&snapshot, &mut clock).map_err(restore_err)?;
                shadow.settle();
                self.shadows.remove(from);
                self.keep_shadow(from.clone(), shadow);
                updates
            }
        };
        Ok(RestoreOutcome { routing, updates })
    }

    /// Switches mode and reassigns roles. Members missing from `roles` get
    /// the new mode's default role. Shadows are discarded.
    pub fn set_mode(
        &mut self,
        mode: SessionMode,
        roles: &BTreeMap<ClientId, Role>,
    ) -> Result<(), HubError> {
        if let Some(stranger) = roles.keys().find(|c| !self.roles.contains_key(*c)) {
            return Err(HubError::new(ErrorCode::NotAMember, format!("{stranger} is not a member")));
        }
        let next: BTreeMap<ClientId, Role> = self
            .roles
            .keys()
            .map(|c| (c.clone(), roles.get(c).copied().unwrap_or_else(|| mode.default_role())))
            .collect();
        check_roles(mode, &next).map_err(|(code, msg)| HubError::new(code, msg))?;
        self.mode = mode;
        self.roles = next;
        self.shadows.clear();
        Ok(())
    }

    /// Left fold of the update log over a blank copy of the topology.
    pub fn replay(&self) -> TopologyF64 {
        let mut topology = blank_like(&self.topology);
        topology.merge_updates(&self.log);
        topology.settle();
        topology
    }

    pub fn validate(&self) -> Result<(), String> {
        check_roles(self.mode, &self.roles).map_err(|(_, msg)| msg)?;
        self.topology.validate().map_err(|e| e.to_string())?;
        if !self.topology.is_settled(0.0) {
            return Err("authoritative topology is not settled".into());
        }
        if self.replay() != self.topology {
            return Err("topology does not match the update log".into());
        }
        for (client, shadow) in &self.shadows {
            if self.roles.get(client) != Some(&Role::Follower) {
                return Err(format!("shadow kept for non-follower {client}"));
            }
            shadow.validate().map_err(|e| format!("shadow of {client}: {e}"))?;
        }
        let mut ids: Vec<_> = self.snapshots.iter().map(|s| s.snapshot_id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err("duplicate snapshot ids".into());
        }
        Ok(())
    }
}

fn check_roles(mode: SessionMode, roles: &BTreeMap<ClientId, Role>) -> Result<(), (ErrorCode, String)> {
    if let Some((c, r)) = roles.iter().find(|(_, r)| !mode.admits(**r)) {
        return Err((ErrorCode::RoleModeMismatch, format!("{c} has role {r} in a {mode} session")));
    }
    if mode == SessionMode::Presentation && !roles.is_empty() {
        let presenters = roles.values().filter(|r| **r == Role::Presenter).count();
        match presenters {
            1 => {}
            0 => return Err((ErrorCode::PresenterRequired, "presentation session needs exactly one presenter".into())),
            _ => return Err((ErrorCode::SecondPresenter, "presentation session has more than one presenter".into())),
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SessionRepr {
    id: SessionId,
    mode: SessionMode,
    roles: BTreeMap<ClientId, Role>,
    topology: TopologyF64,
    snapshots: Vec<SnapshotF64>,
    log: Vec<ArmUpdateF64>,
    #[serde(default)]
    shadows: BTreeMap<ClientId, TopologyF64>,
}

impl From<SessionRecord> for SessionRepr {
    fn from(s: SessionRecord) -> Self {
        Self {
            id: s.id,
            mode: s.mode,
            roles: s.roles,
            topology: s.topology,
            snapshots: s.snapshots,
            log: s.log,
            shadows: s.shadows,
        }
    }
}

impl TryFrom<SessionRepr> for SessionRecord {
    type Error = String;

    fn try_from(r: SessionRepr) -> Result<Self, Self::Error> {
        let record = SessionRecord {
            id: r.id,
            mode: r.mode,
            roles: r.roles,
            topology: r.topology,
            snapshots: r.snapshots,
            log: r.log,
            shadows: r.shadows,
        };
        record.validate()?;
        Ok(record)
    }
}
