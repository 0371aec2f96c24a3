use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::shape::arm::clamp_extension;
use crate::shape::{ArmUpdate, AssemblyTopology, TopologyError};
use crate::sync::LamportClock;

/// Named, timestamped copy of a whole assembly. Fields are read-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Snapshot<S: Scalar> {
    snapshot_id: String,
    label: String,
    created_at: u64,
    topology: AssemblyTopology<S>,
}

/// Snapshot without its topology, as listed to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub snapshot_id: String,
    pub label: String,
    pub created_at: u64,
}

impl<S: Scalar> Snapshot<S> {
    pub fn with_id(
        snapshot_id: impl Into<String>,
        label: impl Into<String>,
        created_at: u64,
        topology: &AssemblyTopology<S>,
    ) -> Self {
        Self {
            snapshot_id: snapshot_id.into(),
            label: label.into(),
            created_at,
            topology: topology.clone(),
        }
    }

    pub fn snapshot_id(&self) -> &str {
        &self.snapshot_id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn topology(&self) -> &AssemblyTopology<S> {
        &self.topology
    }

    pub fn meta(&self) -> SnapshotMeta {
        SnapshotMeta {
            snapshot_id: self.snapshot_id.clone(),
            label: self.label.clone(),
            created_at: self.created_at,
        }
    }
}

/// Captures `topology` under a fresh random id.
pub fn snapshot_of<S: Scalar>(
    topology: &AssemblyTopology<S>,
    label: impl Into<String>,
    now_ms: u64,
) -> Snapshot<S> {
    Snapshot::with_id(uuid::Uuid::new_v4().to_string(), label, now_ms, topology)
}

impl<S: Scalar> AssemblyTopology<S> {
    /// Drives the live assembly back toward `snapshot`.
    ///
    /// Every arm of every snapshot substructure gets the snapshot extension
    /// (clamped) as its target plus the snapshot's joint fields. Arms of other
    /// substructures that are jointed get unjointed, so the live joint set
    /// becomes the snapshot's. Extensions are not touched. All rewritten arms
    /// share one stamp drawn from `clock`, and the returned updates carry it
    /// so the restore replicates like any other edit.
    pub fn restore_targets(
        &mut self,
        snapshot: &Snapshot<S>,
        clock: &mut LamportClock,
    ) -> Result<Vec<ArmUpdate<S>>, TopologyError> {
        for id in snapshot.topology.ids() {
            if !self.contains(id) {
                return Err(TopologyError::UnknownSubstructure(id.clone()));
            }
        }
        let stamp = clock.stamp_next();
        let mut updates = Vec::new();
        for sub in self.substructures_mut() {
            let saved = snapshot.topology.get(&sub.id);
            for (arm, state) in sub.arms.iter_mut() {
                match saved {
                    Some(saved) => {
                        let src = saved.arm(arm);
                        state.target = clamp_extension(src.extension)
                            .expect("validated snapshot holds finite extensions");
                        state.jointed = src.jointed;
                        state.mate = src.mate.clone();
                    }
                    None if state.jointed => {
                        state.jointed = false;
                        state.mate = None;
                    }
                    None => continue,
                }
                state.stamp = stamp.clone();
                updates.push(ArmUpdate::from_state(sub.id.clone(), arm, state));
            }
        }
        Ok(updates)
    }
}

/// Value-semantics form of [`AssemblyTopology::restore_targets`].
pub fn restore_targets<S: Scalar>(
    topology: &AssemblyTopology<S>,
    snapshot: &Snapshot<S>,
    clock: &mut LamportClock,
) -> Result<(AssemblyTopology<S>, Vec<ArmUpdate<S>>), TopologyError> {
    let mut next = topology.clone();
    let updates = next.restore_targets(snapshot, clock)?;
    Ok((next, updates))
}
