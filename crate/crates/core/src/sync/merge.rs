use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ident::SubstructureId;
use crate::scalar::Scalar;
use crate::shape::arm::in_travel;
use crate::shape::{ArmId, ArmState, AssemblyTopology};
use crate::sync::VersionStamp;

/// A stamped write to one arm register, as carried on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmUpdate<S> {
    pub substructure: SubstructureId,
    pub arm: ArmId,
    pub target: S,
    pub jointed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mate: Option<SubstructureId>,
    pub stamp: VersionStamp,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvalidUpdate {
    #[error("target {0} outside [0, E_MAX]")]
    TargetOutOfRange(f64),
    #[error("mate set on an update that is not jointed")]
    MateWithoutJoint,
    #[error("substructure {0} cannot mate with itself")]
    SelfMate(SubstructureId),
}

impl<S: Scalar> ArmUpdate<S> {
    /// Update that writes `state`'s register contents for this arm.
    pub fn from_state(substructure: SubstructureId, arm: ArmId, state: &ArmState<S>) -> Self {
        Self {
            substructure,
            arm,
            target: state.target,
            jointed: state.jointed,
            mate: state.mate.clone(),
            stamp: state.stamp.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), InvalidUpdate> {
        if !in_travel(self.target) {
            return Err(InvalidUpdate::TargetOutOfRange(self.target.as_f64()));
        }
        if !self.jointed && self.mate.is_some() {
            return Err(InvalidUpdate::MateWithoutJoint);
        }
        if self.mate.as_ref() == Some(&self.substructure) {
            return Err(InvalidUpdate::SelfMate(self.substructure.clone()));
        }
        Ok(())
    }
}

impl<S: Scalar> ArmState<S> {
    /// Applies `update` if its stamp is strictly greater than ours. Only the
    /// target and joint fields are written; the physical extension is left
    /// for actuation. Returns whether the update won.
    pub fn merge(&mut self, update: &ArmUpdate<S>) -> bool {
        if update.stamp <= self.stamp {
            return false;
        }
        self.target = update.target;
        self.jointed = update.jointed;
        self.mate = update.mate.clone();
        self.stamp = update.stamp.clone();
        true
    }
}

pub fn merge_arm<S: Scalar>(local: &ArmState<S>, update: &ArmUpdate<S>) -> ArmState<S> {
    let mut next = local.clone();
    next.merge(update);
    next
}

/// Outcome of folding a batch of updates into a topology.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergeReport<S> {
    /// Updates that won their register, in application order.
    pub applied: Vec<ArmUpdate<S>>,
    /// Substructures referenced by updates but absent locally.
    pub unknown: Vec<SubstructureId>,
}

impl<S: Scalar> AssemblyTopology<S> {
    /// Folds `updates` through [`ArmState::merge`]. Updates for unknown
    /// substructures are skipped and reported; the rest still apply.
    pub fn merge_updates<'a>(
        &mut self,
        updates: impl IntoIterator<Item = &'a ArmUpdate<S>>,
    ) -> MergeReport<S> {
        let mut report = MergeReport {
            applied: Vec::new(),
            unknown: Vec::new(),
        };
        for update in updates {
            match self.get_mut(&update.substructure) {
                Some(sub) => {
                    if sub.arm_mut(update.arm).merge(update) {
                        report.applied.push(update.clone());
                    }
                }
                None => {
                    if !report.unknown.contains(&update.substructure) {
                        report.unknown.push(update.substructure.clone());
                    }
                }
            }
        }
        report
    }

    /// Replaces targets, joint flags, stamps and the joint set with the
    /// authoritative copy. Extensions of shared substructures stay put;
    /// substructures missing locally are adopted as-is and extra local ones
    /// are dropped.
    pub fn resync_from(&mut self, authoritative: &AssemblyTopology<S>) {
        let mut next = AssemblyTopology::new();
        for auth in authoritative.substructures() {
            let mut sub = match self.get(&auth.id) {
                Some(local) => local.clone(),
                None => auth.clone(),
            };
            sub.resync_from(auth);
            next.ensure_substructure(&sub.id);
            *next.get_mut(&auth.id).unwrap() = sub;
        }
        *self = next;
    }
}

pub fn merge_topology<S: Scalar>(
    local: &AssemblyTopology<S>,
    updates: &[ArmUpdate<S>],
) -> (AssemblyTopology<S>, MergeReport<S>) {
    let mut next = local.clone();
    let report = next.merge_updates(updates);
    (next, report)
}

pub fn resync<S: Scalar>(
    follower: &AssemblyTopology<S>,
    authoritative: &AssemblyTopology<S>,
) -> AssemblyTopology<S> {
    let mut next = follower.clone();
    next.resync_from(authoritative);
    next
}
