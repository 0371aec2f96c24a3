//! State of one simulated substructure and the edits a hand can make.

use std::collections::VecDeque;

use thiserror::Error;

use teleshift_core::{
    clamp_extension, ActorId, ArmId, ArmUpdate, AssemblyTopology, LamportClock, Scalar,
    SubstructureId, SubstructureState, VersionStamp,
};

use crate::actuation::{self, ActuationParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("WrongSubstructure: update for {got}, device holds {held}")]
pub struct WrongSubstructure {
    pub held: SubstructureId,
    pub got: SubstructureId,
}

/// Edits made while offline, replayed after recovery.
#[derive(Debug, Clone, PartialEq)]
pub enum PendingEdit<S> {
    Override(ArmId, S),
    Join(ArmId, SubstructureId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState<S: Scalar = f64> {
    pub substructure: SubstructureState<S>,
    pub clock: LamportClock,
    pub connected: bool,
    pub pending_overrides: VecDeque<PendingEdit<S>>,
}

impl<S: Scalar> DeviceState<S> {
    pub fn new(substructure: SubstructureId, actor: ActorId) -> Self {
        Self {
            substructure: SubstructureState::new(substructure),
            clock: LamportClock::new(actor),
            connected: false,
            pending_overrides: VecDeque::new(),
        }
    }

    pub fn id(&self) -> &SubstructureId {
        &self.substructure.id
    }

    pub fn tick(&mut self, params: &ActuationParams) {
        actuation::tick(&mut self.substructure, params);
    }

    pub fn is_settled(&self, tolerance: S) -> bool {
        self.substructure.is_settled(tolerance)
    }

    /// A hand pushes `arm` to `mm`. The arm stays where it was put: the
    /// target follows the extension. Offline edits are also queued.
    pub fn apply_manual_override(&mut self, arm: ArmId, mm: S) -> ArmUpdate<S> {
        // NaN from a broken sensor leaves the arm where it is.
        let mm = clamp_extension(mm).unwrap_or(self.substructure.arm(arm).extension);
        let stamp = self.clock.stamp_next();
        let state = self.substructure.arm_mut(arm);
        state.extension = mm;
        state.target = mm;
        state.stamp = stamp;
        if !self.connected {
            self.pending_overrides.push_back(PendingEdit::Override(arm, mm));
        }
        ArmUpdate::from_state(self.substructure.id.clone(), arm, self.substructure.arm(arm))
    }

    /// Latches `arm` onto the opposite arm of `mate`. Returns the update for
    /// this arm and the matching one for the mate's arm, which together
    /// make the joint. `mate_target` is the mate arm's last known target, so
    /// joining does not move it.
    pub fn join(&mut self, arm: ArmId, mate: SubstructureId, mate_target: S) -> [ArmUpdate<S>; 2] {
        let stamp = self.clock.stamp_next();
        let state = self.substructure.arm_mut(arm);
        state.jointed = true;
        state.mate = Some(mate.clone());
        state.stamp = stamp;
        if !self.connected {
            self.pending_overrides.push_back(PendingEdit::Join(arm, mate.clone()));
        }
        let mine = ArmUpdate::from_state(self.substructure.id.clone(), arm, self.substructure.arm(arm));
        let theirs = ArmUpdate {
            substructure: mate,
            arm: arm.opposite(),
            target: mate_target,
            jointed: true,
            mate: Some(self.substructure.id.clone()),
            stamp: self.clock.stamp_next(),
        };
        [mine, theirs]
    }

    /// Merges one replicated register write. Stale writes only advance the
    /// clock.
    pub fn on_remote_update(&mut self, update: &ArmUpdate<S>) -> Result<bool, WrongSubstructure> {
        if update.substructure != self.substructure.id {
            return Err(WrongSubstructure {
                held: self.substructure.id.clone(),
                got: update.substructure.clone(),
            });
        }
        self.clock.observe(&update.stamp);
        Ok(self.substructure.arm_mut(update.arm).merge(update))
    }

    /// Makes every stamp in `topology` known to the clock.
    pub fn observe_all(&mut self, topology: &AssemblyTopology<S>) {
        let newest: Option<VersionStamp> = topology
            .substructures()
            .flat_map(|s| s.arms.iter().map(|(_, a)| a.stamp.clone()))
            .max();
        if let Some(stamp) = newest {
            self.clock.observe(&stamp);
        }
    }

    /// Adopts the authoritative registers for this substructure wholesale.
    pub fn resync(&mut self, view: &AssemblyTopology<S>) {
        self.observe_all(view);
        if let Some(auth) = view.get(&self.substructure.id) {
            self.substructure.resync_from(auth);
        }
    }

    /// Merges the authoritative registers and returns local registers that
    /// are newer than the hub's, i.e. writes the hub never received.
    pub fn reconcile(&mut self, view: &AssemblyTopology<S>) -> Vec<ArmUpdate<S>> {
        self.observe_all(view);
        let Some(auth) = view.get(&self.substructure.id) else {
            return Vec::new();
        };
        let mut newer = Vec::new();
        for arm in ArmId::ALL {
            let remote = auth.arm(arm);
            let local = self.substructure.arm_mut(arm);
            if remote.stamp > local.stamp {
                local.merge(&ArmUpdate::from_state(auth.id.clone(), arm, remote));
            } else if local.stamp > remote.stamp {
                newer.push(ArmUpdate::from_state(auth.id.clone(), arm, local));
            }
        }
        newer
    }
}
