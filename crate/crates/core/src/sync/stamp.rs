use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ident::ActorId;

/// Totally ordered write stamp: lamport counter first, actor id (as bytes)
/// breaks ties.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VersionStamp {
    pub lamport: u64,
    pub actor: ActorId,
}

impl VersionStamp {
    pub fn new(lamport: u64, actor: ActorId) -> Self {
        Self { lamport, actor }
    }

    /// Stamp of state nobody has written yet. Orders below every real stamp.
    pub fn zero() -> Self {
        Self {
            lamport: 0,
            actor: ActorId::origin(),
        }
    }
}

impl Default for VersionStamp {
    fn default() -> Self {
        Self::zero()
    }
}

impl fmt::Display for VersionStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {:?})", self.lamport, self.actor.as_str())
    }
}

/// One replica's logical clock. Operations on a clock must be serialized by
/// its owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LamportClock {
    counter: u64,
    actor: ActorId,
}

impl LamportClock {
    pub fn new(actor: ActorId) -> Self {
        Self { counter: 0, actor }
    }

    pub fn with_counter(actor: ActorId, counter: u64) -> Self {
        Self { counter, actor }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn actor(&self) -> &ActorId {
        &self.actor
    }

    /// Advances the counter and returns the stamp for a new local write.
    pub fn stamp_next(&mut self) -> VersionStamp {
        self.counter += 1;
        VersionStamp::new(self.counter, self.actor.clone())
    }

    /// Folds a remote stamp into the clock: `counter = max(counter, remote)`.
    pub fn observe(&mut self, remote: &VersionStamp) {
        self.counter = self.counter.max(remote.lamport);
    }
}
