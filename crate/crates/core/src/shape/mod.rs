//! Substructures, joints, assembly geometry and snapshots.

pub(crate) mod arm;
mod embed;
mod snapshot;
mod topology;

pub use arm::{clamp_extension, opposite_arm, ArmId, ArmState, Arms, NonFiniteExtension, ParseArmError};
pub use embed::{embed_assembly, embed_assembly_ordered, joint_offset, EmbedError, Embedding, Point3};
pub use snapshot::{restore_targets, snapshot_of, Snapshot, SnapshotMeta};
pub use topology::{
    add_joint, blank_like, AssemblyTopology, Endpoint, Joint, SubstructureState, TopologyError,
};

pub(crate) use crate::sync::ArmUpdate;
