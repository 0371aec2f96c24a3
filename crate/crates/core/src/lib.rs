//! Shape model and replication core for networked shape-shifting
//! substructures.
//!
//! A substructure is a cube body with six axis-aligned extension arms.
//! Substructures join arm-tip to arm-tip into assemblies; [`shape`] places
//! assemblies in space and captures snapshots, [`sync`] keeps replicas of
//! the arm registers convergent with last-writer-wins merge.
//!
//! Everything geometric is generic over a [`Scalar`] (`f32` or `f64`); the
//! `*F64` aliases below are what the hub and simulator use.

pub mod canonical;
pub mod ident;
pub mod scalar;
pub mod shape;
pub mod sync;

pub use ident::{ActorId, IdentError, SubstructureId};
pub use scalar::{Scalar, ARM_COUNT, BODY_MM, EPS_GEOM_MM, E_MAX_MM};
pub use canonical::{canonical_json, state_hash};
pub use shape::{
    add_joint, blank_like, clamp_extension, embed_assembly, embed_assembly_ordered, joint_offset,
    opposite_arm, restore_targets, snapshot_of, ArmId, ArmState, AssemblyTopology, EmbedError,
    Embedding, Endpoint, Joint, Point3, Snapshot, SnapshotMeta, SubstructureState, TopologyError,
};
pub use sync::{
    merge_arm, merge_topology, resync, route_update, ArmUpdate, InvalidUpdate, LamportClock,
    MergeReport, Role, RoleModeMismatch, RoutingDecision, SessionMode, VersionStamp,
};

pub type ArmStateF64 = ArmState<f64>;
pub type SubstructureF64 = SubstructureState<f64>;
pub type TopologyF64 = AssemblyTopology<f64>;
pub type ArmUpdateF64 = ArmUpdate<f64>;
pub type SnapshotF64 = Snapshot<f64>;
pub type EmbeddingF64 = Embedding<f64>;

pub type TopologyF32 = AssemblyTopology<f32>;
