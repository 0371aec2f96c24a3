//! Replication: version stamps, per-arm last-writer-wins merge and
//! session-mode routing.

mod merge;
mod route;
mod stamp;

pub use merge::{merge_arm, merge_topology, resync, ArmUpdate, InvalidUpdate, MergeReport};
pub use route::{route_update, Role, RoleModeMismatch, RoutingDecision, SessionMode};
pub use stamp::{LamportClock, VersionStamp};
