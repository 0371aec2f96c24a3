//! Simulated shape-shifting substructures.
//!
//! Arms travel at finite speed toward their targets, hands can push them,
//! and each device talks to the hub through a protocol client that
//! survives disconnects and lossy links. [`world::World`] runs a whole
//! session on a virtual clock, deterministically, for scripted scenarios.

pub mod actuation;
pub mod client;
pub mod device;
pub mod live;
pub mod net;
pub mod scenario;
pub mod world;

pub use actuation::{step_toward, tick, ActuationParams};
pub use client::{Backoff, DeviceClient, DeviceConfig, LinkState};
pub use device::{DeviceState, PendingEdit, WrongSubstructure};
pub use net::{impaired_send, Link, NetProfile};
pub use scenario::{Action, Scenario, ScenarioError};
pub use world::{ScenarioReport, World};
