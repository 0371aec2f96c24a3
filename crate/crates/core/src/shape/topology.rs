use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ident::SubstructureId;
use crate::scalar::Scalar;
use crate::shape::arm::{ArmId, ArmState, Arms};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("unknown substructure {0}")]
    UnknownSubstructure(SubstructureId),
    #[error("duplicate substructure {0}")]
    DuplicateSubstructure(SubstructureId),
    #[error("arms {0} and {1} do not oppose each other")]
    NonOpposingArms(ArmId, ArmId),
    #[error("substructure {0} cannot be joined to itself")]
    SelfJoint(SubstructureId),
    #[error("arm {1} of {0} is already jointed")]
    ArmOccupied(SubstructureId, ArmId),
    #[error("{0}")]
    Invalid(String),
}

/// A device's identity plus its six arm registers; the unit of replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SubstructureState<S> {
    pub id: SubstructureId,
    pub arms: Arms<S>,
}

impl<S: Scalar> SubstructureState<S> {
    pub fn new(id: SubstructureId) -> Self {
        Self {
            id,
            arms: Arms::default(),
        }
    }

    pub fn arm(&self, arm: ArmId) -> &ArmState<S> {
        &self.arms[arm]
    }

    pub fn arm_mut(&mut self, arm: ArmId) -> &mut ArmState<S> {
        &mut self.arms[arm]
    }

    pub fn is_settled(&self, tolerance: S) -> bool {
        self.arms.iter().all(|(_, a)| a.is_settled(tolerance))
    }

    /// Snaps every extension onto its target.
    pub fn settle(&mut self) {
        for (_, arm) in self.arms.iter_mut() {
            arm.extension = arm.target;
        }
    }

    /// Replaces targets, joint flags and stamps with `authoritative`'s,
    /// leaving physical extensions alone.
    pub fn resync_from(&mut self, authoritative: &SubstructureState<S>) {
        for (arm, state) in self.arms.iter_mut() {
            let src = &authoritative.arms[arm];
            state.target = src.target;
            state.jointed = src.jointed;
            state.mate = src.mate.clone();
            state.stamp = src.stamp.clone();
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        for (arm, state) in self.arms.iter() {
            state
                .check()
                .map_err(|e| TopologyError::Invalid(format!("{} arm {arm}: {e}", self.id)))?;
            if state.mate.as_ref() == Some(&self.id) {
                return Err(TopologyError::Invalid(format!(
                    "{} arm {arm}: mate refers to itself",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// One side of a joint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub id: SubstructureId,
    pub arm: ArmId,
}

impl Endpoint {
    pub fn new(id: SubstructureId, arm: ArmId) -> Self {
        Self { id, arm }
    }
}

/// Magnet connection between two opposite arm tips of different
/// substructures. Stored with `a < b` so `Joint(a,b) == Joint(b,a)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Joint {
    a: Endpoint,
    b: Endpoint,
}

impl Joint {
    pub fn new(a: Endpoint, b: Endpoint) -> Result<Self, TopologyError> {
        if a.id == b.id {
            return Err(TopologyError::SelfJoint(a.id));
        }
        if b.arm != a.arm.opposite() {
            return Err(TopologyError::NonOpposingArms(a.arm, b.arm));
        }
        Ok(if a <= b { Self { a, b } } else { Self { a: b, b: a } })
    }

    pub fn a(&self) -> &Endpoint {
        &self.a
    }

    pub fn b(&self) -> &Endpoint {
        &self.b
    }

    pub fn touches(&self, id: &SubstructureId) -> bool {
        &self.a.id == id || &self.b.id == id
    }
}

/// Substructures plus the joints between them.
///
/// Joints are derived from the arm registers: a joint between `(A, arm)` and
/// `(B, opposite(arm))` is live exactly when both arms are jointed and each
/// names the other as its mate. That keeps joint state inside the per-arm
/// registers so it replicates with the same merge rule as extensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr<S>", into = "TopologyRepr<S>", bound = "S: Scalar")]
pub struct AssemblyTopology<S: Scalar> {
    substructures: BTreeMap<SubstructureId, SubstructureState<S>>,
}

impl<S: Scalar> Default for AssemblyTopology<S> {
    fn default() -> Self {
        Self {
            substructures: BTreeMap::new(),
        }
    }
}

impl<S: Scalar> AssemblyTopology<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a topology, validating every invariant.
    pub fn from_substructures(
        subs: impl IntoIterator<Item = SubstructureState<S>>,
    ) -> Result<Self, TopologyError> {
        let mut substructures = BTreeMap::new();
        for sub in subs {
            if substructures.contains_key(&sub.id) {
                return Err(TopologyError::DuplicateSubstructure(sub.id));
            }
            substructures.insert(sub.id.clone(), sub);
        }
        let topology = Self { substructures };
        topology.validate()?;
        Ok(topology)
    }

    /// Adds a fresh substructure with all arms retracted and unwritten.
    pub fn insert_substructure(&mut self, id: SubstructureId) -> Result<(), TopologyError> {
        if self.substructures.contains_key(&id) {
            return Err(TopologyError::DuplicateSubstructure(id));
        }
        self.substructures
            .insert(id.clone(), SubstructureState::new(id));
        Ok(())
    }

    /// Adds the substructure unless it is already present.
    pub fn ensure_substructure(&mut self, id: &SubstructureId) {
        if !self.substructures.contains_key(id) {
            self.substructures
                .insert(id.clone(), SubstructureState::new(id.clone()));
        }
    }

    pub fn get<Q>(&self, id: &Q) -> Option<&SubstructureState<S>>
    where
        SubstructureId: Borrow<Q>,
        Q: Ord + ?Sized,
    {
        self.substructures.get(id)
    }

    pub fn get_mut<Q>(&mut self, id: &Q) -> Option<&mut SubstructureState<S>>
    where
        SubstructureId: Borrow<Q>,
        Q: Ord + ?Sized,
    {
        self.substructures.get_mut(id)
    }

    pub fn contains<Q>(&self, id: &Q) -> bool
    where
        SubstructureId: Borrow<Q>,
        Q: Ord + ?Sized,
    {
        self.substructures.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.substructures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.substructures.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &SubstructureId> {
        self.substructures.keys()
    }

    pub fn substructures(&self) -> impl Iterator<Item = &SubstructureState<S>> {
        self.substructures.values()
    }

    pub fn substructures_mut(&mut self) -> impl Iterator<Item = &mut SubstructureState<S>> {
        self.substructures.values_mut()
    }

    pub fn arm(&self, endpoint: &Endpoint) -> Option<&ArmState<S>> {
        self.substructures.get(&endpoint.id).map(|s| &s.arms[endpoint.arm])
    }

    /// Joints whose two arms agree with each other.
    pub fn joints(&self) -> BTreeSet<Joint> {
        let mut joints = BTreeSet::new();
        for sub in self.substructures.values() {
            for (arm, state) in sub.arms.iter() {
                let Some(mate) = state.mate.as_ref().filter(|_| state.jointed) else {
                    continue;
                };
                let Some(other) = self.substructures.get(mate) else {
                    continue;
                };
                let back = &other.arms[arm.opposite()];
                if back.jointed && back.mate.as_ref() == Some(&sub.id) {
                    let joint = Joint::new(
                        Endpoint::new(sub.id.clone(), arm),
                        Endpoint::new(mate.clone(), arm.opposite()),
                    )
                    .expect("distinct ids on opposite arms");
                    joints.insert(joint);
                }
            }
        }
        joints
    }

    /// Joins `(a)` to `(b)`, setting both arms jointed and naming each
    /// other as mates. Stamps are left untouched.
    pub fn add_joint(&mut self, a: Endpoint, b: Endpoint) -> Result<Joint, TopologyError> {
        for end in [&a, &b] {
            if !self.contains(&end.id) {
                return Err(TopologyError::UnknownSubstructure(end.id.clone()));
            }
        }
        let joint = Joint::new(a.clone(), b.clone())?;
        for end in [&a, &b] {
            if self.substructures[&end.id].arms[end.arm].jointed {
                return Err(TopologyError::ArmOccupied(end.id.clone(), end.arm));
            }
        }
        for (end, other) in [(&a, &b), (&b, &a)] {
            let arm = &mut self.substructures.get_mut(&end.id).unwrap().arms[end.arm];
            arm.jointed = true;
            arm.mate = Some(other.id.clone());
        }
        Ok(joint)
    }

    pub fn settle(&mut self) {
        for sub in self.substructures.values_mut() {
            sub.settle();
        }
    }

    pub fn is_settled(&self, tolerance: S) -> bool {
        self.substructures.values().all(|s| s.is_settled(tolerance))
    }

    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), TopologyError> {
        for (id, sub) in &self.substructures {
            if id != &sub.id {
                return Err(TopologyError::Invalid(format!(
                    "substructure keyed {id} carries id {}",
                    sub.id
                )));
            }
            sub.validate()?;
        }
        Ok(())
    }
}

/// Same topology with every arm reset to the unwritten state.
pub fn blank_like<S: Scalar>(topology: &AssemblyTopology<S>) -> AssemblyTopology<S> {
    let mut blank = AssemblyTopology::new();
    for id in topology.ids() {
        blank.ensure_substructure(id);
    }
    blank
}

/// Value-semantics form of [`AssemblyTopology::add_joint`].
pub fn add_joint<S: Scalar>(
    topology: &AssemblyTopology<S>,
    a: Endpoint,
    b: Endpoint,
) -> Result<AssemblyTopology<S>, TopologyError> {
    let mut next = topology.clone();
    next.add_joint(a, b)?;
    Ok(next)
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct TopologyRepr<S> {
    substructures: Vec<SubstructureState<S>>,
    joints: Vec<Joint>,
}

impl<S: Scalar> From<AssemblyTopology<S>> for TopologyRepr<S> {
    fn from(t: AssemblyTopology<S>) -> Self {
        let joints = t.joints().into_iter().collect();
        Self {
            substructures: t.substructures.into_values().collect(),
            joints,
        }
    }
}

impl<S: Scalar> TryFrom<TopologyRepr<S>> for AssemblyTopology<S> {
    type Error = TopologyError;

    fn try_from(repr: TopologyRepr<S>) -> Result<Self, Self::Error> {
        let topology = AssemblyTopology::from_substructures(repr.substructures)?;
        let listed: BTreeSet<Joint> = repr.joints.into_iter().collect();
        for joint in &listed {
            for end in [joint.a(), joint.b()] {
                if !topology.contains(&end.id) {
                    return Err(TopologyError::Invalid(format!(
                        "joint endpoint references unknown substructure {}",
                        end.id
                    )));
                }
            }
        }
        let derived = topology.joints();
        let mut used = BTreeSet::new();
        for joint in &listed {
            for end in [joint.a(), joint.b()] {
                if !used.insert(end.clone()) {
                    return Err(TopologyError::Invalid(format!(
                        "arm {} of {} appears in more than one joint",
                        end.arm, end.id
                    )));
                }
            }
            if !derived.contains(joint) {
                return Err(TopologyError::Invalid(format!(
                    "joint {}{} <-> {}{} is not backed by jointed arms",
                    joint.a().id,
                    joint.a().arm,
                    joint.b().id,
                    joint.b().arm
                )));
            }
        }
        if let Some(missing) = derived.difference(&listed).next() {
            return Err(TopologyError::Invalid(format!(
                "jointed arms {}{} <-> {}{} missing from joint list",
                missing.a().id,
                missing.a().arm,
                missing.b().id,
                missing.b().arm
            )));
        }
        Ok(topology)
    }
}
