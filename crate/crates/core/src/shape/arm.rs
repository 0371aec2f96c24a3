use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ident::SubstructureId;
use crate::scalar::{Scalar, ARM_COUNT};
use crate::sync::VersionStamp;

/// One of the six axis-aligned extension arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArmId {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown arm {0:?}, expected one of +x,-x,+y,-y,+z,-z")]
pub struct ParseArmError(pub String);

impl ArmId {
    pub const ALL: [ArmId; ARM_COUNT] = [
        ArmId::PosX,
        ArmId::NegX,
        ArmId::PosY,
        ArmId::NegY,
        ArmId::PosZ,
        ArmId::NegZ,
    ];

    /// The arm on the same axis with the opposite sign.
    pub fn opposite(self) -> ArmId {
        match self {
            ArmId::PosX => ArmId::NegX,
            ArmId::NegX => ArmId::PosX,
            ArmId::PosY => ArmId::NegY,
            ArmId::NegY => ArmId::PosY,
            ArmId::PosZ => ArmId::NegZ,
            ArmId::NegZ => ArmId::PosZ,
        }
    }

    /// Axis index: 0 = x, 1 = y, 2 = z.
    pub fn axis(self) -> usize {
        self.index() / 2
    }

    /// +1 for the positive arm of an axis, -1 for the negative one.
    pub fn sign(self) -> i8 {
        if self.index().is_multiple_of(2) {
            1
        } else {
            -1
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArmId::PosX => "+x",
            ArmId::NegX => "-x",
            ArmId::PosY => "+y",
            ArmId::NegY => "-y",
            ArmId::PosZ => "+z",
            ArmId::NegZ => "-z",
        }
    }
}

pub fn opposite_arm(arm: ArmId) -> ArmId {
    arm.opposite()
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArmId {
    type Err = ParseArmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArmId::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ParseArmError(s.to_string()))
    }
}

impl Serialize for ArmId {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> Result<Ser::Ok, Ser::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ArmId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("extension must be finite, got {0}")]
pub struct NonFiniteExtension(pub f64);

/// Clamps a length into the arm travel range `[0, E_MAX]`.
pub fn clamp_extension<S: Scalar>(x: S) -> Result<S, NonFiniteExtension> {
    if !x.is_finite() {
        return Err(NonFiniteExtension(x.as_f64()));
    }
    Ok(x.max(S::zero()).min(S::e_max()))
}

pub(crate) fn in_travel<S: Scalar>(x: S) -> bool {
    x.is_finite() && x >= S::zero() && x <= S::e_max()
}

/// Replicated register of one arm.
///
/// `extension` is the physical length; `target` is what the motor drives
/// toward. `mate` names the substructure whose opposite arm this tip is
/// magnetically joined to and is only meaningful while `jointed` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState<S> {
    pub extension: S,
    pub target: S,
    pub jointed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mate: Option<SubstructureId>,
    pub stamp: VersionStamp,
}

impl<S: Scalar> Default for ArmState<S> {
    fn default() -> Self {
        Self {
            extension: S::zero(),
            target: S::zero(),
            jointed: false,
            mate: None,
            stamp: VersionStamp::zero(),
        }
    }
}

impl<S: Scalar> ArmState<S> {
    pub fn at(extension: S) -> Self {
        Self {
            extension,
            target: extension,
            ..Self::default()
        }
    }

    pub fn is_settled(&self, tolerance: S) -> bool {
        (self.extension - self.target).abs() <= tolerance
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if !in_travel(self.extension) {
            return Err(format!("extension {} outside [0, E_MAX]", self.extension));
        }
        if !in_travel(self.target) {
            return Err(format!("target {} outside [0, E_MAX]", self.target));
        }
        if !self.jointed && self.mate.is_some() {
            return Err("mate set on an arm that is not jointed".into());
        }
        Ok(())
    }
}

/// The six arm registers of one substructure, indexed by [`ArmId`].
///
/// Serialized as a JSON object keyed `+x,-x,+y,-y,+z,-z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arms<S>([ArmState<S>; ARM_COUNT]);

impl<S: Scalar> Default for Arms<S> {
    fn default() -> Self {
        Self(std::array::from_fn(|_| ArmState::default()))
    }
}

impl<S> Arms<S> {
    pub fn from_array(arms: [ArmState<S>; ARM_COUNT]) -> Self {
        Self(arms)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ArmId, &ArmState<S>)> {
        ArmId::ALL.into_iter().zip(self.0.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ArmId, &mut ArmState<S>)> {
        ArmId::ALL.into_iter().zip(self.0.iter_mut())
    }
}

impl<S> Index<ArmId> for Arms<S> {
    type Output = ArmState<S>;
    fn index(&self, arm: ArmId) -> &ArmState<S> {
        &self.0[arm.index()]
    }
}

impl<S> IndexMut<ArmId> for Arms<S> {
    fn index_mut(&mut self, arm: ArmId) -> &mut ArmState<S> {
        &mut self.0[arm.index()]
    }
}

impl<S: Serialize> Serialize for Arms<S> {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> Result<Ser::Ok, Ser::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(ARM_COUNT))?;
        for (arm, state) in ArmId::ALL.iter().zip(self.0.iter()) {
            map.serialize_entry(arm.as_str(), state)?;
        }
        map.end()
    }
}

impl<'de, S: Scalar> Deserialize<'de> for Arms<S> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = std::collections::BTreeMap::<String, ArmState<S>>::deserialize(deserializer)?;
        if raw.len() != ARM_COUNT {
            return Err(D::Error::custom(format!(
                "arms must have {ARM_COUNT} entries, found {}",
                raw.len()
            )));
        }
        let mut slots: [Option<ArmState<S>>; ARM_COUNT] = Default::default();
        for (key, state) in raw {
            let arm: ArmId = key.parse().map_err(D::Error::custom)?;
            slots[arm.index()] = Some(state);
        }
        let arms = slots.map(|s| s.expect("six distinct keys fill six slots"));
        Ok(Arms(arms))
    }
}
