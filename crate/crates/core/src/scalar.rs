//! Scalar abstraction for millimeter quantities.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Cube edge length of a substructure body, in millimeters.
pub const BODY_MM: f64 = 100.0;

/// Maximum arm travel (slide potentiometer range), in millimeters.
pub const E_MAX_MM: f64 = 60.0;

/// Geometric tolerance for cycle closure and body overlap, in millimeters.
pub const EPS_GEOM_MM: f64 = 0.5;

/// Number of extension arms on every substructure.
pub const ARM_COUNT: usize = 6;

/// Floating point type used for lengths and positions: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    fn body() -> Self {
        Self::lit(BODY_MM)
    }

    fn e_max() -> Self {
        Self::lit(E_MAX_MM)
    }

    fn eps_geom() -> Self {
        Self::lit(EPS_GEOM_MM)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
