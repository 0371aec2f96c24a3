//! Finite-speed arm travel.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use teleshift_core::{Scalar, SubstructureState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationParams {
    /// Arm speed in mm/s.
    pub v_max: f64,
    /// Simulation step in milliseconds.
    pub tick_ms: u64,
}

impl Default for ActuationParams {
    fn default() -> Self {
        Self {
            v_max: 30.0,
            tick_ms: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("actuation parameters need v_max > 0 and tick > 0 (got {v_max} mm/s, {tick_ms} ms)")]
pub struct BadActuation {
    pub v_max: f64,
    pub tick_ms: u64,
}

impl ActuationParams {
    pub fn new(v_max: f64, tick_ms: u64) -> Result<Self, BadActuation> {
        if v_max.is_finite() && v_max > 0.0 && tick_ms > 0 {
            Ok(Self { v_max, tick_ms })
        } else {
            Err(BadActuation { v_max, tick_ms })
        }
    }

    /// Longest distance an arm covers in one tick.
    pub fn step_mm(&self) -> f64 {
        self.v_max * self.tick_ms as f64 / 1000.0
    }

    /// Ticks needed to cover `distance` mm from rest.
    pub fn ticks_to_cover(&self, distance: f64) -> u64 {
        (distance.abs() / self.step_mm()).ceil() as u64
    }
}

/// Moves `extension` toward `target` by at most `step`, landing exactly on
/// the target once within reach.
pub fn step_toward<S: Scalar>(extension: S, target: S, step: S) -> S {
    let gap = target - extension;
    if gap.abs() <= step {
        target
    } else {
        extension + step * gap.signum()
    }
}

/// Advances every arm of `sub` by one tick.
pub fn tick<S: Scalar>(sub: &mut SubstructureState<S>, params: &ActuationParams) {
    let step = S::lit(params.step_mm());
    for (_, arm) in sub.arms.iter_mut() {
        arm.extension = step_toward(arm.extension, arm.target, step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use teleshift_core::ArmId;

    fn one_arm(ext: f64, target: f64) -> f64 {
        let mut sub = SubstructureState::<f64>::new("S1".parse().unwrap());
        let arm = sub.arm_mut(ArmId::PosX);
        arm.extension = ext;
        arm.target = target;
        tick(&mut sub, &ActuationParams::default());
        sub.arm(ArmId::PosX).extension
    }

    #[test]
    fn rate_law() {
        assert_eq!(ActuationParams::default().step_mm(), 0.6);
        assert_eq!(one_arm(10.0, 10.0), 10.0);
        assert_eq!(one_arm(10.0, 20.0), 10.6);
        assert_eq!(one_arm(10.5, 10.0), 10.0);
        assert_eq!(one_arm(20.0, 0.0), 19.4);
    }

    #[test]
    fn rejects_degenerate_params() {
        assert!(ActuationParams::new(0.0, 20).is_err());
        assert!(ActuationParams::new(30.0, 0).is_err());
        assert!(ActuationParams::new(f64::NAN, 20).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let mut sub = SubstructureState::<f32>::new("S1".parse().unwrap());
        sub.arm_mut(ArmId::NegY).target = 1.0;
        tick(&mut sub, &ActuationParams::default());
        assert!((sub.arm(ArmId::NegY).extension - 0.6).abs() < 1e-6);
        tick(&mut sub, &ActuationParams::default());
        assert_eq!(sub.arm(ArmId::NegY).extension, 1.0);
    }
}
