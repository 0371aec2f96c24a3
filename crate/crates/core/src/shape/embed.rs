//! Placement of an assembly into world coordinates.
//!
//! Crossing a joint from `A` (arm on axis `u`, sign `s`, extension `eA`) to
//! `B` (extension `eB`) places `B` at `pos(A) + s·u·(BODY + eA + eB)`.
//! Traversal is breadth-first from the anchor. Cycles must close within
//! `EPS_GEOM`, and no two body cubes may interpenetrate by more than
//! `EPS_GEOM`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ident::SubstructureId;
use crate::scalar::Scalar;
use crate::shape::arm::ArmId;
use crate::shape::topology::{AssemblyTopology, Joint};

pub type Point3<S> = [S; 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("anchor {0} is not part of the topology")]
    UnknownAnchor(SubstructureId),
    #[error("cycle through {id} does not close: discrepancy {discrepancy_mm} mm")]
    InconsistentCycle {
        id: SubstructureId,
        discrepancy_mm: f64,
    },
    #[error("bodies {0} and {1} overlap")]
    BodyCollision(SubstructureId, SubstructureId),
}

/// Body-center positions of every substructure reachable from the anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding<S> {
    pub positions: BTreeMap<SubstructureId, Point3<S>>,
}

impl<S: Scalar> Embedding<S> {
    pub fn position(&self, id: &SubstructureId) -> Option<Point3<S>> {
        self.positions.get(id).copied()
    }
}

/// Offset from `A`'s center to `B`'s center across a joint on `arm_a`.
pub fn joint_offset<S: Scalar>(arm_a: ArmId, ext_a: S, ext_b: S) -> Point3<S> {
    let mut offset = [S::zero(); 3];
    let span = S::body() + ext_a + ext_b;
    offset[arm_a.axis()] = if arm_a.sign() > 0 { span } else { -span };
    offset
}

fn max_abs_diff<S: Scalar>(p: Point3<S>, q: Point3<S>) -> S {
    (0..3).fold(S::zero(), |m, i| m.max((p[i] - q[i]).abs()))
}

/// Embeds with joints visited in sorted order.
pub fn embed_assembly<S: Scalar>(
    topology: &AssemblyTopology<S>,
    anchor: &SubstructureId,
    anchor_pos: Point3<S>,
) -> Result<Embedding<S>, EmbedError> {
    let joints: Vec<Joint> = topology.joints().into_iter().collect();
    embed_assembly_ordered(topology, anchor, anchor_pos, &joints)
}

/// Embeds visiting each body's joints in the order they appear in
/// `joint_order`. Joints not live in `topology` are ignored.
pub fn embed_assembly_ordered<S: Scalar>(
    topology: &AssemblyTopology<S>,
    anchor: &SubstructureId,
    anchor_pos: Point3<S>,
    joint_order: &[Joint],
) -> Result<Embedding<S>, EmbedError> {
    if !topology.contains(anchor) {
        return Err(EmbedError::UnknownAnchor(anchor.clone()));
    }
    let live = topology.joints();

    // (own arm, neighbor) per body, in caller order
    let mut adjacency: BTreeMap<&SubstructureId, Vec<(ArmId, &SubstructureId)>> = BTreeMap::new();
    for joint in joint_order.iter().filter(|j| live.contains(j)) {
        let (a, b) = (joint.a(), joint.b());
        adjacency.entry(&a.id).or_default().push((a.arm, &b.id));
        adjacency.entry(&b.id).or_default().push((b.arm, &a.id));
    }

    let mut positions = BTreeMap::new();
    positions.insert(anchor.clone(), anchor_pos);
    let mut queue = VecDeque::from([anchor]);
    while let Some(current) = queue.pop_front() {
        let here = positions[current];
        let Some(neighbors) = adjacency.get(current) else {
            continue;
        };
        for &(arm, neighbor) in neighbors {
            let ext_a = topology.get(current).expect("live joint").arms[arm].extension;
            let ext_b = topology.get(neighbor).expect("live joint").arms[arm.opposite()].extension;
            let offset = joint_offset(arm, ext_a, ext_b);
            let implied = [here[0] + offset[0], here[1] + offset[1], here[2] + offset[2]];
            match positions.get(neighbor) {
                Some(&placed) => {
                    let discrepancy = max_abs_diff(placed, implied);
                    if discrepancy > S::eps_geom() {
                        return Err(EmbedError::InconsistentCycle {
                            id: neighbor.clone(),
                            discrepancy_mm: discrepancy.as_f64(),
                        });
                    }
                }
                None => {
                    positions.insert(neighbor.clone(), implied);
                    queue.push_back(neighbor);
                }
            }
        }
    }

    check_collisions(&positions)?;
    Ok(Embedding { positions })
}

fn check_collisions<S: Scalar>(
    positions: &BTreeMap<SubstructureId, Point3<S>>,
) -> Result<(), EmbedError> {
    let placed: Vec<_> = positions.iter().collect();
    for (i, (id_a, pa)) in placed.iter().enumerate() {
        for (id_b, pb) in &placed[i + 1..] {
            let penetration = (0..3)
                .map(|k| S::body() - (pa[k] - pb[k]).abs())
                .fold(S::infinity(), |m, p| m.min(p));
            if penetration > S::eps_geom() {
                return Err(EmbedError::BodyCollision((*id_a).clone(), (*id_b).clone()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::topology::Endpoint;

    fn sid(s: &str) -> SubstructureId {
        SubstructureId::new(s).unwrap()
    }

    fn ep(s: &str, arm: ArmId) -> Endpoint {
        Endpoint::new(sid(s), arm)
    }

    fn topo(ids: &[&str]) -> AssemblyTopology<f64> {
        let mut t = AssemblyTopology::new();
        for id in ids {
            t.insert_substructure(sid(id)).unwrap();
        }
        t
    }

    fn set_ext(t: &mut AssemblyTopology<f64>, id: &str, arm: ArmId, ext: f64) {
        let a = t.get_mut(&sid(id)).unwrap().arm_mut(arm);
        a.extension = ext;
        a.target = ext;
    }

    #[test]
    fn single_joint_offset() {
        let mut t = topo(&["S1", "S2"]);
        t.add_joint(ep("S1", ArmId::PosX), ep("S2", ArmId::NegX)).unwrap();
        set_ext(&mut t, "S1", ArmId::PosX, 20.0);
        set_ext(&mut t, "S2", ArmId::NegX, 10.0);
        let e = embed_assembly(&t, &sid("S1"), [0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.position(&sid("S2")), Some([130.0, 0.0, 0.0]));
    }

    #[test]
    fn lone_substructure_sits_at_anchor() {
        let t = topo(&["S1"]);
        let e = embed_assembly(&t, &sid("S1"), [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.positions.len(), 1);
        assert_eq!(e.position(&sid("S1")), Some([1.0, 2.0, 3.0]));
    }

    #[test]
    fn unknown_anchor() {
        let t = topo(&["S1"]);
        assert_eq!(
            embed_assembly(&t, &sid("S7"), [0.0; 3]),
            Err(EmbedError::UnknownAnchor(sid("S7")))
        );
    }

    /// Square ring S1 -> S2 (+x) -> S3 (+y) -> S4 (-x) -> S1 (-y).
    fn ring(closing_ext: f64) -> AssemblyTopology<f64> {
        let mut t = topo(&["S1", "S2", "S3", "S4"]);
        t.add_joint(ep("S1", ArmId::PosX), ep("S2", ArmId::NegX)).unwrap();
        t.add_joint(ep("S2", ArmId::PosY), ep("S3", ArmId::NegY)).unwrap();
        t.add_joint(ep("S3", ArmId::NegX), ep("S4", ArmId::PosX)).unwrap();
        t.add_joint(ep("S4", ArmId::NegY), ep("S1", ArmId::PosY)).unwrap();
        for (id, arm) in [
            ("S1", ArmId::PosX),
            ("S2", ArmId::NegX),
            ("S2", ArmId::PosY),
            ("S3", ArmId::NegY),
            ("S3", ArmId::NegX),
            ("S4", ArmId::PosX),
            ("S1", ArmId::PosY),
        ] {
            set_ext(&mut t, id, arm, 15.0);
        }
        set_ext(&mut t, "S4", ArmId::NegY, closing_ext);
        t
    }

    #[test]
    fn consistent_ring_closes() {
        let e = embed_assembly(&ring(15.0), &sid("S1"), [0.0; 3]).unwrap();
        assert_eq!(e.position(&sid("S3")), Some([130.0, 130.0, 0.0]));
        assert_eq!(e.position(&sid("S4")), Some([0.0, 130.0, 0.0]));
    }

    #[test]
    fn broken_ring_reports_discrepancy() {
        // Direct S1 -> S4 span is 100 + 15 + 40 = 155 along y; the path
        // through S2 and S3 gives 130. Hand arithmetic: |155 - 130| = 25.
        match embed_assembly(&ring(40.0), &sid("S1"), [0.0; 3]) {
            Err(EmbedError::InconsistentCycle { discrepancy_mm, .. }) => {
                assert!((discrepancy_mm - 25.0).abs() < 1e-9, "{discrepancy_mm}");
            }
            other => panic!("expected inconsistent cycle, got {other:?}"),
        }
    }

    #[test]
    fn tolerance_absorbs_small_mismatch() {
        assert!(embed_assembly(&ring(15.4), &sid("S1"), [0.0; 3]).is_ok());
        assert!(embed_assembly(&ring(15.6), &sid("S1"), [0.0; 3]).is_err());
    }

    #[test]
    fn detects_collision() {
        // S1 +y S2 +x S3 -y S4 -x S5 walks a square and lands S5 on S1.
        let mut t = topo(&["S1", "S2", "S3", "S4", "S5"]);
        t.add_joint(ep("S1", ArmId::PosY), ep("S2", ArmId::NegY)).unwrap();
        t.add_joint(ep("S2", ArmId::PosX), ep("S3", ArmId::NegX)).unwrap();
        t.add_joint(ep("S3", ArmId::NegY), ep("S4", ArmId::PosY)).unwrap();
        t.add_joint(ep("S4", ArmId::NegX), ep("S5", ArmId::PosX)).unwrap();
        assert_eq!(
            embed_assembly(&t, &sid("S1"), [0.0; 3]),
            Err(EmbedError::BodyCollision(sid("S1"), sid("S5")))
        );
        // Full arm travel shifts S5 by at most 60 mm: still overlapping.
        set_ext(&mut t, "S2", ArmId::PosX, 60.0);
        assert!(matches!(
            embed_assembly(&t, &sid("S1"), [0.0; 3]),
            Err(EmbedError::BodyCollision(..))
        ));
    }

    #[test]
    fn collision_tolerance() {
        let mut positions = BTreeMap::new();
        positions.insert(sid("A"), [0.0, 0.0, 0.0]);
        positions.insert(sid("B"), [99.0, 0.0, 0.0]);
        assert_eq!(
            check_collisions(&positions),
            Err(EmbedError::BodyCollision(sid("A"), sid("B")))
        );
        positions.insert(sid("B"), [99.6, 0.0, 0.0]);
        assert!(check_collisions(&positions).is_ok());
        positions.insert(sid("B"), [100.0, 99.0, 0.0]);
        assert!(check_collisions(&positions).is_ok());
    }

    #[test]
    fn reroot_is_translation() {
        let t = ring(15.0);
        let from_s1 = embed_assembly(&t, &sid("S1"), [0.0; 3]).unwrap();
        let from_s3 = embed_assembly(&t, &sid("S3"), [0.0; 3]).unwrap();
        let shift = from_s1.position(&sid("S3")).unwrap();
        for (id, p) in &from_s3.positions {
            let q = from_s1.positions[id];
            for k in 0..3 {
                assert!((p[k] + shift[k] - q[k]).abs() < 1e-9);
            }
        }
    }
}
