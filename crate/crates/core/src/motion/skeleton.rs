use serde::{Deserialize, Serialize};

use super::quat::{self, Quat, Vec3};
use crate::error::{Error, Result};

/// Quaternion norms further than this from one are rejected by `fk`.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// Parent index per joint, `-1` for the root.
    pub parents: Vec<i64>,
    pub offsets: Vec<Vec3>,
    pub foot_joints: Vec<usize>,
}

/// Proportions of the default eight-joint biped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BipedSpec {
    pub leg_length: f64,
    pub hip_half_width: f64,
    pub spine_length: f64,
    pub head_length: f64,
    pub arm_length: f64,
}

impl Default for BipedSpec {
    fn default() -> Self {
        Self {
            leg_length: 0.9,
            hip_half_width: 0.1,
            spine_length: 0.5,
            head_length: 0.25,
            arm_length: 0.55,
        }
    }
}

pub const PELVIS: usize = 0;
pub const SPINE: usize = 1;
pub const HEAD: usize = 2;
pub const HIP_L: usize = 3;
pub const FOOT_L: usize = 4;
pub const HIP_R: usize = 5;
pub const FOOT_R: usize = 6;
pub const HAND: usize = 7;

impl Skeleton {
    pub fn new(names: Vec<String>, parents: Vec<i64>, offsets: Vec<Vec3>, foot_joints: Vec<usize>) -> Result<Self> {
        let j = parents.len();
        if j == 0 || names.len() != j || offsets.len() != j {
            return Err(Error::InvalidArgument("skeleton arrays disagree in length".into()));
        }
        if parents[0] != -1 || parents.iter().filter(|&&p| p == -1).count() != 1 {
            return Err(Error::InvalidArgument("skeleton needs exactly one root at index 0".into()));
        }
        for (i, &p) in parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= i {
                return Err(Error::InvalidArgument(format!("joint {} has parent {}", i, p)));
            }
            if quat::vnorm(offsets[i]) <= 0.0 {
                return Err(Error::InvalidArgument(format!("joint {} has a zero-length bone", i)));
            }
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite bone offset".into()));
        }
        if foot_joints.iter().any(|&f| f >= j) {
            return Err(Error::InvalidArgument("foot joint out of range".into()));
        }
        Ok(Self { names, parents, offsets, foot_joints })
    }

    /// Z-up biped: pelvis, spine, head, two stiff legs (hip and foot), and
    /// one hand hanging from the spine.
    pub fn biped(spec: &BipedSpec) -> Result<Self> {
        let lengths = [spec.leg_length, spec.hip_half_width, spec.spine_length, spec.head_length, spec.arm_length];
        if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("biped lengths must be positive".into()));
        }
        let names = ["pelvis", "spine", "head", "hip_l", "foot_l", "hip_r", "foot_r", "hand"];
        let w = spec.hip_half_width;
        let offsets = vec![
            [0.0, 0.0, 0.0],
            [0.0, 0.0, spec.spine_length],
            [0.0, 0.0, spec.head_length],
            [0.0, w, 0.0],
            [0.0, 0.0, -spec.leg_length],
            [0.0, -w, 0.0],
            [0.0, 0.0, -spec.leg_length],
            [0.0, -0.35 * spec.arm_length, -0.9 * spec.arm_length],
        ];
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            vec![-1, 0, 1, 0, 3, 0, 5, 1],
            offsets,
            vec![FOOT_L, FOOT_R],
        )
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        (self.parents[j] >= 0).then(|| self.parents[j] as usize)
    }

    /// Per-frame feature width: root, rotations, positions, velocities, contacts.
    pub fn frame_dim(&self) -> usize {
        3 + 10 * self.joints() + self.foot_joints.len()
    }

    /// Global joint positions for a root translation and local rotations.
    pub fn fk(&self, root: Vec3, rotations: &[Quat]) -> Result<Vec<Vec3>> {
        if rotations.len() != self.joints() {
            return Err(Error::InvalidArgument(format!(
                "{} rotations for {} joints",
                rotations.len(),
                self.joints()
            )));
        }
        if let Some(q) = rotations.iter().find(|q| (quat::norm(**q) - 1.0).abs() > UNIT_TOLERANCE) {
            return Err(Error::InvalidArgument(format!("quaternion norm {} is not unit", quat::norm(*q))));
        }
        let mut global: Vec<Quat> = Vec::with_capacity(self.joints());
        let mut pos: Vec<Vec3> = Vec::with_capacity(self.joints());
        for (j, &q) in rotations.iter().enumerate() {
            match self.parent(j) {
                None => {
                    global.push(q);
                    pos.push(root);
                }
                Some(p) => {
                    pos.push(quat::vadd(pos[p], quat::rotate(global[p], self.offsets[j])));
                    global.push(quat::mul(global[p], q));
                }
            }
        }
        Ok(pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::quat::{yaw, IDENTITY};

    fn chain() -> Skeleton {
        Skeleton::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![-1, 0, 1],
            vec![[0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            vec![2],
        )
        .unwrap()
    }

    fn close(a: Vec3, b: Vec3) -> bool {
        quat::vnorm(quat::vsub(a, b)) < 1e-12
    }

    #[test]
    fn identity_chain() {
        let p = chain().fk([0.0; 3], &[IDENTITY; 3]).unwrap();
        assert!(close(p[1], [1.0, 0.0, 0.0]) && close(p[2], [2.0, 0.0, 0.0]));
    }

    #[test]
    fn root_quarter_turn() {
        let p = chain()
            .fk([0.0; 3], &[yaw(std::f64::consts::FRAC_PI_2), IDENTITY, IDENTITY])
            .unwrap();
        assert!(close(p[1], [0.0, 1.0, 0.0]) && close(p[2], [0.0, 2.0, 0.0]));
    }

    #[test]
    fn rejects_bad_topology() {
        let bad = Skeleton::new(vec!["a".into(), "b".into()], vec![-1, 1], vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![]);
        assert!(bad.is_err());
        let two_roots = Skeleton::new(vec!["a".into(), "b".into()], vec![-1, -1], vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![]);
        assert!(two_roots.is_err());
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        assert!(chain().fk([0.0; 3], &[[2.0, 0.0, 0.0, 0.0], IDENTITY, IDENTITY]).is_err());
    }

    #[test]
    fn biped_dimensions() {
        let s = Skeleton::biped(&BipedSpec::default()).unwrap();
        assert_eq!(s.joints(), 8);
        assert_eq!(s.frame_dim(), 85);
        let p = s.fk([0.0, 0.0, 0.92], &[IDENTITY; 8]).unwrap();
        assert!((p[FOOT_L][2] - 0.02).abs() < 1e-12);
    }
}
