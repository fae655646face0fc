use nalgebra::{Matrix3, Rotation3};

use super::{PoseParams, TemplateMesh, Vec3};
use crate::error::Result;

/// Rigid transform `x -> r x + t`.
#[derive(Clone, Copy)]
struct Rigid {
    r: Matrix3<f64>,
    t: Vec3,
}

impl Rigid {
    fn apply(&self, x: &Vec3) -> Vec3 {
        self.r * x + self.t
    }

    fn compose(&self, inner: &Rigid) -> Rigid {
        Rigid { r: self.r * inner.r, t: self.r * inner.t + self.t }
    }
}

/// Shape blendshapes followed by linear blend skinning over the template's
/// kinematic tree, then the root translation. Topology and rig are carried
/// over unchanged; joints are returned in their posed positions.
pub fn skin(template: &TemplateMesh, pose: &PoseParams) -> Result<TemplateMesh> {
    pose.check(template)?;
    let m = template.vertex_count();
    let j = template.joint_count();

    let mut shaped = template.surface.vertices.clone();
    let mut joints = template.rig.joints.clone();
    for (beta, shape) in pose.shape_coeffs.iter().zip(&template.rig.blendshapes) {
        if *beta == 0.0 {
            continue;
        }
        for (v, off) in shaped.iter_mut().zip(shape) {
            *v += off * *beta;
        }
        // Joints follow the skinning-weighted mean of the offsets they drive.
        for (ji, joint) in joints.iter_mut().enumerate() {
            let mut acc = Vec3::zeros();
            let mut wsum = 0.0;
            for (vi, off) in shape.iter().enumerate() {
                let w = template.rig.weights[vi * j + ji];
                acc += off * w;
                wsum += w;
            }
            if wsum > 0.0 {
                *joint += acc * (*beta / wsum);
            }
        }
    }

    let mut world: Vec<Rigid> = Vec::with_capacity(j);
    for ji in 0..j {
        let aa = pose.joint_rotations[ji];
        let r = Rotation3::from_scaled_axis(Vec3::new(aa[0], aa[1], aa[2])).into_inner();
        let c = joints[ji];
        let local = Rigid { r, t: c - r * c };
        let g = match template.rig.parents[ji] {
            Some(p) => world[p].compose(&local),
            None => local,
        };
        world.push(g);
    }

    let root = Vec3::from(pose.root_translation);
    let mut posed = Vec::with_capacity(m);
    for (vi, v) in shaped.iter().enumerate() {
        let row = &template.rig.weights[vi * j..(vi + 1) * j];
        // Displacement form: exact at the identity pose.
        let mut acc = *v;
        for (w, g) in row.iter().zip(&world) {
            if *w != 0.0 {
                acc += (g.apply(v) - v) * *w;
            }
        }
        posed.push(acc + root);
    }
    let posed_joints = joints.iter().zip(&world).map(|(c, g)| g.apply(c) + root).collect();

    let mut out = template.clone();
    out.surface.vertices = posed;
    out.rig.joints = posed_joints;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::template::humanoid;
    use crate::geometry::{Rig, TriMesh};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn body() -> &'static TemplateMesh {
        static T: OnceLock<TemplateMesh> = OnceLock::new();
        T.get_or_init(humanoid)
    }

    fn single_joint_mesh() -> TemplateMesh {
        let verts = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.5),
            Vec3::new(-1.0, -1.0, 1.0),
            Vec3::new(0.3, 0.1, -2.0),
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]];
        let rig = Rig {
            joints: vec![Vec3::new(0.5, 0.5, 0.0)],
            parents: vec![None],
            weights: vec![1.0; 4],
            blendshapes: vec![],
        };
        TemplateMesh::new(TriMesh::new(verts, faces), rig).unwrap()
    }

    #[test]
    fn identity_pose_is_identity() {
        let t = single_joint_mesh();
        let posed = skin(&t, &PoseParams::identity_for(&t)).unwrap();
        assert_eq!(posed.surface.vertices, t.surface.vertices);
    }

    #[test]
    fn root_translation_shifts_everything() {
        let t = single_joint_mesh();
        let mut pose = PoseParams::identity_for(&t);
        pose.root_translation = [1.0, 0.0, 0.0];
        let posed = skin(&t, &pose).unwrap();
        for (a, b) in posed.surface.vertices.iter().zip(&t.surface.vertices) {
            assert!((a - b - Vec3::x()).norm() < 1e-15);
        }
    }

    #[test]
    fn quarter_turn_about_single_joint_matches_hand_rotation() {
        let t = single_joint_mesh();
        let mut pose = PoseParams::identity_for(&t);
        pose.joint_rotations[0] = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let posed = skin(&t, &pose).unwrap();
        // Rz(90°) = [[0,-1,0],[1,0,0],[0,0,1]] about the joint.
        let c = t.rig.joints[0];
        for (p, v) in posed.surface.vertices.iter().zip(&t.surface.vertices) {
            let q = v - c;
            let expected = Vec3::new(-q.y, q.x, q.z) + c;
            assert!((p - expected).norm() < 1e-12, "{p} vs {expected}");
        }
    }

    #[test]
    fn mismatched_pose_is_rejected() {
        let t = single_joint_mesh();
        let pose = PoseParams::identity(2, 0);
        assert!(skin(&t, &pose).is_err());
        let pose = PoseParams::identity(1, 1);
        assert!(skin(&t, &pose).is_err());
    }

    #[test]
    fn child_joint_inherits_parent_rotation() {
        // Two joints in a chain; the vertex fully bound to the child follows
        // both rotations.
        let verts = vec![
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]];
        let mut weights = vec![0.0; 8];
        weights[1] = 1.0;
        for v in 1..4 {
            weights[v * 2] = 1.0;
        }
        let rig = Rig {
            joints: vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)],
            parents: vec![None, Some(0)],
            weights,
            blendshapes: vec![],
        };
        let t = TemplateMesh::new(TriMesh::new(verts, faces), rig).unwrap();
        let mut pose = PoseParams::identity_for(&t);
        let q = std::f64::consts::FRAC_PI_2;
        pose.joint_rotations = vec![[0.0, 0.0, q], [0.0, 0.0, q]];
        let posed = skin(&t, &pose).unwrap();
        // Child rotation maps (2,0,0) -> (1,1,0); root rotation then maps it to (-1,1,0).
        assert!((posed.surface.vertices[0] - Vec3::new(-1.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((posed.rig.joints[1] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn root_translation_commutes_with_joint_rotations(
            rot in prop::collection::vec(prop::array::uniform3(-0.8f64..0.8), 11),
            shift in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let t = body();
            prop_assert_eq!(t.joint_count(), 11);
            let mut pose = PoseParams::identity_for(t);
            pose.joint_rotations = rot;
            let still = skin(t, &pose).unwrap();
            pose.root_translation = shift;
            let moved = skin(t, &pose).unwrap();
            let d = Vec3::from(shift);
            for (a, b) in moved.surface.vertices.iter().zip(&still.surface.vertices) {
                prop_assert!((a - b - d).norm() < 1e-12);
            }
        }
    }
}
