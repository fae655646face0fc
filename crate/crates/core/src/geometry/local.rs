use super::{ClosestPoint, MeshAccel, Vec3};
use crate::error::Result;

/// Below this distance the query is treated as lying on the surface.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;

/// Local conditioning of a global point relative to its nearest face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalQuery {
    pub face: usize,
    /// Barycentric weights of face corners 0 and 1.
    pub u: f64,
    pub v: f64,
    /// Signed distance to the closest surface point, positive on the side
    /// the pseudo-normal points to.
    pub d: f64,
    /// Unit direction from the closest point toward the query (world frame).
    pub dir: Vec3,
    /// `dir` expressed in the face's tangent frame (tangent, bitangent, normal).
    pub dir_local: Vec3,
}

impl LocalQuery {
    pub fn uvd(&self) -> [f64; 3] {
        [self.u, self.v, self.d]
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.u, self.v, 1.0 - self.u - self.v]
    }
}

impl MeshAccel {
    /// Convert a closest point and its query into local triangle coordinates.
    pub fn local_coords(&self, cp: &ClosestPoint, x: &Vec3) -> LocalQuery {
        let offset = x - cp.point;
        let dist = offset.norm();
        let pn = self.pseudo_normal(cp);
        let (d, dir) = if dist > DEGENERATE_DISTANCE {
            let sign = if offset.dot(&pn) < 0.0 { -1.0 } else { 1.0 };
            (sign * dist, offset / dist)
        } else {
            (dist, pn)
        };
        let [t, b, n] = self.face_frame(cp.face);
        LocalQuery {
            face: cp.face,
            u: cp.bary.0,
            v: cp.bary.1,
            d,
            dir,
            dir_local: Vec3::new(dir.dot(&t), dir.dot(&b), dir.dot(&n)),
        }
    }

    /// Closest point followed by local coordinates.
    pub fn locate(&self, x: &Vec3) -> Result<LocalQuery> {
        let cp = self.closest_point(x)?;
        Ok(self.local_coords(&cp, x))
    }

    /// Signed distance to this mesh using the pseudo-normal sign.
    pub fn signed_distance(&self, x: &Vec3) -> Result<f64> {
        Ok(self.locate(x)?.d)
    }

    /// World point at fixed local coordinates: the surface point at `(u, v)`
    /// on `face` pushed by `d` along the face-frame direction `dir_local`.
    pub fn point_from_local(&self, face: usize, u: f64, v: f64, d: f64, dir_local: &Vec3) -> Vec3 {
        let [a, b, c] = self.corners(face);
        let [t, bt, n] = self.face_frame(face);
        let p = a * u + b * v + c * (1.0 - u - v);
        p + (t * dir_local.x + bt * dir_local.y + n * dir_local.z) * d.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::template::icosphere;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surface_point_has_zero_distance_and_face_normal() {
        let mesh = icosphere(2, 1.0).surface;
        let accel = MeshAccel::build(&mesh).unwrap();
        let [a, b, c] = mesh.corners(5);
        let x = a * 0.2 + b * 0.3 + c * 0.5;
        let q = accel.locate(&x).unwrap();
        assert!(q.d.abs() < 1e-12);
        assert!((q.dir - accel.face_normal(q.face)).norm() < 1e-12);
    }

    #[test]
    fn sign_matches_sphere_inside_outside() {
        let mesh = icosphere(3, 1.0).surface;
        let accel = MeshAccel::build(&mesh).unwrap();
        for v in mesh.vertices.iter().step_by(7) {
            let dir = v.normalize();
            assert!(accel.locate(&(dir * 1.2)).unwrap().d > 0.0);
            assert!(accel.locate(&(dir * 0.8)).unwrap().d < 0.0);
        }
    }

    #[test]
    fn local_coordinates_are_rigidly_invariant() {
        let mesh = icosphere(3, 1.0).surface;
        let accel = MeshAccel::build(&mesh).unwrap();
        let rot = Rotation3::from_scaled_axis(Vec3::new(0.3, -1.1, 0.7));
        let t = Vec3::new(0.5, -2.0, 1.25);
        let moved = MeshAccel::build(&mesh.transformed(&rot, &t)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ties = 0;
        for _ in 0..200 {
            let x = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let a = accel.locate(&x).unwrap();
            let b = moved.locate(&(rot * x + t)).unwrap();
            assert!((a.d - b.d).abs() < 1e-9);
            if a.face != b.face {
                // Equidistant faces across an edge or vertex; rounding may pick
                // either one. The surface point itself must still agree.
                let [p0, p1, p2] = accel.corners(a.face);
                let [q0, q1, q2] = moved.corners(b.face);
                let pa = p0 * a.u + p1 * a.v + p2 * (1.0 - a.u - a.v);
                let pb = q0 * b.u + q1 * b.v + q2 * (1.0 - b.u - b.v);
                assert!((rot * pa + t - pb).norm() < 1e-9);
                ties += 1;
                continue;
            }
            assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
            assert!((rot * a.dir - b.dir).norm() < 1e-9);
            assert!((a.dir_local - b.dir_local).norm() < 1e-9);
            assert!((a.dir.norm() - 1.0).abs() < 1e-9);
        }
        assert!(ties < 40, "{ties} ties");
    }

    #[test]
    fn point_from_local_round_trips() {
        let mesh = icosphere(3, 1.0).surface;
        let accel = MeshAccel::build(&mesh).unwrap();
        let x = accel.point_from_local(40, 0.3, 0.3, 0.01, &Vec3::z());
        let q = accel.locate(&x).unwrap();
        assert_eq!(q.face, 40);
        assert!((q.u - 0.3).abs() < 1e-12 && (q.v - 0.3).abs() < 1e-12 && (q.d - 0.01).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rigid_motion_keeps_distance_and_surface_point(
            axis in prop::array::uniform3(-3.0f64..3.0),
            shift in prop::array::uniform3(-5.0f64..5.0),
            q in prop::array::uniform3(-1.5f64..1.5),
        ) {
            let mesh = icosphere(2, 1.0).surface;
            let rot = Rotation3::from_scaled_axis(Vec3::from(axis));
            let t = Vec3::from(shift);
            let a_acc = MeshAccel::build(&mesh).unwrap();
            let b_acc = MeshAccel::build(&mesh.transformed(&rot, &t)).unwrap();
            let x = Vec3::from(q);
            let a = a_acc.locate(&x).unwrap();
            let b = b_acc.locate(&(rot * x + t)).unwrap();
            prop_assert!((a.d - b.d).abs() < 1e-9);
            let [p0, p1, p2] = a_acc.corners(a.face);
            let [q0, q1, q2] = b_acc.corners(b.face);
            let pa = p0 * a.u + p1 * a.v + p2 * (1.0 - a.u - a.v);
            let pb = q0 * b.u + q1 * b.v + q2 * (1.0 - b.u - b.v);
            prop_assert!((rot * pa + t - pb).norm() < 1e-9);
            if a.face == b.face {
                prop_assert!((rot * a.dir - b.dir).norm() < 1e-9);
                prop_assert!((a.dir_local - b.dir_local).norm() < 1e-9);
            }
        }
    }
}
