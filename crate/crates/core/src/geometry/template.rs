//! Bundled templates: icospheres, a unit cube and a low-poly skinned humanoid.

use std::collections::HashMap;

use super::{Rig, TemplateMesh, TriMesh, Vec3};
use crate::mesher::{marching_cubes, VoxelGrid};

/// Subdivided icosahedron projected to a sphere; `10 * 4^subdiv + 2`
/// vertices. Carries a single root joint at the center.
pub fn icosphere(subdiv: u32, radius: f64) -> TemplateMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut mids: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            *mids.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a as usize] + vertices[b as usize]) * 0.5).normalize());
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    let m = vertices.len();
    let rig = Rig { joints: vec![Vec3::zeros()], parents: vec![None], weights: vec![1.0; m], blendshapes: vec![] };
    TemplateMesh::new(TriMesh::new(vertices, faces), rig).expect("icosphere is valid")
}

/// Axis-aligned cube spanning `(0,0,0)..(1,1,1)` with outward winding.
pub fn unit_cube() -> TriMesh {
    let vertices = (0..8).map(|k| Vec3::new((k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64)).collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    TriMesh::new(vertices, faces)
}

/// Joint names of the humanoid, in rig order.
pub const HUMANOID_JOINTS: [&str; 11] =
    ["pelvis", "chest", "neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_hip", "r_hip", "l_knee", "r_knee"];

const HUMANOID_PARENTS: [Option<usize>; 11] =
    [None, Some(0), Some(1), Some(1), Some(1), Some(3), Some(4), Some(0), Some(0), Some(7), Some(8)];

struct Capsule {
    a: Vec3,
    b: Vec3,
    radius: f64,
}

impl Capsule {
    fn new(a: [f64; 3], b: [f64; 3], radius: f64) -> Self {
        Capsule { a: Vec3::from(a), b: Vec3::from(b), radius }
    }

    fn axis_point(&self, x: &Vec3) -> Vec3 {
        let ab = self.b - self.a;
        let t = ((x - self.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        self.a + ab * t
    }

    fn sdf(&self, x: &Vec3) -> f64 {
        (x - self.axis_point(x)).norm() - self.radius
    }
}

const SMOOTH_UNION: f64 = 0.05;

fn smin(a: f64, b: f64, k: f64) -> f64 {
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

/// Body parts in y-up meters with the pelvis at the origin, arms in an A-pose.
fn humanoid_parts() -> Vec<Capsule> {
    vec![
        Capsule::new([0.0, -0.02, 0.0], [0.0, 0.36, 0.0], 0.14),
        Capsule::new([0.0, 0.36, 0.0], [0.0, 0.50, 0.0], 0.06),
        Capsule::new([0.0, 0.62, 0.01], [0.0, 0.64, 0.01], 0.11),
        Capsule::new([0.17, 0.40, 0.0], [0.38, 0.22, 0.0], 0.06),
        Capsule::new([-0.17, 0.40, 0.0], [-0.38, 0.22, 0.0], 0.06),
        Capsule::new([0.38, 0.22, 0.0], [0.55, 0.02, 0.0], 0.055),
        Capsule::new([-0.38, 0.22, 0.0], [-0.55, 0.02, 0.0], 0.055),
        Capsule::new([0.10, -0.06, 0.0], [0.11, -0.48, 0.0], 0.08),
        Capsule::new([-0.10, -0.06, 0.0], [-0.11, -0.48, 0.0], 0.08),
        Capsule::new([0.11, -0.48, 0.0], [0.12, -0.90, 0.0], 0.065),
        Capsule::new([-0.11, -0.48, 0.0], [-0.12, -0.90, 0.0], 0.065),
    ]
}

/// Joint positions and the bone segment each joint drives.
fn humanoid_bones() -> (Vec<Vec3>, Vec<Capsule>) {
    let joints = [
        [0.0, 0.0, 0.0],
        [0.0, 0.22, 0.0],
        [0.0, 0.48, 0.0],
        [0.17, 0.40, 0.0],
        [-0.17, 0.40, 0.0],
        [0.38, 0.22, 0.0],
        [-0.38, 0.22, 0.0],
        [0.10, -0.06, 0.0],
        [-0.10, -0.06, 0.0],
        [0.11, -0.48, 0.0],
        [-0.11, -0.48, 0.0],
    ];
    let bones = vec![
        Capsule::new([0.0, -0.06, 0.0], [0.0, 0.10, 0.0], 0.0),
        Capsule::new([0.0, 0.10, 0.0], [0.0, 0.40, 0.0], 0.0),
        Capsule::new([0.0, 0.48, 0.0], [0.0, 0.72, 0.0], 0.0),
        Capsule::new([0.17, 0.40, 0.0], [0.38, 0.22, 0.0], 0.0),
        Capsule::new([-0.17, 0.40, 0.0], [-0.38, 0.22, 0.0], 0.0),
        Capsule::new([0.38, 0.22, 0.0], [0.58, -0.01, 0.0], 0.0),
        Capsule::new([-0.38, 0.22, 0.0], [-0.58, -0.01, 0.0], 0.0),
        Capsule::new([0.10, -0.06, 0.0], [0.11, -0.48, 0.0], 0.0),
        Capsule::new([-0.10, -0.06, 0.0], [-0.11, -0.48, 0.0], 0.0),
        Capsule::new([0.11, -0.48, 0.0], [0.12, -0.96, 0.0], 0.0),
        Capsule::new([-0.11, -0.48, 0.0], [-0.12, -0.96, 0.0], 0.0),
    ];
    (joints.iter().map(|&j| Vec3::from(j)).collect(), bones)
}

/// Smooth union of the humanoid's capsules. Not an exact distance, but its
/// zero set is the template surface.
pub fn humanoid_sdf(x: &Vec3) -> f64 {
    humanoid_parts().iter().map(|c| c.sdf(x)).reduce(|a, b| smin(a, b, SMOOTH_UNION)).unwrap()
}

const HUMANOID_VOXEL: f64 = 0.04;
const SKIN_FALLOFF: f64 = 0.04;

/// Low-poly skinned humanoid: 11 joints, height and girth blendshapes.
/// Built by extracting the capsule body at a coarse voxel size, relaxing the
/// triangles tangentially and projecting back to the implicit surface.
pub fn humanoid() -> TemplateMesh {
    let parts = humanoid_parts();
    let sdf = |x: &Vec3| parts.iter().map(|c| c.sdf(x)).reduce(|a, b| smin(a, b, SMOOTH_UNION)).unwrap();
    let lo = Vec3::new(-0.75, -1.05, -0.25);
    let hi = Vec3::new(0.75, 0.85, 0.25);
    let res = ((hi - lo).max() / HUMANOID_VOXEL).round() as usize;
    let grid = VoxelGrid::sample(lo, hi, res, |x: &Vec3| Ok(sdf(x))).expect("fixed box is valid");
    let mut mesh = marching_cubes(&grid, 0.0);
    relax(&mut mesh, &sdf, 8);

    let (joints, bones) = humanoid_bones();
    let m = mesh.vertices.len();
    let j = joints.len();
    let mut weights = vec![0.0; m * j];
    for (vi, v) in mesh.vertices.iter().enumerate() {
        let dist: Vec<f64> = bones.iter().map(|b| (v - b.axis_point(v)).norm()).collect();
        let nearest = dist.iter().cloned().fold(f64::INFINITY, f64::min);
        let row = &mut weights[vi * j..(vi + 1) * j];
        for (w, d) in row.iter_mut().zip(&dist) {
            let e = (-(d - nearest) / SKIN_FALLOFF).exp();
            *w = if e < 1e-3 { 0.0 } else { e };
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= s);
    }

    let height = mesh.vertices.iter().map(|v| Vec3::new(0.0, 0.1 * v.y, 0.0)).collect();
    let girth = mesh
        .vertices
        .iter()
        .map(|v| {
            let nearest =
                bones.iter().map(|b| b.axis_point(v)).min_by(|a, b| (v - a).norm().total_cmp(&(v - b).norm())).unwrap();
            (v - nearest) * 0.15
        })
        .collect();
    let rig = Rig { joints, parents: HUMANOID_PARENTS.to_vec(), weights, blendshapes: vec![height, girth] };
    TemplateMesh::new(mesh, rig).expect("humanoid rig is valid")
}

/// Tangential Laplacian smoothing followed by Newton projection onto the
/// zero set of `sdf`.
fn relax(mesh: &mut TriMesh, sdf: &impl Fn(&Vec3) -> f64, iterations: usize) {
    let n = mesh.vertices.len();
    let mut nbrs: Vec<Vec<u32>> = vec![Vec::new(); n];
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if !nbrs[a as usize].contains(&b) {
                nbrs[a as usize].push(b);
            }
            if !nbrs[b as usize].contains(&a) {
                nbrs[b as usize].push(a);
            }
        }
    }
    let grad = |x: &Vec3| {
        let h = 1e-5;
        Vec3::new(
            sdf(&(x + Vec3::x() * h)) - sdf(&(x - Vec3::x() * h)),
            sdf(&(x + Vec3::y() * h)) - sdf(&(x - Vec3::y() * h)),
            sdf(&(x + Vec3::z() * h)) - sdf(&(x - Vec3::z() * h)),
        ) / (2.0 * h)
    };
    for _ in 0..iterations {
        let normals = mesh.vertex_normals();
        let moved: Vec<Vec3> = (0..n)
            .map(|i| {
                let v = mesh.vertices[i];
                if nbrs[i].is_empty() {
                    return v;
                }
                let mut avg = Vec3::zeros();
                for &j in &nbrs[i] {
                    avg += mesh.vertices[j as usize];
                }
                avg /= nbrs[i].len() as f64;
                let delta = avg - v;
                let nrm = normals[i];
                let mut p = v + (delta - nrm * delta.dot(&nrm)) * 0.5;
                for _ in 0..3 {
                    let g = grad(&p);
                    let g2 = g.norm_squared();
                    if g2 > 1e-12 {
                        p -= g * (sdf(&p) / g2);
                    }
                }
                p
            })
            .collect();
        mesh.vertices = moved;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{skin, MeshAccel, PoseParams};

    #[test]
    fn icosphere_counts() {
        for (s, m) in [(0, 12), (1, 42), (2, 162), (3, 642)] {
            let t = icosphere(s, 1.0);
            assert_eq!(t.vertex_count(), m);
            assert_eq!(t.face_count(), 2 * m - 4);
            t.surface.check_watertight().unwrap();
        }
    }

    #[test]
    fn icosphere_is_outward_wound() {
        let s = icosphere(2, 1.0).surface;
        for f in 0..s.faces.len() {
            let [a, b, c] = s.corners(f);
            assert!((b - a).cross(&(c - a)).dot(&(a + b + c)) > 0.0);
        }
    }

    #[test]
    fn cube_is_closed_and_outward() {
        let c = unit_cube();
        c.check_watertight().unwrap();
        let center = Vec3::repeat(0.5);
        for f in 0..c.faces.len() {
            let [a, b, d] = c.corners(f);
            assert!((b - a).cross(&(d - a)).dot(&((a + b + d) / 3.0 - center)) > 0.0);
        }
    }

    #[test]
    fn humanoid_is_a_valid_closed_template() {
        let h = humanoid();
        assert!((600..=2500).contains(&h.vertex_count()), "{}", h.vertex_count());
        assert_eq!(h.joint_count(), 11);
        assert_eq!(h.blendshape_count(), 2);
        h.surface.check_watertight().unwrap();
        let accel = MeshAccel::build(&h.surface).unwrap();
        // Vertices sit on the implicit surface.
        for v in &h.surface.vertices {
            assert!(humanoid_sdf(v).abs() < 2e-3);
        }
        // Joints are inside the body.
        for j in &h.rig.joints {
            assert!(accel.signed_distance(j).unwrap() < 0.0, "{j}");
        }
        let posed = skin(&h, &PoseParams::identity_for(&h)).unwrap();
        assert_eq!(posed.surface.vertices, h.surface.vertices);
    }

    #[test]
    fn humanoid_is_deterministic() {
        assert_eq!(humanoid().content_hash(), humanoid().content_hash());
    }
}
