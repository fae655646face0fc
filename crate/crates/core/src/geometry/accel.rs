use std::collections::HashMap;

use super::closest::{bary_point, closest_on_triangle, ClosestPoint, SurfaceFeature};
use super::{corner_angle, TriMesh, Vec3};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: first index into `order`. Internal: left child.
    a: u32,
    /// Leaf: face count. Internal: right child.
    b: u32,
    leaf: bool,
}

/// Immutable query structure over one triangle mesh: a bounding-volume
/// hierarchy for nearest-triangle search plus the face, edge and vertex
/// normals needed for signing distances.
#[derive(Debug, Clone)]
pub struct MeshAccel {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    edge_normals: HashMap<(u32, u32), Vec3>,
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl MeshAccel {
    pub fn build(mesh: &TriMesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        mesh.validate()?;

        let mut face_normals = Vec::with_capacity(mesh.faces.len());
        for (fi, _) in mesh.faces.iter().enumerate() {
            let [a, b, c] = mesh.corners(fi);
            let n = (b - a).cross(&(c - a));
            let len = n.norm();
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::DegenerateFace(fi));
            }
            face_normals.push(n / len);
        }

        let mut vertex_acc = vec![Vec3::zeros(); mesh.vertices.len()];
        let mut edge_acc: HashMap<(u32, u32), Vec3> = HashMap::with_capacity(mesh.faces.len() * 2);
        for (fi, face) in mesh.faces.iter().enumerate() {
            let p = mesh.corners(fi);
            let n = face_normals[fi];
            for k in 0..3 {
                let e1 = p[(k + 1) % 3] - p[k];
                let e2 = p[(k + 2) % 3] - p[k];
                vertex_acc[face[k] as usize] += n * corner_angle(&e1, &e2);
                let (i, j) = (face[k], face[(k + 1) % 3]);
                *edge_acc.entry((i.min(j), i.max(j))).or_insert_with(Vec3::zeros) += n;
            }
        }
        let unit = |v: Vec3| {
            let len = v.norm();
            if len > 0.0 {
                v / len
            } else {
                Vec3::z()
            }
        };
        let vertex_normals = vertex_acc.into_iter().map(unit).collect();
        let edge_normals = edge_acc.into_iter().map(|(k, v)| (k, unit(v))).collect();

        let centroids: Vec<Vec3> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.corners(f);
                (a + b + c) / 3.0
            })
            .collect();
        let mut order: Vec<u32> = (0..mesh.faces.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * mesh.faces.len() / LEAF_SIZE + 1);
        build_node(mesh, &centroids, &mut order, 0, mesh.faces.len(), &mut nodes);

        Ok(Self {
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            face_normals,
            vertex_normals,
            edge_normals,
            nodes,
            order,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        self.face_normals[face]
    }

    /// Orthonormal frame of a face: tangent along its first edge, bitangent,
    /// and the unit normal.
    pub fn face_frame(&self, face: usize) -> [Vec3; 3] {
        let [a, b, _] = self.corners(face);
        let n = self.face_normals[face];
        let t = (b - a).normalize();
        let bt = n.cross(&t);
        [t, bt, n]
    }

    /// Nearest surface point. Equidistant faces resolve to the lowest index.
    pub fn closest_point(&self, x: &Vec3) -> Result<ClosestPoint> {
        if !(x.x.is_finite() && x.y.is_finite() && x.z.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut best_d2 = f64::INFINITY;
        let mut best: Option<(usize, (f64, f64), Vec3, SurfaceFeature)> = None;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, box_distance2(&self.nodes[0], x)));
        while let Some((ni, d2)) = stack.pop() {
            if d2 > best_d2 {
                continue;
            }
            let node = &self.nodes[ni as usize];
            if node.leaf {
                for &f in &self.order[node.a as usize..(node.a + node.b) as usize] {
                    let f = f as usize;
                    let [a, b, c] = self.corners(f);
                    let ((u, v), feat) = closest_on_triangle(x, &a, &b, &c);
                    let p = bary_point(&a, &b, &c, u, v);
                    let fd2 = (x - p).norm_squared();
                    let better = match best {
                        None => true,
                        Some((bf, ..)) => fd2 < best_d2 || (fd2 == best_d2 && f < bf),
                    };
                    if better {
                        best_d2 = fd2;
                        best = Some((f, (u, v), p, feat));
                    }
                }
            } else {
                let (l, r) = (node.a, node.b);
                let dl = box_distance2(&self.nodes[l as usize], x);
                let dr = box_distance2(&self.nodes[r as usize], x);
                // Nearer child on top of the stack.
                if dl <= dr {
                    stack.push((r, dr));
                    stack.push((l, dl));
                } else {
                    stack.push((l, dl));
                    stack.push((r, dr));
                }
            }
        }
        let (face, bary, point, feature) = best.expect("non-empty hierarchy");
        Ok(ClosestPoint { face, bary, point, distance: best_d2.sqrt(), feature })
    }

    /// Angle-weighted pseudo-normal at a closest point: the face normal in
    /// the interior, the mean of the two incident face normals on an edge, the
    /// incident-angle-weighted normal at a vertex.
    pub fn pseudo_normal(&self, cp: &ClosestPoint) -> Vec3 {
        let face = self.faces[cp.face];
        match cp.feature {
            SurfaceFeature::Interior => self.face_normals[cp.face],
            SurfaceFeature::Vertex(k) => self.vertex_normals[face[k as usize] as usize],
            SurfaceFeature::Edge(i, j) => {
                let (a, b) = (face[i as usize], face[j as usize]);
                self.edge_normals.get(&(a.min(b), a.max(b))).copied().unwrap_or(self.face_normals[cp.face])
            }
        }
    }

    /// Interpolated per-vertex attribute at a closest point.
    pub fn interpolate<const N: usize>(&self, values: &[[f64; N]], cp: &ClosestPoint) -> [f64; N] {
        let w = cp.weights();
        let face = self.faces[cp.face];
        let mut out = [0.0; N];
        for k in 0..3 {
            let val = &values[face[k] as usize];
            for (o, x) in out.iter_mut().zip(val) {
                *o += w[k] * x;
            }
        }
        out
    }

    /// Interpolated, renormalized angle-weighted vertex normal.
    pub fn smooth_normal(&self, cp: &ClosestPoint) -> Vec3 {
        let w = cp.weights();
        let face = self.faces[cp.face];
        let mut n = Vec3::zeros();
        for k in 0..3 {
            n += self.vertex_normals[face[k] as usize] * w[k];
        }
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            self.face_normals[cp.face]
        }
    }
}

fn build_node(
    mesh: &TriMesh,
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let mut clo = lo;
    let mut chi = hi;
    for &f in &order[start..end] {
        for p in mesh.corners(f as usize) {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let c = centroids[f as usize];
        clo = clo.inf(&c);
        chi = chi.sup(&c);
    }
    let idx = nodes.len() as u32;
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes.push(Node { lo, hi, a: start as u32, b: count as u32, leaf: true });
        return idx;
    }
    nodes.push(Node { lo, hi, a: 0, b: 0, leaf: false });
    let ext = chi - clo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = count / 2;
    order[start..end].select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]).then(a.cmp(&b))
    });
    let left = build_node(mesh, centroids, order, start, start + mid, nodes);
    let right = build_node(mesh, centroids, order, start + mid, end, nodes);
    nodes[idx as usize].a = left;
    nodes[idx as usize].b = right;
    idx
}

#[inline]
fn box_distance2(node: &Node, x: &Vec3) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let v = x[k];
        let d = if v < node.lo[k] {
            node.lo[k] - v
        } else if v > node.hi[k] {
            v - node.hi[k]
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::template::icosphere;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive scan over every face: the oracle for the hierarchy.
    fn brute(mesh: &TriMesh, x: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for f in 0..mesh.faces.len() {
            let [a, b, c] = mesh.corners(f);
            let ((u, v), _) = closest_on_triangle(x, &a, &b, &c);
            let d2 = (x - bary_point(&a, &b, &c, u, v)).norm_squared();
            if d2 < best.1 {
                best = (f, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let mesh = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]);
        let accel = MeshAccel::build(&mesh).unwrap();
        assert_eq!(accel.node_count(), 1);
        let cp = accel.closest_point(&Vec3::new(5.0, -3.0, 2.0)).unwrap();
        assert_eq!(cp.face, 0);
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let mesh = TriMesh::new(vec![], vec![]);
        assert!(matches!(MeshAccel::build(&mesh), Err(Error::EmptyMesh)));
    }

    #[test]
    fn zero_area_face_is_rejected() {
        let mesh = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0], vec![[0, 1, 2]]);
        assert!(matches!(MeshAccel::build(&mesh), Err(Error::DegenerateFace(0))));
    }

    #[test]
    fn duplicate_triangles_resolve_to_lowest_index() {
        let mesh = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2], [0, 1, 2]]);
        let accel = MeshAccel::build(&mesh).unwrap();
        for q in [Vec3::new(0.2, 0.2, 1.0), Vec3::new(-1.0, 0.3, -0.5)] {
            assert_eq!(accel.closest_point(&q).unwrap().face, 0);
        }
    }

    #[test]
    fn non_finite_query_is_rejected() {
        let accel = MeshAccel::build(&icosphere(1, 1.0).surface).unwrap();
        assert!(matches!(accel.closest_point(&Vec3::new(f64::NAN, 0.0, 0.0)), Err(Error::NonFinite)));
    }

    #[test]
    fn on_vertex_and_above_centroid() {
        let mesh = icosphere(2, 1.0).surface;
        let accel = MeshAccel::build(&mesh).unwrap();
        let f = 17;
        let [a, b, c] = mesh.corners(f);
        let cp = accel.closest_point(&a).unwrap();
        assert_eq!(cp.distance, 0.0);
        assert_eq!(mesh.vertices[mesh.faces[cp.face][cp.feature_corner()] as usize], a);

        let n = (b - a).cross(&(c - a)).normalize();
        let centroid = (a + b + c) / 3.0;
        let h = 1e-3;
        let cp = accel.closest_point(&(centroid + n * h)).unwrap();
        assert_eq!(cp.face, f);
        assert!((cp.distance - h).abs() < 1e-12);
        assert!((cp.bary.0 - 1.0 / 3.0).abs() < 1e-9 && (cp.bary.1 - 1.0 / 3.0).abs() < 1e-9);
    }

    impl ClosestPoint {
        fn feature_corner(&self) -> usize {
            match self.feature {
                SurfaceFeature::Vertex(k) => k as usize,
                _ => panic!("not a vertex feature"),
            }
        }
    }

    #[test]
    fn hierarchy_matches_exhaustive_scan_on_icosphere() {
        let mesh = icosphere(3, 1.0).surface;
        assert_eq!(mesh.vertex_count(), 642);
        let accel = MeshAccel::build(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let cp = accel.closest_point(&q).unwrap();
            let (bf, bd) = brute(&mesh, &q);
            assert!((cp.distance - bd).abs() <= 1e-9 * bd.max(1e-300), "{} vs {}", cp.distance, bd);
            assert_eq!(cp.face, bf);
            let [u, v, w] = cp.weights();
            assert!(u >= -1e-9 && v >= -1e-9 && w >= -1e-9);
            let [a, b, c] = mesh.corners(cp.face);
            assert!((a * u + b * v + c * w - cp.point).norm() < 1e-9);
        }
    }

    #[test]
    fn cube_corner_pseudo_normal() {
        let mesh = crate::geometry::template::unit_cube();
        let accel = MeshAccel::build(&mesh).unwrap();
        let cp = accel.closest_point(&Vec3::new(1.5, 1.5, 1.5)).unwrap();
        assert!(matches!(cp.feature, SurfaceFeature::Vertex(_)));
        let n = accel.pseudo_normal(&cp);
        let expect = Vec3::new(1.0, 1.0, 1.0).normalize();
        assert!((n - expect).norm() < 1e-12, "{n}");
        // Every corner, including those where a square contributes two triangles.
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let q = Vec3::new(0.5 + sx, 0.5 + sy, 0.5 + sz);
                    let cp = accel.closest_point(&q).unwrap();
                    let n = accel.pseudo_normal(&cp);
                    assert!((n - Vec3::new(sx, sy, sz).normalize()).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coplanar_edge_and_interior_pseudo_normal() {
        // Planar quad split into two triangles.
        let mesh = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let accel = MeshAccel::build(&mesh).unwrap();
        let cp = accel.closest_point(&Vec3::new(0.7, 0.2, 0.3)).unwrap();
        assert_eq!(cp.feature, SurfaceFeature::Interior);
        assert_eq!(accel.pseudo_normal(&cp), Vec3::z());
        // Closest point on the shared diagonal.
        let cp = accel.closest_point(&Vec3::new(0.5, 0.5, 0.2)).unwrap();
        assert!(matches!(cp.feature, SurfaceFeature::Edge(..)));
        assert!((accel.pseudo_normal(&cp) - Vec3::z()).norm() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hierarchy_agrees_with_exhaustive_scan_on_bumpy_spheres(
            radii in prop::collection::vec(0.6f64..1.4, 162),
            queries in prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 1..40),
        ) {
            let mut mesh = icosphere(2, 1.0).surface;
            for (v, r) in mesh.vertices.iter_mut().zip(&radii) {
                *v *= *r;
            }
            let accel = MeshAccel::build(&mesh).unwrap();
            for q in &queries {
                let x = Vec3::new(q[0], q[1], q[2]);
                let cp = accel.closest_point(&x).unwrap();
                let (_, bd) = brute(&mesh, &x);
                prop_assert!((cp.distance - bd).abs() <= 1e-9 * bd.max(1e-12));
                let [u, v, w] = cp.weights();
                prop_assert!(u >= -1e-9 && v >= -1e-9 && w >= -1e-9);
                prop_assert!((u + v + w - 1.0).abs() < 1e-9);
                let [a, b, c] = mesh.corners(cp.face);
                prop_assert!((a * u + b * v + c * w - cp.point).norm() < 1e-9);
            }
        }
    }
}
