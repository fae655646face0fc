//! Meshes, skinning, closest-point queries, local triangle coordinates and a
//! reference rasterizer.

mod accel;
mod closest;
pub mod io;
mod local;
mod raster;
mod skin;
pub mod template;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use accel::MeshAccel;
pub use closest::{closest_on_triangle, ClosestPoint, SurfaceFeature};
pub use local::LocalQuery;
pub use raster::{rasterize, Camera, RasterImage, BACKGROUND};
pub use skin::skin;

pub type Vec3 = Vector3<f64>;

/// Triangle mesh with optional per-vertex RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        Self { vertices, faces, colors: None }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.vertices.len();
        for (fi, face) in self.faces.iter().enumerate() {
            for &idx in face {
                if idx as usize >= m {
                    return Err(Error::InvalidArgument(format!(
                        "face {fi} references vertex {idx} but mesh has {m} vertices"
                    )));
                }
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != m {
                return Err(Error::Dimension(format!("{} vertex colors for {m} vertices", colors.len())));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.corners(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Angle-weighted unit vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for face in &self.faces {
            let p = face.map(|i| self.vertices[i as usize]);
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let len = n.norm();
            if len == 0.0 {
                continue;
            }
            let n = n / len;
            for k in 0..3 {
                let e1 = p[(k + 1) % 3] - p[k];
                let e2 = p[(k + 2) % 3] - p[k];
                acc[face[k] as usize] += n * corner_angle(&e1, &e2);
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::z()
                }
            })
            .collect()
    }

    /// Every undirected edge is shared by exactly two faces that traverse it
    /// in opposite directions.
    pub fn is_watertight(&self) -> bool {
        self.check_watertight().is_ok()
    }

    pub fn check_watertight(&self) -> Result<()> {
        use std::collections::HashMap;
        if self.faces.is_empty() {
            return Err(Error::NotWatertight("mesh has no faces".into()));
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.faces.len() * 3);
        for face in &self.faces {
            for k in 0..3 {
                let e = (face[k], face[(k + 1) % 3]);
                *directed.entry(e).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(Error::NotWatertight(format!("directed edge ({a}, {b}) used {count} times")));
            }
            if directed.get(&(b, a)) != Some(&1) {
                return Err(Error::NotWatertight(format!("edge ({a}, {b}) has no opposite half-edge")));
            }
        }
        Ok(())
    }

    /// Apply `x -> R x + t` to all vertices.
    pub fn transformed(&self, rotation: &nalgebra::Rotation3<f64>, translation: &Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| rotation * v + translation).collect(),
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        }
    }
}

pub(crate) fn corner_angle(e1: &Vec3, e2: &Vec3) -> f64 {
    let c = e1.cross(e2).norm();
    let d = e1.dot(e2);
    c.atan2(d)
}

/// Skeleton and skinning data attached to a template surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    /// Rest-pose joint positions.
    pub joints: Vec<Vec3>,
    /// Kinematic tree; parents precede children.
    pub parents: Vec<Option<usize>>,
    /// Row-major `M x J` skinning weights.
    pub weights: Vec<f64>,
    /// `K` shape blendshapes, each with one offset per vertex.
    pub blendshapes: Vec<Vec<Vec3>>,
}

/// Poseable template: a fixed-topology surface plus its rig.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    pub surface: TriMesh,
    pub rig: Rig,
}

impl TemplateMesh {
    pub fn new(surface: TriMesh, rig: Rig) -> Result<Self> {
        let t = Self { surface, rig };
        t.validate()?;
        Ok(t)
    }

    pub fn vertex_count(&self) -> usize {
        self.surface.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.surface.faces.len()
    }

    pub fn joint_count(&self) -> usize {
        self.rig.joints.len()
    }

    pub fn blendshape_count(&self) -> usize {
        self.rig.blendshapes.len()
    }

    #[inline]
    pub fn weight(&self, vertex: usize, joint: usize) -> f64 {
        self.rig.weights[vertex * self.rig.joints.len() + joint]
    }

    pub fn validate(&self) -> Result<()> {
        self.surface.validate()?;
        let m = self.vertex_count();
        let j = self.joint_count();
        if self.rig.parents.len() != j {
            return Err(Error::Dimension(format!("{} parents for {j} joints", self.rig.parents.len())));
        }
        for (child, parent) in self.rig.parents.iter().enumerate() {
            if let Some(p) = parent {
                if *p >= child {
                    return Err(Error::InvalidArgument(format!(
                        "joint {child} has parent {p}; parents must precede children"
                    )));
                }
            }
        }
        if self.rig.weights.len() != m * j {
            return Err(Error::Dimension(format!(
                "{} skinning weights for {m} vertices x {j} joints",
                self.rig.weights.len()
            )));
        }
        for v in 0..m {
            let row = &self.rig.weights[v * j..(v + 1) * j];
            if row.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                return Err(Error::InvalidArgument(format!("vertex {v} has a negative skinning weight")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("vertex {v} skinning weights sum to {sum}")));
            }
        }
        for (k, shape) in self.rig.blendshapes.iter().enumerate() {
            if shape.len() != m {
                return Err(Error::Dimension(format!("blendshape {k} has {} offsets", shape.len())));
            }
        }
        Ok(())
    }

    /// SHA-256 over geometry, topology and rig. Vertex colors are excluded.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"cbav-template-v1");
        h.update((self.vertex_count() as u64).to_le_bytes());
        for v in &self.surface.vertices {
            for c in v.iter() {
                h.update(c.to_le_bytes());
            }
        }
        h.update((self.face_count() as u64).to_le_bytes());
        for f in &self.surface.faces {
            for i in f {
                h.update(i.to_le_bytes());
            }
        }
        h.update((self.joint_count() as u64).to_le_bytes());
        for (jp, p) in self.rig.joints.iter().zip(&self.rig.parents) {
            for c in jp.iter() {
                h.update(c.to_le_bytes());
            }
            h.update(p.map_or(u64::MAX, |p| p as u64).to_le_bytes());
        }
        for w in &self.rig.weights {
            h.update(w.to_le_bytes());
        }
        h.update((self.blendshape_count() as u64).to_le_bytes());
        for shape in &self.rig.blendshapes {
            for v in shape {
                for c in v.iter() {
                    h.update(c.to_le_bytes());
                }
            }
        }
        h.finalize().into()
    }
}

/// Registered body parameters: per-joint axis-angle rotations, shape
/// coefficients and a root translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub joint_rotations: Vec<[f64; 3]>,
    pub shape_coeffs: Vec<f64>,
    pub root_translation: [f64; 3],
}

impl PoseParams {
    pub fn identity(joints: usize, shapes: usize) -> Self {
        Self { joint_rotations: vec![[0.0; 3]; joints], shape_coeffs: vec![0.0; shapes], root_translation: [0.0; 3] }
    }

    pub fn identity_for(template: &TemplateMesh) -> Self {
        Self::identity(template.joint_count(), template.blendshape_count())
    }

    pub fn check(&self, template: &TemplateMesh) -> Result<()> {
        if self.joint_rotations.len() != template.joint_count() {
            return Err(Error::Dimension(format!(
                "pose has {} joint rotations, template has {} joints",
                self.joint_rotations.len(),
                template.joint_count()
            )));
        }
        if self.shape_coeffs.len() != template.blendshape_count() {
            return Err(Error::Dimension(format!(
                "pose has {} shape coefficients, template has {} blendshapes",
                self.shape_coeffs.len(),
                template.blendshape_count()
            )));
        }
        let finite = self.joint_rotations.iter().flatten().all(|x| x.is_finite())
            && self.shape_coeffs.iter().all(|x| x.is_finite())
            && self.root_translation.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("pose parameters must be finite".into()));
        }
        Ok(())
    }
}
