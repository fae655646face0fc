use serde::{Deserialize, Serialize};

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

/// Pinhole camera. Pixel `(0, 0)` is the top-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

const NEAR_PLANE: f64 = 1e-3;

impl Camera {
    pub fn new(position: Vec3, look_at: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize) -> Self {
        Self { position: position.into(), look_at: look_at.into(), up: up.into(), fov_y, width, height }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!("fov_y {} outside (0, pi)", self.fov_y)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera resolution must be positive".into()));
        }
        self.basis().map(|_| ())
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    /// `(right, up, forward)` orthonormal basis.
    pub fn basis(&self) -> Result<[Vec3; 3]> {
        let forward = Vec3::from(self.look_at) - Vec3::from(self.position);
        let len = forward.norm();
        if !(len > 0.0) {
            return Err(Error::InvalidArgument("camera position coincides with look_at".into()));
        }
        let forward = forward / len;
        let right = forward.cross(&Vec3::from(self.up));
        let rlen = right.norm();
        if !(rlen > 1e-12) {
            return Err(Error::InvalidArgument("camera up vector is parallel to the view direction".into()));
        }
        let right = right / rlen;
        let up = right.cross(&forward);
        Ok([right, up, forward])
    }

    fn tan_half(&self) -> (f64, f64) {
        let ty = (0.5 * self.fov_y).tan();
        (ty * self.width as f64 / self.height as f64, ty)
    }

    /// Unit ray direction through the center of pixel `(px, py)`.
    pub fn ray_dir(&self, basis: &[Vec3; 3], px: f64, py: f64) -> Vec3 {
        let (tx, ty) = self.tan_half();
        let sx = (2.0 * (px + 0.5) / self.width as f64 - 1.0) * tx;
        let sy = (1.0 - 2.0 * (py + 0.5) / self.height as f64) * ty;
        (basis[2] + basis[0] * sx + basis[1] * sy).normalize()
    }

    /// Continuous pixel coordinates (pixel centers at `i + 0.5`) and view depth.
    pub fn project(&self, basis: &[Vec3; 3], p: &Vec3) -> (f64, f64, f64) {
        let rel = p - self.origin();
        let z = rel.dot(&basis[2]);
        let (tx, ty) = self.tan_half();
        let sx = rel.dot(&basis[0]) / z / tx;
        let sy = rel.dot(&basis[1]) / z / ty;
        let px = (sx + 1.0) * 0.5 * self.width as f64;
        let py = (1.0 - sy) * 0.5 * self.height as f64;
        (px, py, z)
    }
}

/// Rasterized buffers, row-major, `width * height` entries each.
#[derive(Debug, Clone)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    /// Unit normals remapped from `[-1, 1]` to `[0, 1]`.
    pub normal: Vec<[f64; 3]>,
    /// View depth; `INFINITY` for background.
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    /// Covering face, `u32::MAX` for background.
    pub face: Vec<u32>,
    /// World-space surface point under each covered pixel.
    pub position: Vec<Vec3>,
}

pub const BACKGROUND: f64 = 0.5;

/// Perspective z-buffer rasterization with perspective-correct interpolation
/// of vertex colors, angle-weighted vertex normals and positions. Meshes
/// without colors render white. Background pixels hold `BACKGROUND` gray.
pub fn rasterize(mesh: &TriMesh, camera: &Camera) -> Result<RasterImage> {
    camera.validate()?;
    mesh.validate()?;
    let basis = camera.basis()?;
    let (w, h) = (camera.width, camera.height);
    let n = w * h;
    let mut img = RasterImage {
        width: w,
        height: h,
        color: vec![[BACKGROUND; 3]; n],
        normal: vec![[BACKGROUND; 3]; n],
        depth: vec![f64::INFINITY; n],
        mask: vec![false; n],
        face: vec![u32::MAX; n],
        position: vec![Vec3::zeros(); n],
    };
    let normals = mesh.vertex_normals();
    let projected: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|v| camera.project(&basis, v)).collect();

    for (fi, face) in mesh.faces.iter().enumerate() {
        let idx = face.map(|i| i as usize);
        let p = idx.map(|i| projected[i]);
        if p.iter().any(|q| q.2 <= NEAR_PLANE) {
            continue;
        }
        let area = edge(p[0], p[1], p[2].0, p[2].1);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let xmin = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
        let xmax = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
        let ymin = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
        let ymax = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (xmin - 0.5).ceil().max(0.0) as usize;
        let y0 = (ymin - 0.5).ceil().max(0.0) as usize;
        let x1 = ((xmax - 0.5).floor()).min(w as f64 - 1.0);
        let y1 = ((ymax - 0.5).floor()).min(h as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let l0 = edge(p[1], p[2], cx, cy) / area;
                let l1 = edge(p[2], p[0], cx, cy) / area;
                let l2 = edge(p[0], p[1], cx, cy) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                // Perspective-correct weights.
                let q = [l0 / p[0].2, l1 / p[1].2, l2 / p[2].2];
                let qs = q[0] + q[1] + q[2];
                let depth = 1.0 / qs;
                let k = py * w + px;
                if depth >= img.depth[k] {
                    continue;
                }
                let bw = [q[0] / qs, q[1] / qs, q[2] / qs];
                img.depth[k] = depth;
                img.mask[k] = true;
                img.face[k] = fi as u32;
                img.position[k] =
                    mesh.vertices[idx[0]] * bw[0] + mesh.vertices[idx[1]] * bw[1] + mesh.vertices[idx[2]] * bw[2];
                let nrm = (normals[idx[0]] * bw[0] + normals[idx[1]] * bw[1] + normals[idx[2]] * bw[2]).normalize();
                img.normal[k] = [(nrm.x + 1.0) * 0.5, (nrm.y + 1.0) * 0.5, (nrm.z + 1.0) * 0.5];
                img.color[k] = match &mesh.colors {
                    Some(c) => {
                        let mut out = [0.0; 3];
                        for ch in 0..3 {
                            out[ch] = c[idx[0]][ch] * bw[0] + c[idx[1]][ch] * bw[1] + c[idx[2]][ch] * bw[2];
                        }
                        out
                    }
                    None => [1.0; 3],
                };
            }
        }
    }
    Ok(img)
}

#[inline]
fn edge(a: (f64, f64, f64), b: (f64, f64, f64), x: f64, y: f64) -> f64 {
    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::template::icosphere;

    fn front_camera(res: usize) -> Camera {
        Camera::new(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::y(), 40f64.to_radians(), res, res)
    }

    fn quad(z: f64, half: f64, color: [f64; 3]) -> TriMesh {
        let mut m = TriMesh::new(
            vec![
                Vec3::new(-half, -half, z),
                Vec3::new(half, -half, z),
                Vec3::new(half, half, z),
                Vec3::new(-half, half, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        m.colors = Some(vec![color; 4]);
        m
    }

    #[test]
    fn constant_color_triangle() {
        let mut mesh = TriMesh::new(
            vec![Vec3::new(-50.0, -50.0, 0.0), Vec3::new(50.0, -50.0, 0.0), Vec3::new(0.0, 80.0, 0.0)],
            vec![[0, 1, 2]],
        );
        mesh.colors = Some(vec![[0.2, 0.4, 0.6]; 3]);
        let img = rasterize(&mesh, &front_camera(64)).unwrap();
        assert!(img.mask.iter().all(|m| *m));
        for c in &img.color {
            for (a, b) in c.iter().zip([0.2, 0.4, 0.6]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nearer_triangle_wins() {
        // Camera at z = 5 looking down -z: z = 4 is depth 1, z = 3 is depth 2.
        let near = quad(4.0, 0.1, [1.0, 0.0, 0.0]);
        let far = quad(3.0, 0.5, [0.0, 0.0, 1.0]);
        for order in [[&near, &far], [&far, &near]] {
            let mut merged = order[0].clone();
            let offset = merged.vertices.len() as u32;
            merged.vertices.extend(order[1].vertices.iter());
            merged.faces.extend(order[1].faces.iter().map(|f| f.map(|i| i + offset)));
            merged.colors.as_mut().unwrap().extend(order[1].colors.as_ref().unwrap());
            let img = rasterize(&merged, &front_camera(64)).unwrap();
            let center = 32 * 64 + 32;
            assert_eq!(img.color[center], [1.0, 0.0, 0.0]);
            assert!((img.depth[center] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_silhouette_matches_projected_disk() {
        let sphere = icosphere(4, 1.0).surface;
        let res = 256;
        let cam = front_camera(res);
        let img = rasterize(&sphere, &cam).unwrap();
        let covered = img.mask.iter().filter(|m| **m).count() as f64;
        // Silhouette cone half-angle asin(r / D); image-plane radius tan of it.
        let alpha = (1.0f64 / 5.0).asin();
        let radius_px = alpha.tan() / (0.5 * cam.fov_y).tan() * res as f64 / 2.0;
        let expected = std::f64::consts::PI * radius_px * radius_px;
        assert!((covered - expected).abs() / expected < 0.03, "{covered} vs {expected}");
        // Center normal faces the camera.
        let c = img.normal[(res / 2) * res + res / 2];
        assert!((c[2] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn depth_does_not_increase_when_moving_closer() {
        let mut prev = f64::INFINITY;
        for step in 0..10 {
            let z = step as f64 * 0.3;
            let img = rasterize(&quad(z, 0.5, [1.0; 3]), &front_camera(32)).unwrap();
            let d = img.depth[16 * 32 + 16];
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn coincident_camera_is_rejected() {
        let mut cam = front_camera(8);
        cam.look_at = cam.position;
        assert!(rasterize(&quad(0.0, 1.0, [1.0; 3]), &cam).is_err());
    }
}
