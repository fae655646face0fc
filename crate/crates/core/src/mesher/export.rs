use std::path::{Path, PathBuf};

use super::{marching_cubes, VoxelGrid};
use crate::adversarial::{camera_ring, render_image, save_rgb_png, RING_RADIUS};
use crate::avatar::{Avatar, PosedAvatar};
use crate::error::{Error, Result};
use crate::field::Decoders;
use crate::geometry::io::{quantize_colors, save_mesh};
use crate::geometry::{Camera, TriMesh, Vec3};

/// Posed template bounds grown by 10% about their center.
pub fn extraction_box(posed: &PosedAvatar) -> (Vec3, Vec3) {
    let (lo, hi) = posed.template.surface.bbox();
    let c = (lo + hi) * 0.5;
    let h = (hi - lo) * 0.55;
    (c - h, c + h)
}

/// SDF of the avatar on a lattice over `min..max`.
pub fn sample_grid(
    avatar: &Avatar,
    posed: &PosedAvatar,
    decoders: &Decoders,
    min: Vec3,
    max: Vec3,
    resolution: usize,
) -> Result<VoxelGrid> {
    VoxelGrid::sample_batch(min, max, resolution, |pts| avatar.sdf(posed, decoders, pts))
}

/// Zero level set of the avatar at `resolution` voxels along the longest
/// axis of the extraction box, colored by the color field.
pub fn extract_mesh(avatar: &Avatar, posed: &PosedAvatar, decoders: &Decoders, resolution: usize) -> Result<TriMesh> {
    let (min, max) = extraction_box(posed);
    let grid = sample_grid(avatar, posed, decoders, min, max, resolution)?;
    let mut mesh = marching_cubes(&grid, 0.0);
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    color_mesh(&mut mesh, avatar, posed, decoders)?;
    Ok(mesh)
}

/// Vertex colors from the color field, quantized to 8 bits.
pub fn color_mesh(mesh: &mut TriMesh, avatar: &Avatar, posed: &PosedAvatar, decoders: &Decoders) -> Result<()> {
    let mut colors = avatar.colors(posed, decoders, &mesh.vertices)?;
    quantize_colors(&mut colors);
    mesh.colors = Some(colors);
    Ok(())
}

/// Color `mesh` and write it as OBJ or binary PLY, chosen by extension.
pub fn color_and_export(
    mesh: &TriMesh,
    avatar: &Avatar,
    posed: &PosedAvatar,
    decoders: &Decoders,
    path: &Path,
) -> Result<TriMesh> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut out = mesh.clone();
    color_mesh(&mut out, avatar, posed, decoders)?;
    save_mesh(&out, path)?;
    Ok(out)
}

/// Rendered views from evenly spaced cameras around the avatar.
pub struct Turntable {
    pub resolution: usize,
    pub cameras: Vec<Camera>,
    pub color: Vec<Vec<[f64; 3]>>,
    pub normal: Vec<Vec<[f64; 3]>>,
}

impl Turntable {
    /// Writes `{stem}_color_{k}.png` and `{stem}_normal_{k}.png`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
        let mut paths = Vec::new();
        for (k, (c, n)) in self.color.iter().zip(&self.normal).enumerate() {
            for (kind, img) in [("color", c), ("normal", n)] {
                let p = dir.join(format!("{stem}_{kind}_{k:02}.png"));
                save_rgb_png(&p, self.resolution, self.resolution, img)?;
                paths.push(p);
            }
        }
        Ok(paths)
    }
}

pub fn render_turntable(
    avatar: &Avatar,
    posed: &PosedAvatar,
    decoders: &Decoders,
    n_views: usize,
    resolution: usize,
    steps: usize,
) -> Result<Turntable> {
    if n_views == 0 {
        return Err(Error::InvalidArgument("turntable needs at least one view".into()));
    }
    let surface = &posed.template.surface;
    let (lo, hi) = surface.bbox();
    let diag = surface.bbox_diagonal();
    let angles: Vec<f64> = (0..n_views).map(|k| 360.0 * k as f64 / n_views as f64).collect();
    let cams = camera_ring(&((lo + hi) * 0.5), RING_RADIUS.max(diag), &angles, resolution)?;
    let mut t = Turntable { resolution, cameras: cams.clone(), color: Vec::new(), normal: Vec::new() };
    for cam in &cams {
        let (c, n) = render_image(&posed.accel, &avatar.codebook, decoders, cam, steps, 1e-3 * diag)?;
        t.color.push(c);
        t.normal.push(n);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avatar::Provenance;
    use crate::codebook::Codebook;
    use crate::field::{Head, Mlp, ENCODED_WIDTH};
    use crate::geometry::io::load_mesh;
    use crate::geometry::template::icosphere;
    use crate::geometry::{PoseParams, TemplateMesh, BACKGROUND};

    /// Decoders whose SDF is the local offset `d` and whose color is a fixed
    /// sigmoid of the first texture feature.
    fn offset_field(f: usize) -> (TemplateMesh, Avatar, Decoders) {
        let t = icosphere(3, 0.5);
        let w = f + ENCODED_WIDTH;
        let mut sdf = Mlp::zeros(&[w, 1], Head::Linear).unwrap();
        sdf.set_weight(0, f + 2, 0, 1.0);
        let mut color = Mlp::zeros(&[w, 3], Head::Sigmoid).unwrap();
        for k in 0..3 {
            color.set_bias(0, k, [1.0, -0.5, 0.2][k]);
        }
        let dec = Decoders::from_parts(f, sdf, color).unwrap();
        let m = t.vertex_count();
        let cb = Codebook::zeros(m, f);
        let av = Avatar::new(&t, &dec, cb, PoseParams::identity_for(&t), Provenance::Fitted).unwrap();
        (t, av, dec)
    }

    #[test]
    fn grid_follows_the_field_and_extraction_is_watertight() {
        let (t, av, dec) = offset_field(2);
        let posed = av.posed(&t).unwrap();
        let (lo, hi) = extraction_box(&posed);
        assert!((hi - lo).x > 1.09 && (hi - lo).x < 1.11);
        let g = sample_grid(&av, &posed, &dec, lo, hi, 24).unwrap();
        let mid = g.value(12, 12, 12);
        assert!((mid - posed.accel.signed_distance(&g.point(12, 12, 12)).unwrap()).abs() < 1e-12);
        let mesh = extract_mesh(&av, &posed, &dec, 32).unwrap();
        assert!(mesh.is_watertight());
        let want = [1.0f64, -0.5, 0.2].map(|b| 1.0 / (1.0 + (-b).exp()));
        for c in mesh.colors.as_ref().unwrap() {
            for k in 0..3 {
                assert!((c[k] - want[k]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn ply_export_round_trips() {
        let (t, av, dec) = offset_field(2);
        let posed = av.posed(&t).unwrap();
        let mesh = extract_mesh(&av, &posed, &dec, 20).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        let written = color_and_export(&mesh, &av, &posed, &dec, &p).unwrap();
        let back = load_mesh(&p).unwrap();
        assert_eq!(back, written);
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert!(color_and_export(&TriMesh::new(vec![], vec![]), &av, &posed, &dec, &p).is_err());
        assert!(color_and_export(&mesh, &av, &posed, &dec, &dir.path().join("missing/a.ply")).is_err());
    }

    #[test]
    fn turntable_images() {
        let (t, av, dec) = offset_field(2);
        let posed = av.posed(&t).unwrap();
        let tt = render_turntable(&av, &posed, &dec, 1, 24, 48).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = tt.save(dir.path(), "v").unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths.iter().all(|p| p.exists()));
        // Corners miss the sphere.
        assert_eq!(tt.color[0][0], [BACKGROUND; 3]);
        assert_eq!(tt.normal[0][0], [BACKGROUND; 3]);
        assert!(render_turntable(&av, &posed, &dec, 0, 24, 48).is_err());
    }

    #[test]
    fn opposite_views_of_an_asymmetric_avatar_differ() {
        let (t, mut av, dec) = offset_field(2);
        let mut color = Mlp::zeros(&[2 + ENCODED_WIDTH, 3], Head::Sigmoid).unwrap();
        color.set_weight(0, 0, 0, 4.0);
        let dec = Decoders::from_parts(2, dec.sdf.clone(), color).unwrap();
        for v in 0..t.vertex_count() {
            if t.surface.vertices[v].x > 0.0 {
                av.codebook.data_mut()[v * 4 + 2] = 1.0;
            }
        }
        av.decoder_hash = dec.weights_hash();
        let posed = av.posed(&t).unwrap();
        let tt = render_turntable(&av, &posed, &dec, 2, 24, 48).unwrap();
        let diff: f64 = tt.color[0].iter().zip(&tt.color[1]).map(|(a, b)| (a[0] - b[0]).abs()).sum();
        assert!(diff > 1.0, "{diff}");
    }
}
