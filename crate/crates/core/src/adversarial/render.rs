use std::path::Path;

use super::{intersect_rays, Ray};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::field::{axis_offsets, eval_sdf, DecoderGrads, Decoders, FieldBatch};
use crate::geometry::BACKGROUND;
use crate::geometry::{rasterize, Camera, MeshAccel, RasterImage, TriMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchKind {
    Color,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Rendered,
}

/// Square RGB patch; masked-out pixels hold the background gray.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub kind: PatchKind,
    pub provenance: Provenance,
    pub pixels: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

impl Patch {
    pub fn background(size: usize, kind: PatchKind, provenance: Provenance) -> Self {
        Self { size, kind, provenance, pixels: vec![[BACKGROUND; 3]; size * size], mask: vec![false; size * size] }
    }

    /// Row-major, channel-interleaved values.
    pub fn flat(&self) -> Vec<f64> {
        self.pixels.iter().flatten().copied().collect()
    }

    pub fn coverage(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_rgb_png(path, self.size, self.size, &self.pixels)
    }
}

pub(crate) fn save_rgb_png(path: &Path, width: usize, height: usize, pixels: &[[f64; 3]]) -> Result<()> {
    let mut img = image::RgbImage::new(width as u32, height as u32);
    for (i, p) in pixels.iter().enumerate() {
        let c = p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        img.put_pixel((i % width) as u32, (i / width) as u32, image::Rgb(c));
    }
    img.save(path).map_err(Error::from)
}

/// Square pixel window inside an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRect {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

impl PatchRect {
    /// Window centered on `(px, py)`, shifted to stay inside the image.
    pub fn centered(px: f64, py: f64, size: usize, width: usize, height: usize) -> Result<Self> {
        if size == 0 || size > width || size > height {
            return Err(Error::InvalidArgument(format!("patch {size} does not fit a {width}x{height} image")));
        }
        let place = |c: f64, extent: usize| {
            let start = (c - size as f64 / 2.0).round();
            start.clamp(0.0, (extent - size) as f64) as usize
        };
        Ok(Self { x0: place(px, width), y0: place(py, height), size })
    }

    fn check(&self, camera: &Camera) -> Result<()> {
        if self.size == 0 || self.x0 + self.size > camera.width || self.y0 + self.size > camera.height {
            return Err(Error::InvalidArgument("patch rectangle outside the image".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.size).flat_map(move |r| (0..self.size).map(move |c| (self.x0 + c, self.y0 + r)))
    }
}

/// Cut a patch out of a rasterized image.
pub fn crop_patch(img: &RasterImage, rect: &PatchRect, kind: PatchKind) -> Patch {
    let mut p = Patch::background(rect.size, kind, Provenance::Real);
    for (k, (x, y)) in rect.pixels().enumerate() {
        let i = y * img.width + x;
        p.mask[k] = img.mask[i];
        p.pixels[k] = match kind {
            PatchKind::Color => img.color[i],
            PatchKind::Normal => img.normal[i],
        };
    }
    p
}

/// Color and normal patches of a scan, one pair per joint per camera, each
/// centered on the joint's projection.
pub fn real_patches(scan: &TriMesh, joints: &[Vec3], cameras: &[Camera], size: usize) -> Result<Vec<(Patch, Patch)>> {
    if scan.colors.is_none() {
        return Err(Error::InvalidArgument("scan has no vertex colors".into()));
    }
    let mut out = Vec::with_capacity(joints.len() * cameras.len());
    for cam in cameras {
        let img = rasterize(scan, cam)?;
        let basis = cam.basis()?;
        for j in joints {
            let (px, py, _) = cam.project(&basis, j);
            let rect = PatchRect::centered(px, py, size, cam.width, cam.height)?;
            out.push((crop_patch(&img, &rect, PatchKind::Color), crop_patch(&img, &rect, PatchKind::Normal)));
        }
    }
    Ok(out)
}

/// Implicitly rendered color and normal patches with the tapes needed to
/// push pixel gradients back into the decoders and the codebook.
#[derive(Debug, Clone)]
pub struct RenderedPatch {
    pub color: Patch,
    pub normal: Patch,
    /// Patch pixel index of each hit, in batch order.
    pub hits: Vec<usize>,
    /// Unnormalized finite-difference gradients at the hits.
    grads: Vec<Vec3>,
    batch: Option<FieldBatch>,
    fd_eps: f64,
}

impl RenderedPatch {
    /// Reverse pass from flattened pixel gradients of both patches.
    /// Hit points are treated as constants.
    pub fn backward(
        &self,
        dec: &Decoders,
        grad_color: &[f64],
        grad_normal: &[f64],
        grads: &mut DecoderGrads,
        codebook_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let n = self.color.size * self.color.size * 3;
        if grad_color.len() != n || grad_normal.len() != n {
            return Err(Error::Dimension("pixel gradient length does not match the patch".into()));
        }
        let Some(batch) = &self.batch else { return Ok(()) };
        let h = self.hits.len();
        let mut dc = Vec::with_capacity(3 * h);
        let mut ds = vec![0.0; 7 * h];
        for (i, &p) in self.hits.iter().enumerate() {
            dc.extend_from_slice(&grad_color[3 * p..3 * p + 3]);
            let g = self.grads[i];
            let len = g.norm();
            if !(len > 0.0) {
                continue;
            }
            let nrm = g / len;
            let dn = Vec3::new(grad_normal[3 * p], grad_normal[3 * p + 1], grad_normal[3 * p + 2]) * 0.5;
            let dg = (dn - nrm * nrm.dot(&dn)) / len / (2.0 * self.fd_eps);
            let b = h + 6 * i;
            ds[b..b + 6].copy_from_slice(&[dg.x, -dg.x, dg.y, -dg.y, dg.z, -dg.z]);
        }
        batch.backward(dec, &ds, Some(&dc), grads, codebook_grad)
    }
}

/// Ray range covering the anchor's bounding sphere, inflated by 10%.
fn ray_for(camera: &Camera, basis: &[Vec3; 3], x: usize, y: usize, center: &Vec3, radius: f64) -> Result<Ray> {
    let o = camera.origin();
    let dist = (o - center).norm();
    let near = (dist - radius).max(1e-3);
    Ray::new(o, camera.ray_dir(basis, x as f64, y as f64), near, (dist + radius).max(near + 1e-3))
}

/// Render one patch of the field anchored on `anchor`: march each pixel ray
/// to the first SDF sign change, decode color there and take the normal
/// from central differences of the SDF.
pub fn render_patch(
    anchor: &MeshAccel,
    cb: &Codebook,
    dec: &Decoders,
    camera: &Camera,
    rect: &PatchRect,
    steps: usize,
    fd_eps: f64,
) -> Result<RenderedPatch> {
    rect.check(camera)?;
    let basis = camera.basis()?;
    let (lo, hi) = bounds(anchor.vertices());
    let center = (lo + hi) * 0.5;
    let radius = 0.5 * (hi - lo).norm() * 1.1;
    let rays =
        rect.pixels().map(|(x, y)| ray_for(camera, &basis, x, y, &center, radius)).collect::<Result<Vec<_>>>()?;
    let ts = intersect_rays(|xs: &[Vec3]| eval_sdf(anchor, cb, dec, xs), &rays, steps)?;

    let size = rect.size;
    let mut color = Patch::background(size, PatchKind::Color, Provenance::Rendered);
    let mut normal = Patch::background(size, PatchKind::Normal, Provenance::Rendered);
    let hits: Vec<usize> = (0..rays.len()).filter(|&i| ts[i].is_some()).collect();
    if hits.is_empty() {
        return Ok(RenderedPatch { color, normal, hits, grads: Vec::new(), batch: None, fd_eps });
    }
    let offsets = axis_offsets(fd_eps);
    let mut points: Vec<Vec3> = hits.iter().map(|&i| rays[i].at(ts[i].unwrap())).collect();
    let h = points.len();
    for i in 0..h {
        let p = points[i];
        points.extend(offsets.iter().map(|o| p + o));
    }
    let batch = FieldBatch::evaluate(anchor, cb, dec, &points, h)?;
    let s = batch.sdf();
    let mut grads = Vec::with_capacity(h);
    for (i, &p) in hits.iter().enumerate() {
        let b = h + 6 * i;
        let g = Vec3::new(s[b] - s[b + 1], s[b + 2] - s[b + 3], s[b + 4] - s[b + 5]) / (2.0 * fd_eps);
        let len = g.norm();
        let n = if len > 0.0 { g / len } else { -rays[p].dir };
        grads.push(g);
        color.pixels[p] = batch.color(i);
        color.mask[p] = true;
        normal.pixels[p] = [(n.x + 1.0) * 0.5, (n.y + 1.0) * 0.5, (n.z + 1.0) * 0.5];
        normal.mask[p] = true;
    }
    Ok(RenderedPatch { color, normal, hits, grads, batch: Some(batch), fd_eps })
}

fn bounds(vs: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for v in vs {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    (lo, hi)
}

/// Color and normal pixels, row major.
pub(crate) type Images = (Vec<[f64; 3]>, Vec<[f64; 3]>);

/// Full color and normal images rendered tile by tile.
pub(crate) fn render_image(
    anchor: &MeshAccel,
    cb: &Codebook,
    dec: &Decoders,
    camera: &Camera,
    steps: usize,
    fd_eps: f64,
) -> Result<Images> {
    const TILE: usize = 32;
    let (w, h) = (camera.width, camera.height);
    let mut color = vec![[BACKGROUND; 3]; w * h];
    let mut normal = vec![[BACKGROUND; 3]; w * h];
    let mut y0 = 0;
    while y0 < h {
        let mut x0 = 0;
        while x0 < w {
            let size = TILE.min(w - x0).min(h - y0);
            let rect = PatchRect { x0, y0, size };
            let r = render_patch(anchor, cb, dec, camera, &rect, steps, fd_eps)?;
            for (k, (x, y)) in rect.pixels().enumerate() {
                color[y * w + x] = r.color.pixels[k];
                normal[y * w + x] = r.normal.pixels[k];
            }
            x0 += size;
        }
        y0 += TILE.min(h - y0);
    }
    Ok((color, normal))
}
