//! Implicit patch rendering, ground-truth patch rasterization, a small patch
//! discriminator with R1, and the adversarial training step.

mod disc;
mod render;
mod step;

pub use disc::{gan_losses, softplus, DiscGrads, Discriminator, GanLosses, LEAK};
pub use render::{crop_patch, real_patches, render_patch, Patch, PatchKind, PatchRect, Provenance, RenderedPatch};
pub(crate) use render::{render_image, save_rgb_png};
pub(crate) use step::adversarial_step;
pub use step::AdvState;

use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};

pub const RING_RADIUS: f64 = 2.0;
pub const RING_ANGLES: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
pub const RING_FOV: f64 = std::f64::consts::FRAC_PI_3;

/// Cameras on a horizontal circle (y up) around `center`, aimed at it.
/// Angle 0 sits on `+x`; angles grow toward `+z`.
pub fn camera_ring(center: &Vec3, radius: f64, angles_deg: &[f64], resolution: usize) -> Result<Vec<Camera>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("ring radius {radius} must be positive")));
    }
    Ok(angles_deg
        .iter()
        .map(|a| {
            let t = a.to_radians();
            let pos = center + Vec3::new(t.cos(), 0.0, t.sin()) * radius;
            Camera::new(pos, *center, Vec3::y(), RING_FOV, resolution, resolution)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, near: f64, far: f64) -> Result<Self> {
        let len = dir.norm();
        if !(len > 0.0) || !(near < far) {
            return Err(Error::InvalidArgument(format!("bad ray: |dir|={len}, range [{near}, {far}]")));
        }
        Ok(Self { origin, dir: dir / len, near, far })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    fn sample(&self, k: usize, steps: usize) -> f64 {
        self.near + (self.far - self.near) * k as f64 / (steps - 1) as f64
    }
}

/// First sign change of a scalar field along a ray, sampled at `steps`
/// uniform positions and refined by one secant step.
pub fn intersect_ray<F>(field: F, ray: &Ray, steps: usize) -> Result<Option<(f64, Vec3)>>
where
    F: Fn(&Vec3) -> Result<f64>,
{
    let hits = intersect_rays(|xs: &[Vec3]| xs.iter().map(&field).collect(), std::slice::from_ref(ray), steps)?;
    Ok(hits[0].map(|t| (t, ray.at(t))))
}

/// Batched form of [`intersect_ray`]: all live rays advance one sample per
/// call of `field`. A ray whose first sample is already inside returns its
/// near end.
pub fn intersect_rays<F>(field: F, rays: &[Ray], steps: usize) -> Result<Vec<Option<f64>>>
where
    F: Fn(&[Vec3]) -> Result<Vec<f64>>,
{
    if steps < 2 {
        return Err(Error::InvalidArgument("ray marching needs at least 2 steps".into()));
    }
    let mut out = vec![None; rays.len()];
    let mut live: Vec<usize> = (0..rays.len()).collect();
    let mut prev = vec![0.0; rays.len()];
    for k in 0..steps {
        if live.is_empty() {
            break;
        }
        let xs: Vec<Vec3> = live.iter().map(|&i| rays[i].at(rays[i].sample(k, steps))).collect();
        let vals = field(&xs)?;
        let mut next = Vec::with_capacity(live.len());
        for (&i, &f1) in live.iter().zip(&vals) {
            let r = &rays[i];
            if k == 0 {
                if f1 < 0.0 {
                    out[i] = Some(r.near);
                } else {
                    prev[i] = f1;
                    next.push(i);
                }
                continue;
            }
            let f0 = prev[i];
            if f0 > 0.0 && f1 <= 0.0 {
                let (t0, t1) = (r.sample(k - 1, steps), r.sample(k, steps));
                out[i] = Some(if f1 == 0.0 { t1 } else { t0 + (t1 - t0) * f0 / (f0 - f1) });
            } else {
                prev[i] = f1;
                next.push(i);
            }
        }
        live = next;
    }
    Ok(out)
}
