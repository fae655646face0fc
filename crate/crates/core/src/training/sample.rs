use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::Scan;
use crate::error::{Error, Result};
use crate::geometry::{MeshAccel, Vec3};

/// A supervised query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub x: Vec3,
    /// Signed distance to the scan.
    pub s: f64,
    pub c: [f64; 3],
    pub n: Vec3,
}

/// Area-weighted surface sampler with ground-truth lookup for one scan.
#[derive(Debug, Clone)]
pub struct ScanSampler {
    accel: MeshAccel,
    colors: Vec<[f64; 3]>,
    cdf: Vec<f64>,
    diag: f64,
    bbox: (Vec3, Vec3),
}

/// Uniform space samples cover the scan bounds grown by this fraction.
const SPACE_GROWTH: f64 = 0.25;

impl ScanSampler {
    pub fn new(scan: &Scan) -> Result<Self> {
        let mesh = &scan.mesh;
        mesh.validate()?;
        mesh.check_watertight()?;
        let colors = match &mesh.colors {
            Some(c) => c.clone(),
            None => return Err(Error::InvalidArgument("scan has no per-vertex colors".into())),
        };
        let mut cdf = Vec::with_capacity(mesh.faces.len());
        let mut acc = 0.0;
        for f in 0..mesh.faces.len() {
            acc += mesh.face_area(f);
            cdf.push(acc);
        }
        Ok(Self { accel: MeshAccel::build(mesh)?, colors, cdf, diag: mesh.bbox_diagonal(), bbox: mesh.bbox() })
    }

    pub fn diagonal(&self) -> f64 {
        self.diag
    }

    pub fn accel(&self) -> &MeshAccel {
        &self.accel
    }

    /// Uniform point on the surface.
    pub fn surface_point(&self, rng: &mut impl Rng) -> Vec3 {
        let total = *self.cdf.last().unwrap();
        let r = rng.random::<f64>() * total;
        let face = self.cdf.partition_point(|&c| c <= r).min(self.cdf.len() - 1);
        let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
        let sa = a.sqrt();
        let [p0, p1, p2] = self.accel.corners(face);
        p0 * (1.0 - sa) + p1 * (sa * (1.0 - b)) + p2 * (sa * b)
    }

    /// Raw shell positions: surface samples plus an isotropic Gaussian
    /// offset, alternating between the two standard deviations (fractions of
    /// the diagonal).
    pub fn shell_positions(&self, n: usize, sigmas: (f64, f64), rng: &mut impl Rng) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let p = self.surface_point(rng);
                let sigma = if i % 2 == 0 { sigmas.0 } else { sigmas.1 } * self.diag;
                let g = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
                if sigma == 0.0 {
                    p
                } else {
                    p + g * sigma
                }
            })
            .collect()
    }

    /// Uniform positions in the grown bounding box of the scan.
    pub fn space_positions(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
        let (lo, hi) = self.bbox;
        let c = (lo + hi) * 0.5;
        let h = (hi - lo) * (0.5 * (1.0 + SPACE_GROWTH));
        (0..n)
            .map(|_| {
                c + Vec3::new(
                    h.x * rng.random_range(-1.0..1.0),
                    h.y * rng.random_range(-1.0..1.0),
                    h.z * rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    /// `n` positions: shell samples followed by `round(n * space_fraction)`
    /// uniform space samples.
    pub fn positions(&self, n: usize, sigmas: (f64, f64), space_fraction: f64, rng: &mut impl Rng) -> Vec<Vec3> {
        let ns = ((n as f64 * space_fraction).round() as usize).min(n);
        let mut xs = self.shell_positions(n - ns, sigmas, rng);
        xs.extend(self.space_positions(ns, rng));
        xs
    }

    /// Signed distance, color and normal of the closest scan point.
    pub fn ground_truth(&self, x: &Vec3) -> Result<SamplePoint> {
        let cp = self.accel.closest_point(x)?;
        let q = self.accel.local_coords(&cp, x);
        let c = self.accel.interpolate(&self.colors, &cp);
        Ok(SamplePoint { x: *x, s: q.d, c, n: self.accel.smooth_normal(&cp) })
    }

    pub fn label(&self, points: &[Vec3]) -> Result<Vec<SamplePoint>> {
        points.par_iter().map(|x| self.ground_truth(x)).collect()
    }

    pub fn sample(&self, n: usize, sigmas: (f64, f64), rng: &mut impl Rng) -> Result<Vec<SamplePoint>> {
        let xs = self.shell_positions(n, sigmas, rng);
        self.label(&xs)
    }
}

/// `n` thin-shell samples at the default 0.5% / 2.5% widths.
pub fn sample_points(scan: &Scan, n: usize, seed: u64) -> Result<Vec<SamplePoint>> {
    sample_points_with(scan, n, (0.005, 0.025), seed)
}

pub fn sample_points_with(scan: &Scan, n: usize, sigmas: (f64, f64), seed: u64) -> Result<Vec<SamplePoint>> {
    let sampler = ScanSampler::new(scan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sampler.sample(n, sigmas, &mut rng)
}
