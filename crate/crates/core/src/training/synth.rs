use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::error::{Error, Result};
use crate::geometry::{PoseParams, TemplateMesh, TriMesh, Vec3};

/// Default surface displacement amplitude, as a fraction of the bbox diagonal.
pub const DEFAULT_AMPLITUDE: f64 = 0.01;
const MAX_AMPLITUDE: f64 = 0.05;
const WAVES: usize = 6;

/// A colored, watertight scan registered to the template by a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub mesh: TriMesh,
    pub pose: PoseParams,
    pub subject_id: usize,
}

impl Scan {
    pub fn validate(&self, template: &TemplateMesh) -> Result<()> {
        self.mesh.validate()?;
        self.mesh.check_watertight()?;
        self.pose.check(template)?;
        match &self.mesh.colors {
            Some(c) if c.len() == self.mesh.vertices.len() => Ok(()),
            _ => Err(Error::InvalidArgument("scan has no per-vertex colors".into())),
        }
    }
}

/// Deterministic synthetic subject with the default amplitude.
pub fn synth_scan(template: &TemplateMesh, seed: u64) -> Result<Scan> {
    synth_scan_with(template, seed, DEFAULT_AMPLITUDE)
}

/// Displace the template along its vertex normals by a sum of a few random
/// plane waves and paint region palettes with soft stripes. `amplitude` is a
/// fraction of the bbox diagonal. The identity pose is recorded as
/// registration.
pub fn synth_scan_with(template: &TemplateMesh, seed: u64, amplitude: f64) -> Result<Scan> {
    template.validate()?;
    if !(0.0..=MAX_AMPLITUDE).contains(&amplitude) {
        return Err(Error::InvalidArgument(format!("amplitude {amplitude} outside [0, {MAX_AMPLITUDE}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = &template.surface;
    let diag = surface.bbox_diagonal();
    let amp = amplitude * diag;

    let mut weights: Vec<f64> = (0..WAVES).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let waves: Vec<(Vec3, f64, f64)> = weights
        .iter()
        .map(|_| {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            let k = rng.random_range(1.0..3.0) * std::f64::consts::TAU / diag;
            (Vec3::from(d), k, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();

    let normals = surface.vertex_normals();
    let vertices = if amp == 0.0 {
        surface.vertices.clone()
    } else {
        surface
            .vertices
            .iter()
            .zip(&normals)
            .map(|(v, n)| {
                let h: f64 = waves.iter().zip(&weights).map(|((d, k, p), w)| w * (k * d.dot(v) + p).sin()).sum();
                v + n * (amp * h)
            })
            .collect()
    };

    // Palettes per body region: torso, head, arms, legs.
    let palette: Vec<[f64; 3]> =
        (0..4).map(|_| [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]).collect();
    let stripe_period = rng.random_range(0.08..0.2);
    let stripe_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let j = template.joint_count();
    let colors = surface
        .vertices
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let dominant = (0..j).max_by(|&a, &b| template.weight(vi, a).total_cmp(&template.weight(vi, b))).unwrap();
            let region = region_of(dominant, j);
            let stripe = if region == 0 {
                0.8 + 0.2 * (std::f64::consts::TAU * v.y / stripe_period + stripe_phase).sin()
            } else {
                1.0
            };
            palette[region].map(|c| (c * stripe).clamp(0.0, 1.0))
        })
        .collect();

    let mut mesh = TriMesh::new(vertices, surface.faces.clone());
    mesh.colors = Some(colors);
    Ok(Scan { mesh, pose: PoseParams::identity_for(template), subject_id: 0 })
}

/// Palette region of a joint for the humanoid rig; other rigs use one region
/// per joint modulo four.
fn region_of(joint: usize, joints: usize) -> usize {
    if joints != 11 {
        return joint % 4;
    }
    match joint {
        0 | 1 => 0,
        2 => 1,
        3..=6 => 2,
        _ => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::template::{humanoid, icosphere};

    #[test]
    fn zero_amplitude_is_template_geometry() {
        let t = icosphere(2, 1.0);
        let s = synth_scan_with(&t, 3, 0.0).unwrap();
        assert_eq!(s.mesh.vertices, t.surface.vertices);
        assert_eq!(s.mesh.faces, t.surface.faces);
        s.validate(&t).unwrap();
    }

    #[test]
    fn same_seed_same_scan() {
        let t = icosphere(2, 1.0);
        assert_eq!(synth_scan(&t, 9).unwrap(), synth_scan(&t, 9).unwrap());
    }

    #[test]
    fn seed_sweep_gives_distinct_subjects() {
        let t = humanoid();
        let scans: Vec<Scan> = (0..16).map(|s| synth_scan(&t, s).unwrap()).collect();
        let diag = t.surface.bbox_diagonal();
        for s in &scans {
            s.validate(&t).unwrap();
            for (a, b) in s.mesh.vertices.iter().zip(&t.surface.vertices) {
                assert!((a - b).norm() <= DEFAULT_AMPLITUDE * diag + 1e-12);
            }
            for c in s.mesh.colors.as_ref().unwrap() {
                assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
        for i in 0..16 {
            for j in i + 1..16 {
                let rms = (scans[i].mesh.vertices.iter().zip(&scans[j].mesh.vertices))
                    .map(|(a, b)| (a - b).norm_squared())
                    .sum::<f64>()
                    .sqrt();
                assert!(rms > 0.0, "scans {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn amplitude_bound_enforced() {
        assert!(synth_scan_with(&icosphere(1, 1.0), 0, 0.06).is_err());
    }
}
