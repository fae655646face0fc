//! Surface reconstruction metrics between two triangle meshes.
//!
//! Points are drawn area-uniformly from each mesh and matched to the closest
//! point on the other surface. Normals are the face normals at both ends.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{MeshAccel, TriMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceMetrics {
    /// Mean distance from predicted samples to the reference surface.
    pub accuracy: f64,
    /// Mean distance from reference samples to the predicted surface.
    pub completeness: f64,
    /// `(accuracy + completeness) / 2`.
    pub chamfer: f64,
    /// Mean absolute cosine between matched face normals, both directions.
    pub normal_consistency: f64,
    pub f_score: f64,
    pub threshold: f64,
}

/// Area-uniform surface samples with the normal of the face they came from.
pub fn sample_surface(mesh: &TriMesh, n: usize, rng: &mut impl Rng) -> Result<Vec<(Vec3, Vec3)>> {
    if mesh.faces.is_empty() {
        return Err(Error::InvalidArgument("cannot sample an empty mesh".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("mesh has zero surface area".into()));
    }
    Ok((0..n)
        .map(|_| {
            let t = rng.random::<f64>() * total;
            let f = cdf.partition_point(|&c| c < t).min(cdf.len() - 1);
            let [a, b, c] = mesh.corners(f);
            let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            let p = a + (b - a) * r1 + (c - a) * r2;
            let nrm = (b - a).cross(&(c - a));
            let len = nrm.norm();
            (p, if len > 0.0 { nrm / len } else { Vec3::zeros() })
        })
        .collect())
}

fn one_way(samples: &[(Vec3, Vec3)], target: &MeshAccel, tau: f64) -> Result<(f64, f64, f64)> {
    let per: Vec<(f64, f64, f64)> = samples
        .par_iter()
        .map(|(p, n)| {
            let cp = target.closest_point(p)?;
            let cos = target.face_normal(cp.face).dot(n).abs();
            Ok((cp.distance, cos, if cp.distance <= tau { 1.0 } else { 0.0 }))
        })
        .collect::<Result<_>>()?;
    let k = per.len() as f64;
    let (d, c, hit) = per.iter().fold((0.0, 0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2));
    Ok((d / k, c / k, hit / k))
}

/// Chamfer distance, normal consistency and f-score at threshold `tau`
/// from `n` samples per surface.
pub fn compare_meshes(pred: &TriMesh, gt: &TriMesh, n: usize, tau: f64, seed: u64) -> Result<SurfaceMetrics> {
    if n == 0 {
        return Err(Error::InvalidArgument("metric sample count must be positive".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("f-score threshold {tau} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ps = sample_surface(pred, n, &mut rng)?;
    let gs = sample_surface(gt, n, &mut rng)?;
    let (acc, nc_p, precision) = one_way(&ps, &MeshAccel::build(gt)?, tau)?;
    let (comp, nc_g, recall) = one_way(&gs, &MeshAccel::build(pred)?, tau)?;
    let f_score = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(SurfaceMetrics {
        accuracy: acc,
        completeness: comp,
        chamfer: 0.5 * (acc + comp),
        normal_consistency: 0.5 * (nc_p + nc_g),
        f_score,
        threshold: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::template::icosphere;

    #[test]
    fn identical_meshes_score_perfectly() {
        let m = icosphere(2, 1.0).surface;
        let r = compare_meshes(&m, &m, 2000, 0.01, 1).unwrap();
        assert!(r.chamfer < 1e-12);
        assert!((r.normal_consistency - 1.0).abs() < 1e-12);
        assert_eq!(r.f_score, 1.0);
    }

    #[test]
    fn offset_spheres_match_radius_gap() {
        // Concentric spheres: every sample sits about |r1 - r0| from the other.
        let a = icosphere(4, 1.0).surface;
        let b = icosphere(4, 1.1).surface;
        let r = compare_meshes(&a, &b, 3000, 0.05, 2).unwrap();
        assert!((r.chamfer - 0.1).abs() < 5e-3, "{}", r.chamfer);
        assert!(r.normal_consistency > 0.99);
        assert_eq!(r.f_score, 0.0);
    }

    #[test]
    fn samples_lie_on_the_surface() {
        let m = icosphere(3, 2.0).surface;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let accel = MeshAccel::build(&m).unwrap();
        for (p, n) in sample_surface(&m, 500, &mut rng).unwrap() {
            assert!(accel.closest_point(&p).unwrap().distance < 1e-12);
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mesh_rejected() {
        let m = TriMesh::new(vec![], vec![]);
        assert!(compare_meshes(&m, &icosphere(1, 1.0).surface, 10, 0.1, 0).is_err());
    }
}
