use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Scalar samples on a lattice of cubic voxels. `cells` counts voxels per
/// axis; there are `cells + 1` lattice points along each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub min: Vec3,
    pub voxel: f64,
    pub cells: [usize; 3],
    /// x-fastest lattice values.
    pub values: Vec<f64>,
}

impl VoxelGrid {
    /// Lattice layout for a box with `resolution` voxels along its longest
    /// axis. Shorter axes get as many voxels as needed to cover the box.
    pub fn layout(min: Vec3, max: Vec3, resolution: usize) -> Result<(f64, [usize; 3])> {
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!("grid resolution {resolution} < 2")));
        }
        let ext = max - min;
        if !(ext.min() > 0.0) || !ext.iter().all(|e| e.is_finite()) || !min.iter().all(|m| m.is_finite()) {
            return Err(Error::InvalidArgument(format!("degenerate grid box {min:?} .. {max:?}")));
        }
        let voxel = ext.max() / resolution as f64;
        let cells = [0, 1, 2].map(|a| ((ext[a] / voxel - 1e-9).ceil() as usize).max(2));
        Ok((voxel, cells))
    }

    /// Evaluate `field` at every lattice point. Slabs run in parallel and are
    /// gathered in order, so the result does not depend on the thread count.
    pub fn sample<F>(min: Vec3, max: Vec3, resolution: usize, field: F) -> Result<Self>
    where
        F: Fn(&Vec3) -> Result<f64> + Sync,
    {
        let (voxel, cells) = Self::layout(min, max, resolution)?;
        let [nx, ny, nz] = cells.map(|c| c + 1);
        let slabs: Vec<Result<Vec<f64>>> = (0..nz)
            .into_par_iter()
            .map(|k| {
                let mut out = Vec::with_capacity(nx * ny);
                for j in 0..ny {
                    for i in 0..nx {
                        let x = lattice_point(&min, voxel, i, j, k);
                        let s = field(&x)?;
                        if !s.is_finite() {
                            return Err(Error::Numeric(format!("field is not finite at {x:?}")));
                        }
                        out.push(s);
                    }
                }
                Ok(out)
            })
            .collect();
        let mut values = Vec::with_capacity(nx * ny * nz);
        for slab in slabs {
            values.extend(slab?);
        }
        Ok(Self { min, voxel, cells, values })
    }

    /// Evaluate a batched field over all lattice points at once, x fastest.
    pub fn sample_batch<F>(min: Vec3, max: Vec3, resolution: usize, field: F) -> Result<Self>
    where
        F: FnOnce(&[Vec3]) -> Result<Vec<f64>>,
    {
        let (voxel, cells) = Self::layout(min, max, resolution)?;
        let [nx, ny, nz] = cells.map(|c| c + 1);
        let mut points = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    points.push(lattice_point(&min, voxel, i, j, k));
                }
            }
        }
        let values = field(&points)?;
        if values.len() != points.len() {
            return Err(Error::Dimension(format!("{} values for {} lattice points", values.len(), points.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("field is not finite at {:?}", points[i])));
        }
        Ok(Self { min, voxel, cells, values })
    }

    pub fn point_counts(&self) -> [usize; 3] {
        self.cells.map(|c| c + 1)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.point_counts();
        i + nx * (j + ny * k)
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        lattice_point(&self.min, self.voxel, i, j, k)
    }
}

#[inline]
fn lattice_point(min: &Vec3, voxel: f64, i: usize, j: usize, k: usize) -> Vec3 {
    Vec3::new(min.x + voxel * i as f64, min.y + voxel * j as f64, min.z + voxel * k as f64)
}
