//! Per-vertex feature codebooks, multi-subject dictionaries, barycentric
//! fusion, row swapping and the PCA sampler.

mod pca;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::LocalQuery;

pub use pca::{pca_fit, PcaModel};

/// Standard deviation of freshly initialized dictionary entries.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    Geometry,
    Texture,
}

/// Which halves of a codebook an edit touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KindMask {
    pub geometry: bool,
    pub texture: bool,
}

impl KindMask {
    pub const BOTH: KindMask = KindMask { geometry: true, texture: true };
    pub const GEOMETRY: KindMask = KindMask { geometry: true, texture: false };
    pub const TEXTURE: KindMask = KindMask { geometry: false, texture: true };
}

/// `M x 2F` per-vertex features of one subject: geometry in the first `F`
/// columns, texture in the last `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    m: usize,
    f: usize,
    data: Vec<f64>,
}

impl Codebook {
    pub fn new(m: usize, f: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || f == 0 {
            return Err(Error::InvalidArgument("codebook needs M >= 1 and F >= 1".into()));
        }
        if data.len() != m * 2 * f {
            return Err(Error::Dimension(format!("{} codebook entries for M={m}, F={f}", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { m, f, data })
    }

    pub fn zeros(m: usize, f: usize) -> Self {
        Self { m, f, data: vec![0.0; m * 2 * f] }
    }

    /// Interleave flattened `M * F` geometry and texture rows.
    pub fn from_rows(geometry: &[f64], texture: &[f64], m: usize, f: usize) -> Result<Self> {
        if geometry.len() != m * f || texture.len() != m * f {
            return Err(Error::Dimension(format!(
                "rows of length {} and {} for M={m}, F={f}",
                geometry.len(),
                texture.len()
            )));
        }
        let mut data = Vec::with_capacity(m * 2 * f);
        for v in 0..m {
            data.extend_from_slice(&geometry[v * f..(v + 1) * f]);
            data.extend_from_slice(&texture[v * f..(v + 1) * f]);
        }
        Self::new(m, f, data)
    }

    pub fn vertex_count(&self) -> usize {
        self.m
    }

    pub fn feature_dim(&self) -> usize {
        self.f
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * 2 * self.f..(v + 1) * 2 * self.f]
    }

    #[inline]
    pub fn geometry(&self, v: usize) -> &[f64] {
        &self.data[v * 2 * self.f..v * 2 * self.f + self.f]
    }

    #[inline]
    pub fn texture(&self, v: usize) -> &[f64] {
        &self.data[v * 2 * self.f + self.f..(v + 1) * 2 * self.f]
    }

    /// Flattened `M * F` row of one kind, as stored in a dictionary.
    pub fn kind_row(&self, kind: FeatureKind) -> Vec<f64> {
        let off = match kind {
            FeatureKind::Geometry => 0,
            FeatureKind::Texture => self.f,
        };
        let mut out = Vec::with_capacity(self.m * self.f);
        for v in 0..self.m {
            let base = v * 2 * self.f + off;
            out.extend_from_slice(&self.data[base..base + self.f]);
        }
        out
    }

    pub fn set_kind_row(&mut self, kind: FeatureKind, row: &[f64]) -> Result<()> {
        if row.len() != self.m * self.f {
            return Err(Error::Dimension(format!("row length {} for M*F={}", row.len(), self.m * self.f)));
        }
        let off = match kind {
            FeatureKind::Geometry => 0,
            FeatureKind::Texture => self.f,
        };
        for v in 0..self.m {
            let base = v * 2 * self.f + off;
            self.data[base..base + self.f].copy_from_slice(&row[v * self.f..(v + 1) * self.f]);
        }
        Ok(())
    }

    /// SHA-256 of the little-endian feature bytes.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.m as u64).to_le_bytes());
        h.update((self.f as u64).to_le_bytes());
        for x in &self.data {
            h.update(x.to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Barycentric blend of the three corner features of a face for both kinds.
/// `geometry` and `texture` must each hold `F` values.
pub fn fuse_into(
    cb: &Codebook,
    corners: [u32; 3],
    weights: [f64; 3],
    geometry: &mut [f64],
    texture: &mut [f64],
) -> Result<()> {
    let f = cb.f;
    if geometry.len() != f || texture.len() != f {
        return Err(Error::Dimension(format!("fusion buffers must hold F={f} values")));
    }
    for &c in &corners {
        if c as usize >= cb.m {
            return Err(Error::IndexOutOfRange { index: c as usize, len: cb.m });
        }
    }
    geometry.fill(0.0);
    texture.fill(0.0);
    for (&c, &w) in corners.iter().zip(&weights) {
        let row = cb.row(c as usize);
        for k in 0..f {
            geometry[k] += w * row[k];
            texture[k] += w * row[f + k];
        }
    }
    Ok(())
}

/// Fused `(geometry, texture)` features for a local query on a mesh with the
/// given faces.
pub fn lookup_fused(cb: &Codebook, faces: &[[u32; 3]], q: &LocalQuery) -> Result<(Vec<f64>, Vec<f64>)> {
    let corners = *faces.get(q.face).ok_or(Error::IndexOutOfRange { index: q.face, len: faces.len() })?;
    let mut g = vec![0.0; cb.f];
    let mut t = vec![0.0; cb.f];
    fuse_into(cb, corners, q.weights(), &mut g, &mut t)?;
    Ok((g, t))
}

/// Copy the selected kinds of `src` rows in `vertices` over `dst`.
pub fn swap_rows(dst: &Codebook, src: &Codebook, vertices: &[usize], kinds: KindMask) -> Result<Codebook> {
    if dst.m != src.m || dst.f != src.f {
        return Err(Error::Dimension(format!("codebook shapes differ: {}x{} vs {}x{}", dst.m, dst.f, src.m, src.f)));
    }
    if let Some(&bad) = vertices.iter().find(|&&v| v >= dst.m) {
        return Err(Error::IndexOutOfRange { index: bad, len: dst.m });
    }
    let mut out = dst.clone();
    let f = dst.f;
    for &v in vertices {
        let base = v * 2 * f;
        if kinds.geometry {
            out.data[base..base + f].copy_from_slice(&src.data[base..base + f]);
        }
        if kinds.texture {
            out.data[base + f..base + 2 * f].copy_from_slice(&src.data[base + f..base + 2 * f]);
        }
    }
    Ok(out)
}

/// `N x (M * F)` stack of per-subject features of one kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub kind: FeatureKind,
    n: usize,
    m: usize,
    f: usize,
    entries: Vec<f64>,
}

impl Dictionary {
    pub fn new(kind: FeatureKind, n: usize, m: usize, f: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || f == 0 {
            return Err(Error::InvalidArgument(format!("dictionary sizes must be positive (N={n}, M={m}, F={f})")));
        }
        if entries.len() != n * m * f {
            return Err(Error::Dimension(format!("{} entries for N={n}, M={m}, F={f}", entries.len())));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { kind, n, m, f, entries })
    }

    pub fn subject_count(&self) -> usize {
        self.n
    }

    pub fn vertex_count(&self) -> usize {
        self.m
    }

    pub fn feature_dim(&self) -> usize {
        self.f
    }

    pub fn row_len(&self) -> usize {
        self.m * self.f
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn row(&self, i: usize) -> Result<&[f64]> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, len: self.n });
        }
        let l = self.row_len();
        Ok(&self.entries[i * l..(i + 1) * l])
    }

    pub fn row_mut(&mut self, i: usize) -> Result<&mut [f64]> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, len: self.n });
        }
        let l = self.row_len();
        Ok(&mut self.entries[i * l..(i + 1) * l])
    }

    /// Column mean over subjects.
    pub fn mean_row(&self) -> Vec<f64> {
        let l = self.row_len();
        let mut mean = vec![0.0; l];
        for i in 0..self.n {
            for (m, x) in mean.iter_mut().zip(&self.entries[i * l..(i + 1) * l]) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.n as f64);
        mean
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Dictionary with i.i.d. `N(0, INIT_STD^2)` entries, reproducible from `seed`.
pub fn init_dictionary(kind: FeatureKind, n: usize, m: usize, f: usize, seed: u64) -> Result<Dictionary> {
    if n == 0 || m == 0 || f == 0 {
        return Err(Error::InvalidArgument(format!("dictionary sizes must be positive (N={n}, M={m}, F={f})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let entries = (0..n * m * f).map(|_| normal.sample(&mut rng)).collect();
    Dictionary::new(kind, n, m, f, entries)
}

/// Codebook of subject `i` assembled from a geometry and a texture dictionary.
pub fn codebook_from_dictionaries(shape: &Dictionary, color: &Dictionary, i: usize) -> Result<Codebook> {
    if shape.m != color.m || shape.f != color.f {
        return Err(Error::Dimension("shape and color dictionaries differ in M or F".into()));
    }
    Codebook::from_rows(shape.row(i)?, color.row(i)?, shape.m, shape.f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use proptest::prelude::*;

    fn query(face: usize, u: f64, v: f64) -> LocalQuery {
        LocalQuery { face, u, v, d: 0.0, dir: Vec3::z(), dir_local: Vec3::z() }
    }

    #[test]
    fn init_moments_and_determinism() {
        let d = init_dictionary(FeatureKind::Geometry, 1, 3, 2, 5).unwrap();
        assert_eq!(d.entries().len(), 6);
        let big = init_dictionary(FeatureKind::Geometry, 10, 1000, 10, 9).unwrap();
        let n = big.entries().len() as f64;
        let mean = big.entries().iter().sum::<f64>() / n;
        let var = big.entries().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 2e-4);
        assert!((var.sqrt() - INIT_STD).abs() < 2e-4);
        assert_eq!(big, init_dictionary(FeatureKind::Geometry, 10, 1000, 10, 9).unwrap());
        assert!(init_dictionary(FeatureKind::Texture, 0, 3, 2, 0).is_err());
    }

    #[test]
    fn full_scale_row_size() {
        let (m, f) = (10475usize, 32usize);
        assert_eq!(m * f, 335_200);
        assert_eq!(m * f * 4, 1_340_800);
        assert_eq!(m * f * 2 * 4, 2_681_600);
    }

    #[test]
    fn fusion_cases() {
        let faces = [[0u32, 1, 2]];
        let mut data = vec![0.0; 3 * 6];
        for v in 0..3 {
            data[v * 6 + v] = 1.0;
            data[v * 6 + 3 + v] = 2.0;
        }
        let cb = Codebook::new(3, 3, data).unwrap();
        let (g, t) = lookup_fused(&cb, &faces, &query(0, 1.0, 0.0)).unwrap();
        assert_eq!(g, cb.geometry(0));
        assert_eq!(t, cb.texture(0));
        let (g, _) = lookup_fused(&cb, &faces, &query(0, 1.0 / 3.0, 1.0 / 3.0)).unwrap();
        for x in g {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(lookup_fused(&cb, &faces, &query(1, 0.2, 0.2)).is_err());
    }

    #[test]
    fn constant_features_are_reproduced() {
        let w = [0.3, -1.2, 4.0, 0.5];
        let data: Vec<f64> = (0..3).flat_map(|_| w).collect();
        let cb = Codebook::new(3, 2, data).unwrap();
        for (u, v) in [(0.1, 0.2), (0.7, 0.3), (0.0, 0.0)] {
            let (g, t) = lookup_fused(&cb, &[[0, 1, 2]], &query(0, u, v)).unwrap();
            for (a, b) in g.iter().chain(&t).zip(w) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swap_is_restricted_to_set_and_kinds() {
        let a = Codebook::new(4, 2, (0..16).map(|x| x as f64).collect()).unwrap();
        let b = Codebook::new(4, 2, (0..16).map(|x| -(x as f64) - 1.0).collect()).unwrap();
        assert_eq!(swap_rows(&a, &b, &[], KindMask::BOTH).unwrap(), a);
        let s = swap_rows(&a, &b, &[1, 3], KindMask::GEOMETRY).unwrap();
        for v in 0..4 {
            assert_eq!(s.texture(v), a.texture(v));
            let expected = if v == 1 || v == 3 { b.geometry(v) } else { a.geometry(v) };
            assert_eq!(s.geometry(v), expected);
        }
        let back = swap_rows(&s, &a, &[1, 3], KindMask::BOTH).unwrap();
        assert_eq!(back, a);
        assert!(swap_rows(&a, &b, &[4], KindMask::BOTH).is_err());
        assert!(swap_rows(&a, &Codebook::zeros(4, 3), &[0], KindMask::BOTH).is_err());
    }

    #[test]
    fn kind_rows_round_trip() {
        let g: Vec<f64> = (0..6).map(|x| x as f64).collect();
        let t: Vec<f64> = (0..6).map(|x| 10.0 + x as f64).collect();
        let mut cb = Codebook::from_rows(&g, &t, 3, 2).unwrap();
        assert_eq!(cb.kind_row(FeatureKind::Geometry), g);
        assert_eq!(cb.kind_row(FeatureKind::Texture), t);
        cb.set_kind_row(FeatureKind::Texture, &g).unwrap();
        assert_eq!(cb.kind_row(FeatureKind::Texture), g);
        assert_eq!(cb.kind_row(FeatureKind::Geometry), g);
    }

    proptest! {
        #[test]
        fn fusion_is_linear(
            a in proptest::collection::vec(-5.0f64..5.0, 12),
            b in proptest::collection::vec(-5.0f64..5.0, 12),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            u in 0.0f64..1.0,
            t in 0.0f64..1.0,
        ) {
            let v = (1.0 - u) * t;
            let ca = Codebook::new(3, 2, a.clone()).unwrap();
            let cb = Codebook::new(3, 2, b.clone()).unwrap();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let cm = Codebook::new(3, 2, mix).unwrap();
            let q = query(0, u, v);
            let faces = [[2u32, 0, 1]];
            let (ga, ta) = lookup_fused(&ca, &faces, &q).unwrap();
            let (gb, tb) = lookup_fused(&cb, &faces, &q).unwrap();
            let (gm, tm) = lookup_fused(&cm, &faces, &q).unwrap();
            for k in 0..2 {
                prop_assert!((gm[k] - (alpha * ga[k] + beta * gb[k])).abs() < 1e-7);
                prop_assert!((tm[k] - (alpha * ta[k] + beta * tb[k])).abs() < 1e-7);
            }
        }

        #[test]
        fn swap_touches_exactly_the_selected_entries(
            set in proptest::collection::btree_set(0usize..10, 0..10),
            geometry in any::<bool>(),
            texture in any::<bool>(),
        ) {
            let a = Codebook::new(10, 3, (0..60).map(|x| x as f64).collect()).unwrap();
            let b = Codebook::new(10, 3, (0..60).map(|x| 100.0 + x as f64).collect()).unwrap();
            let set: Vec<usize> = set.into_iter().collect();
            let s = swap_rows(&a, &b, &set, KindMask { geometry, texture }).unwrap();
            let changed = s.data().iter().zip(a.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
            let cols = 3 * (geometry as usize + texture as usize);
            prop_assert_eq!(changed, set.len() * cols);
        }
    }
}
