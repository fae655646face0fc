use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Dictionary;
use crate::error::{Error, Result};

/// Linear Gaussian model of dictionary rows: `row = mean + k^T eigvecs` with
/// `k ~ N(coeff_mean, coeff_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D x L` orthonormal rows.
    pub eigvecs: Vec<f64>,
    pub singular_values: Vec<f64>,
    /// `N x D` projections of the training rows.
    pub train_coeffs: Vec<f64>,
    pub coeff_mean: Vec<f64>,
    /// `D x D`, symmetric.
    pub coeff_cov: Vec<f64>,
    dim: usize,
    row_len: usize,
    subjects: usize,
}

/// Fit `d` principal directions of the dictionary rows by SVD of the
/// centered row matrix. `d` is clamped to `N - 1` (and `L`).
pub fn pca_fit(dict: &Dictionary, d: usize) -> Result<PcaModel> {
    let n = dict.subject_count();
    let l = dict.row_len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 subjects, dictionary has {n}")));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("PCA dimension must be at least 1".into()));
    }
    let cap = (n - 1).min(l);
    let dim = if d > cap {
        log::warn!("PCA dimension {d} clamped to {cap} for {n} subjects");
        cap
    } else {
        d
    };

    let mean = dict.mean_row();
    let centered = DMatrix::from_fn(n, l, |i, j| dict.entries()[i * l + j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let mut eigvecs = Vec::with_capacity(dim * l);
    let mut singular_values = Vec::with_capacity(dim);
    for &r in order.iter().take(dim) {
        singular_values.push(svd.singular_values[r]);
        // Sign convention: largest-magnitude component positive.
        let row = v_t.row(r);
        let pivot = row.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        eigvecs.extend(row.iter().map(|x| x * sign));
    }

    let mut model = PcaModel {
        mean,
        eigvecs,
        singular_values,
        train_coeffs: Vec::with_capacity(n * dim),
        coeff_mean: vec![0.0; dim],
        coeff_cov: vec![0.0; dim * dim],
        dim,
        row_len: l,
        subjects: n,
    };
    for i in 0..n {
        let k = model.project(&dict.entries()[i * l..(i + 1) * l])?;
        model.train_coeffs.extend(k);
    }
    for i in 0..n {
        for a in 0..dim {
            model.coeff_mean[a] += model.train_coeffs[i * dim + a] / n as f64;
        }
    }
    for i in 0..n {
        for a in 0..dim {
            let da = model.train_coeffs[i * dim + a] - model.coeff_mean[a];
            for b in 0..dim {
                let db = model.train_coeffs[i * dim + b] - model.coeff_mean[b];
                model.coeff_cov[a * dim + b] += da * db / (n - 1) as f64;
            }
        }
    }
    Ok(model)
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn subject_count(&self) -> usize {
        self.subjects
    }

    pub fn eigvec(&self, j: usize) -> &[f64] {
        &self.eigvecs[j * self.row_len..(j + 1) * self.row_len]
    }

    /// `k = eigvecs (row - mean)`.
    pub fn project(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.row_len {
            return Err(Error::Dimension(format!("row length {} for model with L={}", row.len(), self.row_len)));
        }
        Ok((0..self.dim)
            .map(|j| self.eigvec(j).iter().zip(row.iter().zip(&self.mean)).map(|(e, (x, m))| e * (x - m)).sum())
            .collect())
    }

    /// `mean + k^T eigvecs`.
    pub fn reconstruct(&self, k: &[f64]) -> Result<Vec<f64>> {
        if k.len() != self.dim {
            return Err(Error::Dimension(format!("{} coefficients for D={}", k.len(), self.dim)));
        }
        let mut out = self.mean.clone();
        for (j, kj) in k.iter().enumerate() {
            if *kj == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(self.eigvec(j)) {
                *o += kj * e;
            }
        }
        Ok(out)
    }

    /// Lower Cholesky factor of `coeff_cov + eps I` with
    /// `eps = 1e-8 trace / D`; zero when the covariance is zero.
    pub fn cov_factor(&self) -> Result<DMatrix<f64>> {
        let d = self.dim;
        let cov = DMatrix::from_row_slice(d, d, &self.coeff_cov);
        let trace = cov.trace();
        if trace == 0.0 {
            return Ok(DMatrix::zeros(d, d));
        }
        if !(trace > 0.0) {
            return Err(Error::NotPositiveSemiDefinite);
        }
        let reg = cov + DMatrix::identity(d, d) * (1e-8 * trace / d as f64);
        reg.cholesky().map(|c| c.l()).ok_or(Error::NotPositiveSemiDefinite)
    }

    /// Draw `k ~ N(coeff_mean, coeff_cov)`.
    pub fn sample_coeffs(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let l = self.cov_factor()?;
        let z = DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let k = l * z;
        Ok(self.coeff_mean.iter().zip(k.iter()).map(|(m, x)| m + x).collect())
    }

    /// Draw a dictionary-row sample.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let k = self.sample_coeffs(rng)?;
        self.reconstruct(&k)
    }

    /// Mixing weights `w` with `reconstruct(k) = sum_i w_i D_i` over the
    /// training rows the model was fit to. Directions with a zero singular
    /// value carry no weight.
    pub fn mixing_weights(&self, k: &[f64]) -> Result<Vec<f64>> {
        if k.len() != self.dim {
            return Err(Error::Dimension(format!("{} coefficients for D={}", k.len(), self.dim)));
        }
        let n = self.subjects;
        let scale = self.singular_values.first().copied().unwrap_or(0.0);
        let mut a = vec![0.0; n];
        for (j, &s) in self.singular_values.iter().enumerate() {
            if !(s > 1e-12 * scale) {
                continue;
            }
            let s2 = s * s;
            for (i, ai) in a.iter_mut().enumerate() {
                *ai += self.train_coeffs[i * self.dim + j] * k[j] / s2;
            }
        }
        let shift = (1.0 - a.iter().sum::<f64>()) / n as f64;
        Ok(a.into_iter().map(|x| x + shift).collect())
    }
}
