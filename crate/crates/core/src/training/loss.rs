use super::SamplePoint;
use crate::codebook::Dictionary;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_n: f64,
    pub lambda_sdf: f64,
    pub lambda_rgb: f64,
}

/// Decoder outputs for a run of points. `grad` covers a prefix of the
/// points (those that carry the normal term).
#[derive(Debug, Clone, Copy)]
pub struct Predictions<'a> {
    pub s: &'a [f64],
    pub grad: &'a [Vec3],
    pub c: &'a [[f64; 3]],
}

/// Loss parts, each already divided by its global point count so partial
/// sums over chunks add up.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Loss3d {
    pub sdf_abs: f64,
    pub normal: f64,
    pub rgb: f64,
}

impl Loss3d {
    pub fn l_sdf(&self, w: &LossWeights) -> f64 {
        self.sdf_abs + w.lambda_n * self.normal
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        w.lambda_sdf * self.l_sdf(w) + w.lambda_rgb * self.rgb
    }

    pub fn add(&mut self, o: &Loss3d) {
        self.sdf_abs += o.sdf_abs;
        self.normal += o.normal;
        self.rgb += o.rgb;
    }
}

/// Gradients of the weighted total with respect to the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub ds: Vec<f64>,
    pub dgrad: Vec<Vec3>,
    /// Three per point.
    pub dc: Vec<f64>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `lambda_sdf (mean|s_gt - s| + lambda_n mean|1 - n . grad s|) + lambda_rgb mean ||c_gt - c||_1`
/// over chunks of a batch with `points` points, `normal_points` of which
/// carry the normal term. The subgradient of `|.|` at 0 is 0.
pub fn loss_3d(
    pred: &Predictions,
    gts: &[SamplePoint],
    w: &LossWeights,
    points: usize,
    normal_points: usize,
) -> Result<(Loss3d, LossGrads)> {
    let n = gts.len();
    if pred.s.len() != n || pred.c.len() != n || pred.grad.len() > n {
        return Err(Error::Dimension(format!(
            "{} points but {} sdf, {} color and {} gradient predictions",
            n,
            pred.s.len(),
            pred.c.len(),
            pred.grad.len()
        )));
    }
    if points < n || normal_points < pred.grad.len() {
        return Err(Error::InvalidArgument("normalizers smaller than the chunk".into()));
    }
    let inv_p = if points > 0 { 1.0 / points as f64 } else { 0.0 };
    let inv_n = if normal_points > 0 { 1.0 / normal_points as f64 } else { 0.0 };
    let mut loss = Loss3d::default();
    let mut g = LossGrads { ds: vec![0.0; n], dgrad: vec![Vec3::zeros(); pred.grad.len()], dc: vec![0.0; 3 * n] };
    for i in 0..n {
        let e = pred.s[i] - gts[i].s;
        loss.sdf_abs += e.abs() * inv_p;
        g.ds[i] = w.lambda_sdf * sign(e) * inv_p;
        for k in 0..3 {
            let ec = pred.c[i][k] - gts[i].c[k];
            loss.rgb += ec.abs() * inv_p;
            g.dc[3 * i + k] = w.lambda_rgb * sign(ec) * inv_p;
        }
    }
    for (i, gr) in pred.grad.iter().enumerate() {
        let r = 1.0 - gts[i].n.dot(gr);
        loss.normal += r.abs() * inv_n;
        g.dgrad[i] = gts[i].n * (-w.lambda_sdf * w.lambda_n * sign(r) * inv_n);
    }
    Ok((loss, g))
}

/// `||D_s||_F + ||D_c||_F`.
pub fn loss_reg(shape: &Dictionary, color: &Dictionary) -> f64 {
    shape.norm() + color.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::FeatureKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights() -> LossWeights {
        LossWeights { lambda_n: 1e-2, lambda_sdf: 1e3, lambda_rgb: 1e2 }
    }

    fn gts(n: usize) -> Vec<SamplePoint> {
        (0..n)
            .map(|i| SamplePoint {
                x: Vec3::zeros(),
                s: 0.01 * i as f64,
                c: [0.2, 0.4, 0.6],
                n: Vec3::new(0.0, 0.6, 0.8),
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_give_zero() {
        let g = gts(4);
        let s: Vec<f64> = g.iter().map(|p| p.s).collect();
        let c: Vec<[f64; 3]> = g.iter().map(|p| p.c).collect();
        let grad: Vec<Vec3> = g.iter().map(|p| p.n).collect();
        let (l, gr) = loss_3d(&Predictions { s: &s, grad: &grad, c: &c }, &g, &weights(), 4, 4).unwrap();
        assert!(l.total(&weights()).abs() < 1e-15);
        assert!(gr.ds.iter().chain(&gr.dc).all(|x| *x == 0.0));
    }

    #[test]
    fn constant_sdf_offset_closed_form() {
        let g = gts(5);
        let s: Vec<f64> = g.iter().map(|p| p.s + 0.1).collect();
        let c: Vec<[f64; 3]> = g.iter().map(|p| p.c).collect();
        let grad: Vec<Vec3> = g.iter().map(|p| p.n).collect();
        let (l, _) = loss_3d(&Predictions { s: &s, grad: &grad, c: &c }, &g, &weights(), 5, 5).unwrap();
        assert!((l.total(&weights()) - 1e3 * 0.1).abs() < 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = weights();
        let g = gts(6);
        let s: Vec<f64> = (0..6).map(|_| rng.random_range(-0.1..0.1)).collect();
        let c: Vec<[f64; 3]> = (0..6).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let grad: Vec<Vec3> = (0..3).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let f = |s: &[f64], grad: &[Vec3], c: &[[f64; 3]]| {
            loss_3d(&Predictions { s, grad, c }, &g, &w, 6, 3).unwrap().0.total(&w)
        };
        let (_, gr) = loss_3d(&Predictions { s: &s, grad: &grad, c: &c }, &g, &w, 6, 3).unwrap();
        let h = 1e-7;
        for i in 0..6 {
            let (mut a, mut b) = (s.clone(), s.clone());
            a[i] += h;
            b[i] -= h;
            let num = (f(&a, &grad, &c) - f(&b, &grad, &c)) / (2.0 * h);
            assert!((num - gr.ds[i]).abs() < 1e-6 * num.abs().max(1.0));
        }
        for i in 0..3 {
            let (mut a, mut b) = (grad.clone(), grad.clone());
            a[i].y += h;
            b[i].y -= h;
            let num = (f(&s, &a, &c) - f(&s, &b, &c)) / (2.0 * h);
            assert!((num - gr.dgrad[i].y).abs() < 1e-6 * num.abs().max(1.0));
        }
        let (mut a, mut b) = (c.clone(), c.clone());
        a[2][1] += h;
        b[2][1] -= h;
        let num = (f(&s, &grad, &a) - f(&s, &grad, &b)) / (2.0 * h);
        assert!((num - gr.dc[7]).abs() < 1e-6 * num.abs().max(1.0));
    }

    #[test]
    fn regularizer_matches_direct_norm() {
        let z = Dictionary::new(FeatureKind::Geometry, 1, 2, 2, vec![0.0; 4]).unwrap();
        let zc = Dictionary::new(FeatureKind::Texture, 1, 2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(loss_reg(&z, &zc), 0.0);
        let one = Dictionary::new(FeatureKind::Geometry, 1, 1, 1, vec![3.0]).unwrap();
        let zero = Dictionary::new(FeatureKind::Texture, 1, 1, 1, vec![0.0]).unwrap();
        assert_eq!(loss_reg(&one, &zero), 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e2: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = Dictionary::new(FeatureKind::Geometry, 3, 5, 4, e.clone()).unwrap();
        let b = Dictionary::new(FeatureKind::Texture, 3, 5, 4, e2.clone()).unwrap();
        let direct = |v: &[f64]| {
            let mut s = 0.0;
            for x in v {
                s += x * x;
            }
            s.sqrt()
        };
        assert!((loss_reg(&a, &b) - (direct(&e) + direct(&e2))).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = gts(2);
        assert!(loss_3d(&Predictions { s: &[0.0], grad: &[], c: &[[0.0; 3]] }, &g, &weights(), 2, 0).is_err());
    }
}
