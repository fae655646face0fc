use rand::Rng;

use super::Patch;
use crate::error::{Error, Result};
use crate::field::sigmoid;

/// Negative-side slope of the leaky rectifier.
pub const LEAK: f64 = 0.2;
const H1: usize = 256;
const H2: usize = 128;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAK
    }
}

/// Flattened-patch critic: `input -> 256 -> 128 -> 1` with leaky rectifiers.
///
/// Parameters are stored as `A1 (256 x in), b1, A2 (128 x 256), b2, a3 (128), b3`,
/// each matrix row holding one unit's incoming weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    input: usize,
    params: Vec<f64>,
}

/// Gradient buffer with the discriminator's parameter layout.
pub type DiscGrads = Vec<f64>;

struct Forward {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    out: f64,
}

impl Discriminator {
    pub fn param_count(input: usize) -> usize {
        H1 * input + H1 + H2 * H1 + H2 + H2 + 1
    }

    /// Uniform `+-1/sqrt(fan_in)` initialization.
    pub fn new(input: usize, rng: &mut impl Rng) -> Result<Self> {
        if input == 0 {
            return Err(Error::InvalidArgument("discriminator input width must be positive".into()));
        }
        let mut d = Self::zeros(input);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, p: &mut [f64]| {
            let b = 1.0 / (fan_in as f64).sqrt();
            for x in &mut p[range] {
                *x = rng.random_range(-b..b);
            }
        };
        let [a1, b1, a2, b2, a3, b3] = d.ranges();
        fill(a1.start..b1.end, input, &mut d.params);
        fill(a2.start..b2.end, H1, &mut d.params);
        fill(a3.start..b3.end, H2, &mut d.params);
        Ok(d)
    }

    pub fn zeros(input: usize) -> Self {
        Self { input, params: vec![0.0; Self::param_count(input)] }
    }

    pub fn from_params(input: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(input) {
            return Err(Error::Dimension(format!("{} discriminator parameters for input {input}", params.len())));
        }
        Ok(Self { input, params })
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn ranges(&self) -> [std::ops::Range<usize>; 6] {
        let a1 = 0..H1 * self.input;
        let b1 = a1.end..a1.end + H1;
        let a2 = b1.end..b1.end + H2 * H1;
        let b2 = a2.end..a2.end + H2;
        let a3 = b2.end..b2.end + H2;
        let b3 = a3.end..a3.end + 1;
        [a1, b1, a2, b2, a3, b3]
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let [a1, b1, a2, b2, a3, b3] = self.ranges();
        let p = &self.params;
        let z1: Vec<f64> = (0..H1)
            .map(|i| {
                p[b1.start + i] + crate::field::dot(&p[a1.start + i * self.input..a1.start + (i + 1) * self.input], x)
            })
            .collect();
        let h1: Vec<f64> = z1.iter().map(|z| z * slope(*z)).collect();
        let z2: Vec<f64> = (0..H2)
            .map(|k| p[b2.start + k] + crate::field::dot(&p[a2.start + k * H1..a2.start + (k + 1) * H1], &h1))
            .collect();
        let h2: Vec<f64> = z2.iter().map(|z| z * slope(*z)).collect();
        let out = p[b3.start] + crate::field::dot(&p[a3], &h2);
        Forward { z1, h1, z2, h2, out }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::Dimension(format!("discriminator expects {} inputs, got {}", self.input, x.len())));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.forward(x).out)
    }

    /// Upstream vectors `u1 = s1 * (A2^T u2)` and `u2 = s2 * a3`.
    fn upstream(&self, f: &Forward) -> (Vec<f64>, Vec<f64>) {
        let [_, _, a2, _, a3, _] = self.ranges();
        let p = &self.params;
        let u2: Vec<f64> = (0..H2).map(|k| slope(f.z2[k]) * p[a3.start + k]).collect();
        let mut v1 = vec![0.0; H1];
        for k in 0..H2 {
            let row = &p[a2.start + k * H1..a2.start + (k + 1) * H1];
            for (v, w) in v1.iter_mut().zip(row) {
                *v += w * u2[k];
            }
        }
        let u1: Vec<f64> = v1.iter().zip(&f.z1).map(|(v, z)| v * slope(*z)).collect();
        (u1, u2)
    }

    fn input_grad_from(&self, u1: &[f64]) -> Vec<f64> {
        let a1 = &self.params[..H1 * self.input];
        let mut g = vec![0.0; self.input];
        for i in 0..H1 {
            if u1[i] == 0.0 {
                continue;
            }
            for (gj, w) in g.iter_mut().zip(&a1[i * self.input..(i + 1) * self.input]) {
                *gj += w * u1[i];
            }
        }
        g
    }

    /// `dD/dx`.
    pub fn input_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let f = self.forward(x);
        let (u1, _) = self.upstream(&f);
        Ok(self.input_grad_from(&u1))
    }

    /// Adds `scale * dD/dtheta` into `grads`.
    fn accumulate_output(&self, x: &[f64], f: &Forward, u1: &[f64], u2: &[f64], scale: f64, grads: &mut [f64]) {
        let [a1, b1, a2, b2, a3, b3] = self.ranges();
        grads[b3.start] += scale;
        for k in 0..H2 {
            grads[a3.start + k] += scale * f.h2[k];
            grads[b2.start + k] += scale * u2[k];
            let s = scale * u2[k];
            for (g, h) in grads[a2.start + k * H1..a2.start + (k + 1) * H1].iter_mut().zip(&f.h1) {
                *g += s * h;
            }
        }
        for i in 0..H1 {
            let s = scale * u1[i];
            grads[b1.start + i] += s;
            if s == 0.0 {
                continue;
            }
            for (g, xv) in grads[a1.start + i * self.input..a1.start + (i + 1) * self.input].iter_mut().zip(x) {
                *g += s * xv;
            }
        }
    }

    /// Adds `scale * d||dD/dx||^2 / dtheta` with the rectifier pattern held
    /// fixed. Returns `||dD/dx||^2`.
    fn accumulate_r1(&self, f: &Forward, u1: &[f64], u2: &[f64], scale: f64, grads: &mut [f64]) -> f64 {
        let [a1, _, a2, _, a3, _] = self.ranges();
        let g = self.input_grad_from(u1);
        let r1: f64 = g.iter().map(|v| v * v).sum();
        let p = &self.params;
        // dR/dA1[i, j] = 2 g_j u1_i
        for i in 0..H1 {
            let s = 2.0 * scale * u1[i];
            if s == 0.0 {
                continue;
            }
            for (gr, gj) in grads[a1.start + i * self.input..a1.start + (i + 1) * self.input].iter_mut().zip(&g) {
                *gr += s * gj;
            }
        }
        // dR/du1_i = 2 A1[i, :] . g, then through the frozen slope.
        let dv1: Vec<f64> = (0..H1)
            .map(|i| {
                2.0 * crate::field::dot(&p[a1.start + i * self.input..a1.start + (i + 1) * self.input], &g)
                    * slope(f.z1[i])
            })
            .collect();
        // v1 = A2^T u2: dR/dA2[k, i] = dv1_i u2_k, dR/du2_k = A2[k, :] . dv1
        for k in 0..H2 {
            let s = scale * u2[k];
            let row = a2.start + k * H1..a2.start + (k + 1) * H1;
            let du2 = crate::field::dot(&p[row.clone()], &dv1);
            for (gr, d) in grads[row].iter_mut().zip(&dv1) {
                *gr += s * d;
            }
            grads[a3.start + k] += scale * du2 * slope(f.z2[k]);
        }
        r1
    }
}

/// Losses and gradients of one real/fake pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GanLosses {
    pub d_real: f64,
    pub d_fake: f64,
    /// `softplus(-D(real)) + softplus(D(fake))`.
    pub adv: f64,
    /// `||dD/dx||^2` at the real patch.
    pub r1: f64,
    /// `adv + lambda_r1 * r1`.
    pub l_dis: f64,
    /// Non-saturating generator loss `softplus(-D(fake))`.
    pub l_gen: f64,
    /// `dL_dis / dtheta`.
    pub disc_grads: DiscGrads,
    /// `dL_gen / d fake pixels`, flattened like the patch.
    pub fake_grad: Vec<f64>,
}

pub fn gan_losses(disc: &Discriminator, real: &Patch, fake: &Patch, lambda_r1: f64) -> Result<GanLosses> {
    if real.kind != fake.kind || real.size != fake.size {
        return Err(Error::Dimension("real and fake patches differ in kind or size".into()));
    }
    let xr = real.flat();
    let xf = fake.flat();
    disc.check(&xr)?;
    let fr = disc.forward(&xr);
    let ff = disc.forward(&xf);
    let (u1r, u2r) = disc.upstream(&fr);
    let (u1f, u2f) = disc.upstream(&ff);
    let mut grads = vec![0.0; disc.params.len()];
    disc.accumulate_output(&xr, &fr, &u1r, &u2r, -sigmoid(-fr.out), &mut grads);
    disc.accumulate_output(&xf, &ff, &u1f, &u2f, sigmoid(ff.out), &mut grads);
    let r1 = if lambda_r1 > 0.0 {
        disc.accumulate_r1(&fr, &u1r, &u2r, lambda_r1, &mut grads)
    } else {
        disc.input_grad_from(&u1r).iter().map(|v| v * v).sum()
    };
    let adv = softplus(-fr.out) + softplus(ff.out);
    let gf = disc.input_grad_from(&u1f);
    let s = -sigmoid(-ff.out);
    Ok(GanLosses {
        d_real: fr.out,
        d_fake: ff.out,
        adv,
        r1,
        l_dis: adv + lambda_r1 * r1,
        l_gen: softplus(-ff.out),
        disc_grads: grads,
        fake_grad: gf.iter().map(|g| s * g).collect(),
    })
}
