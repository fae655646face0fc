use rand::Rng;

use crate::error::{Error, Result};

/// Output nonlinearity of a decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    Sigmoid,
}

/// Fully connected rectifier network. All parameters live in one flat
/// vector; each layer stores its weight transposed (`inputs x outputs`,
/// row-major) followed by its bias.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    head: Head,
    params: Vec<f64>,
    version: u64,
}

/// Equal when shape and weights match; the tape version is bookkeeping.
impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.head == other.head && self.params == other.params
    }
}

/// Activations recorded by one batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    rows: usize,
    input: Vec<f64>,
    /// Post-activation output of each layer; the last entry is the network
    /// output after the head.
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

impl Mlp {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases.
    pub fn new(dims: &[usize], head: Head, rng: &mut impl Rng) -> Result<Self> {
        let mut mlp = Self::zeros(dims, head)?;
        for l in 0..dims.len() - 1 {
            let bound = 1.0 / (dims[l] as f64).sqrt();
            let (w, b) = mlp.layer_range(l);
            for p in &mut mlp.params[w.start..b.end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn zeros(dims: &[usize], head: Head) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer widths {dims:?}")));
        }
        let count = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { dims: dims.to_vec(), head, params: vec![0.0; count], version: 0 })
    }

    pub fn from_params(dims: &[usize], head: Head, params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(dims, head)?;
        if params.len() != mlp.params.len() {
            return Err(Error::Dimension(format!(
                "{} parameters for layer widths {dims:?} (expected {})",
                params.len(),
                mlp.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite);
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn output_width(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Parameter index ranges of layer `l`'s transposed weight and bias.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for i in 0..l {
            off += self.dims[i] * self.dims[i + 1] + self.dims[i + 1];
        }
        let w = off..off + self.dims[l] * self.dims[l + 1];
        let b = w.end..w.end + self.dims[l + 1];
        (w, b)
    }

    /// Weight from input `k` to output `j` of layer `l`.
    pub fn weight(&self, l: usize, k: usize, j: usize) -> f64 {
        let (w, _) = self.layer_range(l);
        self.params[w.start + k * self.dims[l + 1] + j]
    }

    pub fn set_weight(&mut self, l: usize, k: usize, j: usize, value: f64) {
        let (w, _) = self.layer_range(l);
        let out = self.dims[l + 1];
        self.params_mut()[w.start + k * out + j] = value;
    }

    pub fn set_bias(&mut self, l: usize, j: usize, value: f64) {
        let (_, b) = self.layer_range(l);
        self.params_mut()[b.start + j] = value;
    }

    /// Batched forward pass over `rows` inputs laid out row-major.
    pub fn forward(&self, input: &[f64], rows: usize) -> Result<Tape> {
        let inp = self.input_width();
        if input.len() != rows * inp {
            return Err(Error::Dimension(format!("{} input values for {rows} rows of width {inp}", input.len())));
        }
        let layers = self.layer_count();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers);
        for l in 0..layers {
            let x = if l == 0 { input } else { &acts[l - 1] };
            let y = self.affine(l, x, rows);
            acts.push(y);
            let y = acts.last_mut().unwrap();
            if l + 1 < layers {
                for v in y.iter_mut() {
                    *v = v.max(0.0);
                }
            } else if self.head == Head::Sigmoid {
                for v in y.iter_mut() {
                    *v = sigmoid(*v);
                }
            }
        }
        Ok(Tape { version: self.version, rows, input: input.to_vec(), acts })
    }

    /// `y = b + sum_k x_k W_k`, accumulated in ascending `k`. Rows are
    /// processed in blocks that share weight loads.
    fn affine(&self, l: usize, x: &[f64], rows: usize) -> Vec<f64> {
        let (inp, out) = (self.dims[l], self.dims[l + 1]);
        let (wr, br) = self.layer_range(l);
        let wt = &self.params[wr];
        let bias = &self.params[br];
        let mut y = vec![0.0; rows * out];
        const BLOCK: usize = 4;
        let mut r0 = 0;
        while r0 < rows {
            let nb = BLOCK.min(rows - r0);
            for r in 0..nb {
                y[(r0 + r) * out..(r0 + r + 1) * out].copy_from_slice(bias);
            }
            let block = &mut y[r0 * out..(r0 + nb) * out];
            for k in 0..inp {
                let w = &wt[k * out..(k + 1) * out];
                for r in 0..nb {
                    let xv = x[(r0 + r) * inp + k];
                    if xv == 0.0 {
                        continue;
                    }
                    let acc = &mut block[r * out..(r + 1) * out];
                    for (a, wv) in acc.iter_mut().zip(w) {
                        *a += xv * wv;
                    }
                }
            }
            r0 += nb;
        }
        y
    }

    /// Reverse pass. Adds parameter gradients into `grad_params` and, if
    /// given, writes input gradients into `grad_input` (`rows x inputs`).
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) -> Result<()> {
        if tape.version != self.version {
            return Err(Error::StaleTape { recorded: tape.version, current: self.version });
        }
        let rows = tape.rows;
        let out_w = self.output_width();
        if grad_out.len() != rows * out_w {
            return Err(Error::Dimension(format!("{} output gradients for {rows} rows", grad_out.len())));
        }
        if grad_params.len() != self.params.len() {
            return Err(Error::Dimension("parameter gradient buffer has the wrong length".into()));
        }
        let layers = self.layer_count();
        let mut delta: Vec<f64> = grad_out.to_vec();
        if self.head == Head::Sigmoid {
            for (d, y) in delta.iter_mut().zip(tape.output()) {
                *d *= y * (1.0 - y);
            }
        }
        let mut grad_input = grad_input;
        for l in (0..layers).rev() {
            let (inp, out) = (self.dims[l], self.dims[l + 1]);
            let x: &[f64] = if l == 0 { &tape.input } else { &tape.acts[l - 1] };
            let (wr, br) = self.layer_range(l);
            {
                let (gw, gb) = grad_params[wr.start..br.end].split_at_mut(inp * out);
                for r in 0..rows {
                    let d = &delta[r * out..(r + 1) * out];
                    if d.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for (g, dv) in gb.iter_mut().zip(d) {
                        *g += dv;
                    }
                    for k in 0..inp {
                        let xv = x[r * inp + k];
                        if xv == 0.0 {
                            continue;
                        }
                        for (g, dv) in gw[k * out..(k + 1) * out].iter_mut().zip(d) {
                            *g += xv * dv;
                        }
                    }
                }
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            let wt = &self.params[wr];
            let mut prev = vec![0.0; rows * inp];
            for r in 0..rows {
                let d = &delta[r * out..(r + 1) * out];
                if d.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for k in 0..inp {
                    // Below the first layer only rectified-active units matter.
                    if l > 0 && x[r * inp + k] <= 0.0 {
                        continue;
                    }
                    prev[r * inp + k] = dot(&wt[k * out..(k + 1) * out], d);
                }
            }
            if l == 0 {
                if let Some(gi) = grad_input.take() {
                    if gi.len() != rows * inp {
                        return Err(Error::Dimension("input gradient buffer has the wrong length".into()));
                    }
                    gi.copy_from_slice(&prev);
                }
            } else {
                delta = prev;
            }
        }
        Ok(())
    }

    /// Forward without keeping a tape.
    pub fn eval(&self, input: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut tape = self.forward(input, rows)?;
        Ok(tape.acts.pop().unwrap())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product with eight fixed partial sums, combined in a fixed order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for lane in 0..8 {
            acc[lane] += a[c * 8 + lane] * b[c * 8 + lane];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straightforward re-implementation used as an oracle.
    fn naive_forward(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let layers = mlp.layer_count();
        for l in 0..layers {
            let (inp, out) = (mlp.dims()[l], mlp.dims()[l + 1]);
            let (_, br) = mlp.layer_range(l);
            let mut y = Vec::with_capacity(out);
            for j in 0..out {
                let mut acc = mlp.params()[br.start + j];
                for (k, hk) in h.iter().enumerate().take(inp) {
                    acc += hk * mlp.weight(l, k, j);
                }
                y.push(if l + 1 < layers {
                    acc.max(0.0)
                } else if mlp.head() == Head::Sigmoid {
                    if acc >= 0.0 {
                        1.0 / (1.0 + (-acc).exp())
                    } else {
                        acc.exp() / (1.0 + acc.exp())
                    }
                } else {
                    acc
                });
            }
            h = y;
        }
        h
    }

    fn random_input(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_return_output_bias() {
        let mut m = Mlp::zeros(&[5, 8, 8, 8, 1], Head::Linear).unwrap();
        m.set_bias(3, 0, 0.75);
        let y = m.eval(&[0.3, -1.0, 2.0, 0.1, 9.0], 1).unwrap();
        assert_eq!(y, vec![0.75]);
    }

    #[test]
    fn hand_built_relu() {
        // s = max(0, d) with d the third input.
        let mut m = Mlp::zeros(&[3, 1, 1], Head::Linear).unwrap();
        m.set_weight(0, 2, 0, 1.0);
        m.set_weight(1, 0, 0, 1.0);
        for (d, expect) in [(-1.0, 0.0), (0.0, 0.0), (2.0, 2.0)] {
            assert_eq!(m.eval(&[0.4, 0.2, d], 1).unwrap()[0], expect);
        }
    }

    #[test]
    fn forward_matches_naive_oracle_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for head in [Head::Linear, Head::Sigmoid] {
            let m = Mlp::new(&[44, 128, 128, 128, 3], head, &mut rng).unwrap();
            let rows = 13;
            let x = random_input(&mut rng, rows * 44);
            let y = m.eval(&x, rows).unwrap();
            for r in 0..rows {
                let o = naive_forward(&m, &x[r * 44..(r + 1) * 44]);
                for (a, b) in y[r * 3..(r + 1) * 3].iter().zip(&o) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn color_head_cases() {
        let mut m = Mlp::zeros(&[4, 6, 3], Head::Sigmoid).unwrap();
        assert_eq!(m.eval(&[1.0, 2.0, 3.0, 4.0], 1).unwrap(), vec![0.5; 3]);
        for j in 0..3 {
            m.set_bias(1, j, 50.0);
        }
        for c in m.eval(&[1.0, 2.0, 3.0, 4.0], 1).unwrap() {
            assert!((1.0 - c).abs() < 1e-9 && c < 1.0 || c == 1.0);
        }
    }

    #[test]
    fn linear_layer_gradients() {
        let mut m = Mlp::zeros(&[3, 1], Head::Linear).unwrap();
        let w = [0.5, -2.0, 3.0];
        for (k, wk) in w.iter().enumerate() {
            m.set_weight(0, k, 0, *wk);
        }
        let x = [1.5, 0.25, -4.0];
        let tape = m.forward(&x, 1).unwrap();
        let mut gp = vec![0.0; m.params().len()];
        let mut gx = vec![0.0; 3];
        m.backward(&tape, &[1.0], &mut gp, Some(&mut gx)).unwrap();
        assert_eq!(&gp[..3], &x);
        assert_eq!(gp[3], 1.0);
        assert_eq!(gx, w);
    }

    #[test]
    fn zero_output_gradient_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mlp::new(&[10, 16, 16, 16, 1], Head::Linear, &mut rng).unwrap();
        let x = random_input(&mut rng, 30);
        let tape = m.forward(&x, 3).unwrap();
        let mut gp = vec![0.0; m.params().len()];
        let mut gx = vec![1.0; 30];
        m.backward(&tape, &[0.0; 3], &mut gp, Some(&mut gx)).unwrap();
        assert!(gp.iter().chain(&gx).all(|g| *g == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Mlp::new(&[2, 4, 1], Head::Linear, &mut rng).unwrap();
        let tape = m.forward(&[0.1, 0.2], 1).unwrap();
        m.params_mut()[0] += 1.0;
        let mut gp = vec![0.0; m.params().len()];
        assert!(matches!(m.backward(&tape, &[1.0], &mut gp, None), Err(Error::StaleTape { .. })));
    }

    /// Central finite differences of `sum(w . y)` at h = 1e-4.
    fn check_gradients(head: Head, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [6, 12, 12, 12, if head == Head::Linear { 1 } else { 3 }];
        let m = Mlp::new(&dims, head, &mut rng).unwrap();
        let rows = 2;
        let x = random_input(&mut rng, rows * 6);
        let out_w = dims[4];
        let gout = random_input(&mut rng, rows * out_w);
        let objective =
            |m: &Mlp, x: &[f64]| -> f64 { m.eval(x, rows).unwrap().iter().zip(&gout).map(|(y, g)| y * g).sum() };
        let tape = m.forward(&x, rows).unwrap();
        let mut gp = vec![0.0; m.params().len()];
        let mut gx = vec![0.0; x.len()];
        m.backward(&tape, &gout, &mut gp, Some(&mut gx)).unwrap();
        let h = 1e-4;
        let close = |a: f64, n: f64| (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-3);
        for p in 0..m.params().len() {
            let mut plus = m.clone();
            plus.params_mut()[p] += h;
            let mut minus = m.clone();
            minus.params_mut()[p] -= h;
            let num = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
            assert!(close(gp[p], num), "param {p}: {} vs {num}", gp[p]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let num = (objective(&m, &xp) - objective(&m, &xm)) / (2.0 * h);
            assert!(close(gx[i], num), "input {i}: {} vs {num}", gx[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            check_gradients(Head::Linear, seed);
            check_gradients(Head::Sigmoid, 100 + seed);
        }
    }

    #[test]
    fn dot_matches_sequential_sum_closely() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_input(&mut rng, 37);
        let b = random_input(&mut rng, 37);
        let s: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - s).abs() < 1e-12);
    }
}
