use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update. Entries with a zero gradient and a zero
    /// first moment are left bit-identical.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], hp: &AdamParams) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam state of {} for {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - hp.beta1.powi(self.t as i32);
        let c2 = 1.0 - hp.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * g;
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * g * g;
            if self.m[i] == 0.0 {
                continue;
            }
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= hp.lr * mh / (vh.sqrt() + hp.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params_and_decays_v() {
        let hp = AdamParams::default();
        let mut a = Adam::new(2);
        a.v = vec![1.0, 4.0];
        let mut p = vec![0.3, -0.7];
        a.step(&mut p, &[0.0, 0.0], &hp).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
        assert_eq!(a.v, vec![0.99, 3.96]);
    }

    #[test]
    fn hand_computed_two_step_trace() {
        // g = 1 each step, beta1 = 0, beta2 = 0.99.
        // t=1: v = 0.01, vh = 0.01/0.01 = 1, step = lr * 1 / (1 + eps).
        // t=2: v = 0.0199, vh = 0.0199/0.0199 = 1, same step again.
        let hp = AdamParams::default();
        let mut a = Adam::new(1);
        let mut p = vec![1.0];
        a.step(&mut p, &[1.0], &hp).unwrap();
        let s = 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - (1.0 - s)).abs() < 1e-15);
        a.step(&mut p, &[1.0], &hp).unwrap();
        assert!((p[0] - (1.0 - 2.0 * s)).abs() < 1e-15);
        assert!((a.v[0] - 0.0199).abs() < 1e-15);
        assert_eq!(a.m[0], 1.0);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let hp = AdamParams { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let run = || {
            let mut a = Adam::new(3);
            let mut p = vec![1.0, 2.0, 3.0];
            for _ in 0..5 {
                a.step(&mut p, &[0.1, -0.2, 0.3], &hp).unwrap();
            }
            (a, p)
        };
        assert_eq!(run(), run());
        assert!(Adam::new(2).step(&mut [0.0; 3], &[0.0; 3], &hp).is_err());
    }
}
