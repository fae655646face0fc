use serde::{Deserialize, Serialize};

use super::{AdamParams, LossWeights};
use crate::error::{Error, Result};

/// Hyperparameters of the auto-decoder and adversarial training. `Default`
/// is the full-scale setting; [`TrainConfig::desk`] shrinks it to run on a
/// laptop in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_n: f64,
    pub lambda_sdf: f64,
    pub lambda_rgb: f64,
    pub lambda_reg: f64,
    pub lambda_r1: f64,
    /// Weight of the generator term `-L_adv`.
    pub lambda_adv: f64,
    /// Query points per iteration, summed over the subject batch.
    pub points_per_iter: usize,
    pub batch_subjects: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub iterations: usize,
    pub seed: u64,
    pub feature_dim: usize,
    /// Shell standard deviations as fractions of the scan's bbox diagonal.
    pub shell_near: f64,
    pub shell_far: f64,
    /// Fraction of the query points drawn uniformly in the grown scan
    /// bounds instead of the shell.
    pub space_fraction: f64,
    /// Central-difference step as a fraction of the bbox diagonal.
    pub fd_eps: f64,
    /// Fraction of the query points that also carry the normal term.
    pub normal_fraction: f64,
    pub checkpoint_every: usize,
    pub adversarial: bool,
    /// Run an adversarial step every this many iterations.
    pub adv_every: usize,
    pub pca_dim_geometry: usize,
    pub pca_dim_texture: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub ray_steps: usize,
    pub disc_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_n: 1e-2,
            lambda_sdf: 1e3,
            lambda_rgb: 1e2,
            lambda_reg: 1e-3,
            lambda_r1: 10.0,
            lambda_adv: 1.0,
            points_per_iter: 20480,
            batch_subjects: 8,
            lr: 1e-3,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            iterations: 100_000,
            seed: 0,
            feature_dim: 32,
            shell_near: 0.005,
            shell_far: 0.025,
            space_fraction: 0.1,
            fd_eps: 1e-3,
            normal_fraction: 1.0,
            checkpoint_every: 100,
            adversarial: true,
            adv_every: 1,
            pca_dim_geometry: 16,
            pca_dim_texture: 8,
            image_size: 1024,
            patch_size: 128,
            ray_steps: 128,
            disc_lr: 1e-3,
        }
    }
}

impl TrainConfig {
    /// Full-scale preset.
    pub fn paper() -> Self {
        Self::default()
    }

    /// Desk-scale preset: small features, few points, no adversarial branch.
    pub fn desk() -> Self {
        Self {
            points_per_iter: 2048,
            batch_subjects: 2,
            iterations: 600,
            feature_dim: 8,
            normal_fraction: 0.25,
            adversarial: false,
            adv_every: 10,
            pca_dim_geometry: 4,
            pca_dim_texture: 2,
            image_size: 256,
            patch_size: 32,
            ray_steps: 48,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected `desk` or `paper`)"))),
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda_n: self.lambda_n, lambda_sdf: self.lambda_sdf, lambda_rgb: self.lambda_rgb }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_n", self.lambda_n),
            ("lambda_sdf", self.lambda_sdf),
            ("lambda_rgb", self.lambda_rgb),
            ("lambda_reg", self.lambda_reg),
            ("lambda_r1", self.lambda_r1),
            ("lambda_adv", self.lambda_adv),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        let counts = [
            ("points_per_iter", self.points_per_iter),
            ("batch_subjects", self.batch_subjects),
            ("feature_dim", self.feature_dim),
            ("checkpoint_every", self.checkpoint_every),
            ("adv_every", self.adv_every),
            ("pca_dim_geometry", self.pca_dim_geometry),
            ("pca_dim_texture", self.pca_dim_texture),
            ("patch_size", self.patch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.ray_steps < 2 {
            return Err(Error::Config("ray_steps must be at least 2".into()));
        }
        if self.patch_size > self.image_size {
            return Err(Error::Config("patch_size exceeds image_size".into()));
        }
        let positive =
            [("lr", self.lr), ("adam_eps", self.adam_eps), ("fd_eps", self.fd_eps), ("disc_lr", self.disc_lr)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("shell_near", self.shell_near), ("shell_far", self.shell_far)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("normal_fraction", self.normal_fraction),
            ("space_fraction", self.space_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(Error::Config("adam betas must be below 1".into()));
        }
        Ok(())
    }
}
