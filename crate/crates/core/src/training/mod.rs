//! Synthetic scans, thin-shell supervision, the 3D losses, Adam and the
//! auto-decoder training loop.

mod adam;
mod config;
mod loss;
mod sample;
mod synth;
mod trainer;

pub use adam::{Adam, AdamParams};
pub use config::TrainConfig;
pub use loss::{loss_3d, loss_reg, Loss3d, LossGrads, LossWeights, Predictions};
pub use sample::{sample_points, sample_points_with, SamplePoint, ScanSampler};
pub use synth::{synth_scan, synth_scan_with, Scan, DEFAULT_AMPLITUDE};
pub(crate) use trainer::{normal_count, supervised_pass, SubjectCtx, CHUNK};
pub use trainer::{LossRecord, TrainState, Trainer};
