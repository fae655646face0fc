//! Positional encoding, the SDF and color decoders, and the local query
//! pipeline from a world point to decoded values.

mod mlp;
mod query;

use rand::Rng;

use crate::error::Result;

pub(crate) use mlp::{dot, sigmoid};
pub use mlp::{Head, Mlp, Tape};
pub use query::{
    axis_offsets, eval_color, eval_sdf, query_field, spatial_gradient, DecoderGrads, FieldBatch, FieldSample,
};

/// Frequency bands per local coordinate.
pub const BANDS: usize = 5;
/// Encoded width of one local query: raw `(u, v, d)`, sin/cos bands and the
/// face-frame direction.
pub const ENCODED_WIDTH: usize = 3 + 3 * 2 * BANDS + 3;
pub const HIDDEN_WIDTH: usize = 128;

/// Encode local coordinates as
/// `[u, v, d | per coordinate, per band: sin, cos | dir]`.
pub fn encode(uvd: [f64; 3], dir: [f64; 3]) -> [f64; ENCODED_WIDTH] {
    let mut out = [0.0; ENCODED_WIDTH];
    encode_into(uvd, dir, &mut out);
    out
}

pub(crate) fn encode_into(uvd: [f64; 3], dir: [f64; 3], out: &mut [f64]) {
    out[..3].copy_from_slice(&uvd);
    let mut i = 3;
    for x in uvd {
        let mut freq = std::f64::consts::PI;
        for _ in 0..BANDS {
            let (s, c) = (freq * x).sin_cos();
            out[i] = s;
            out[i + 1] = c;
            i += 2;
            freq *= 2.0;
        }
    }
    out[i..i + 3].copy_from_slice(&dir);
}

/// The shared SDF decoder and color decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoders {
    pub sdf: Mlp,
    pub color: Mlp,
    feature_dim: usize,
}

impl Decoders {
    /// Four affine layers, `128` wide, over `[features | encoding]`.
    pub fn new(feature_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let sdf = Mlp::new(&Self::dims(feature_dim, 1), Head::Linear, rng)?;
        let color = Mlp::new(&Self::dims(feature_dim, 3), Head::Sigmoid, rng)?;
        Ok(Self { sdf, color, feature_dim })
    }

    pub fn dims(feature_dim: usize, outputs: usize) -> [usize; 5] {
        let w = feature_dim + ENCODED_WIDTH;
        [w, HIDDEN_WIDTH, HIDDEN_WIDTH, HIDDEN_WIDTH, outputs]
    }

    pub fn from_parts(feature_dim: usize, sdf: Mlp, color: Mlp) -> Result<Self> {
        let w = feature_dim + ENCODED_WIDTH;
        if sdf.input_width() != w || color.input_width() != w || sdf.output_width() != 1 || color.output_width() != 3 {
            return Err(crate::Error::Dimension(format!(
                "decoder widths do not match feature dimension {feature_dim}"
            )));
        }
        Ok(Self { sdf, color, feature_dim })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn input_width(&self) -> usize {
        self.feature_dim + ENCODED_WIDTH
    }

    /// SHA-256 over both parameter vectors.
    pub fn weights_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in self.sdf.params().iter().chain(self.color.params()) {
            h.update(p.to_le_bytes());
        }
        h.finalize().into()
    }
}
