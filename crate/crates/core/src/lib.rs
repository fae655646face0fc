//! Editable avatars from mesh-anchored feature codebooks and local neural
//! fields.
//!
//! Each template vertex stores a geometry and a texture feature vector. A
//! query point is expressed relative to its nearest template triangle, the
//! three corner features are blended barycentrically and two small decoders
//! map the result to a signed distance and a color.

pub mod adversarial;
pub mod avatar;
mod binio;
pub mod cli;
pub mod codebook;
pub mod error;
pub mod field;
pub mod geometry;
pub mod mesher;
pub mod metrics;
pub mod training;

pub use error::{Error, Result};
