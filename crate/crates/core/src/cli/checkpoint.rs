//! Binary training checkpoints.
//!
//! Layout, all little-endian: magic `CBAV`, `u32` version, 32-byte template
//! hash, `F`, `M`, `N` as `u64`, the training config as length-prefixed TOML,
//! both dictionaries, both decoders, the four Adam states, an optional
//! discriminator block, the generator state and the iteration counter.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{AdvState, Discriminator};
use crate::binio::{hex, Reader, Writer};
use crate::codebook::{Dictionary, FeatureKind};
use crate::error::{Error, Result};
use crate::field::{Decoders, Head, Mlp};
use crate::geometry::TemplateMesh;
use crate::training::{Adam, TrainConfig, TrainState};

const MAGIC: &[u8; 4] = b"CBAV";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub template_hash: [u8; 32],
    /// The config the run was started with, kept verbatim.
    pub config_toml: String,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(template: &TemplateMesh, config: &TrainConfig, state: TrainState) -> Result<Self> {
        let config_toml = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { template_hash: template.content_hash(), config_toml, state })
    }

    pub fn config(&self) -> Result<TrainConfig> {
        let c: TrainConfig = toml::from_str(&self.config_toml).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn check_template(&self, template: &TemplateMesh) -> Result<()> {
        let found = template.content_hash();
        if found != self.template_hash {
            return Err(Error::TemplateMismatch { expected: hex(&self.template_hash), found: hex(&found) });
        }
        Ok(())
    }

    pub fn subject_count(&self) -> usize {
        self.state.shape.subject_count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let st = &self.state;
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.bytes(&self.template_hash);
        w.len(st.shape.feature_dim());
        w.len(st.shape.vertex_count());
        w.len(st.shape.subject_count());
        w.len(self.config_toml.len());
        w.bytes(self.config_toml.as_bytes());
        w.f64s(st.shape.entries());
        w.f64s(st.color.entries());
        w.vec(st.decoders.sdf.params());
        w.vec(st.decoders.color.params());
        for a in [&st.adam_shape, &st.adam_color, &st.adam_sdf, &st.adam_rgb] {
            write_adam(&mut w, a);
        }
        match &st.adv {
            None => w.u8(0),
            Some(adv) => {
                w.u8(1);
                w.len(adv.disc_color.input_width());
                w.vec(adv.disc_color.params());
                w.vec(adv.disc_normal.params());
                write_adam(&mut w, &adv.adam_color);
                write_adam(&mut w, &adv.adam_normal);
            }
        }
        w.bytes(&st.rng.get_seed());
        w.u64(st.rng.get_stream());
        w.bytes(&st.rng.get_word_pos().to_le_bytes());
        w.u64(st.iteration);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.bytes(4)? != MAGIC {
            return Err(r.err("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let template_hash = r.array()?;
        let f = r.u64()? as usize;
        let m = r.u64()? as usize;
        let n = r.u64()? as usize;
        let clen = r.len(1)?;
        let config_toml = String::from_utf8(r.bytes(clen)?.to_vec()).map_err(|_| r.err("config is not UTF-8"))?;
        let size = n.checked_mul(m).and_then(|x| x.checked_mul(f)).ok_or_else(|| r.err("dictionary size overflow"))?;
        let shape = Dictionary::new(FeatureKind::Geometry, n, m, f, r.f64s(size)?)?;
        let color = Dictionary::new(FeatureKind::Texture, n, m, f, r.f64s(size)?)?;
        let sdf = read_mlp(&mut r, &Decoders::dims(f, 1), Head::Linear)?;
        let rgb = read_mlp(&mut r, &Decoders::dims(f, 3), Head::Sigmoid)?;
        let decoders = Decoders::from_parts(f, sdf, rgb)?;
        let adam_shape = read_adam(&mut r, size)?;
        let adam_color = read_adam(&mut r, size)?;
        let adam_sdf = read_adam(&mut r, decoders.sdf.params().len())?;
        let adam_rgb = read_adam(&mut r, decoders.color.params().len())?;
        let adv = match r.u8()? {
            0 => None,
            1 => {
                let input = r.u64()? as usize;
                let disc_color = Discriminator::from_params(input, r.vec()?)?;
                let disc_normal = Discriminator::from_params(input, r.vec()?)?;
                let len = disc_color.params().len();
                Some(AdvState {
                    adam_color: read_adam(&mut r, len)?,
                    adam_normal: read_adam(&mut r, len)?,
                    disc_color,
                    disc_normal,
                })
            }
            t => return Err(r.err(format!("bad discriminator flag {t}"))),
        };
        let mut rng = ChaCha8Rng::from_seed(r.array()?);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(u128::from_le_bytes(r.array()?));
        let iteration = r.u64()?;
        r.finish()?;
        let state =
            TrainState { shape, color, decoders, adam_shape, adam_color, adam_sdf, adam_rgb, adv, rng, iteration };
        Ok(Self { template_hash, config_toml, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::at_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(Error::at_path(path))?)
    }

    /// Load and verify the template hash.
    pub fn load_for(path: &Path, template: &TemplateMesh) -> Result<Self> {
        let c = Self::load(path)?;
        c.check_template(template)?;
        Ok(c)
    }
}

fn write_adam(w: &mut Writer, a: &Adam) {
    w.u64(a.t);
    w.vec(&a.m);
    w.vec(&a.v);
}

fn read_adam(r: &mut Reader, len: usize) -> Result<Adam> {
    let t = r.u64()?;
    let m = r.vec()?;
    let v = r.vec()?;
    if m.len() != len || v.len() != len {
        return Err(r.err(format!("optimizer state has {} / {} entries, expected {len}", m.len(), v.len())));
    }
    Ok(Adam { m, v, t })
}

fn read_mlp(r: &mut Reader, dims: &[usize], head: Head) -> Result<Mlp> {
    let params = r.vec()?;
    let mut mlp = Mlp::zeros(dims, head)?;
    if params.len() != mlp.params().len() {
        return Err(r.err(format!("decoder has {} weights, expected {}", params.len(), mlp.params().len())));
    }
    mlp.params_mut().copy_from_slice(&params);
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::template::icosphere;
    use crate::training::{synth_scan, Trainer};

    fn trained(adversarial: bool) -> (TemplateMesh, TrainConfig, Trainer) {
        let t = icosphere(2, 0.5);
        let cfg = TrainConfig {
            points_per_iter: 128,
            feature_dim: 3,
            iterations: 2,
            adversarial,
            adv_every: 1,
            image_size: 32,
            patch_size: 4,
            ray_steps: 16,
            ..TrainConfig::desk()
        };
        let scans: Vec<_> = (0..3)
            .map(|i| {
                let mut s = synth_scan(&t, i).unwrap();
                s.subject_id = i as usize;
                s
            })
            .collect();
        let mut tr = Trainer::new(&t, &scans, &cfg).unwrap();
        tr.step().unwrap();
        tr.step().unwrap();
        (t, cfg, tr)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for adv in [false, true] {
            let (t, cfg, tr) = trained(adv);
            let c = Checkpoint::new(&t, &cfg, tr.state.clone()).unwrap();
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
            assert_eq!(back.config().unwrap(), cfg);
        }
    }

    #[test]
    fn resumed_generator_continues_the_stream() {
        let (t, cfg, tr) = trained(false);
        let back = Checkpoint::from_bytes(&Checkpoint::new(&t, &cfg, tr.state.clone()).unwrap().to_bytes()).unwrap();
        let mut a = tr.state.rng.clone();
        let mut b = back.state.rng.clone();
        for _ in 0..10 {
            assert_eq!(rand::Rng::random::<u64>(&mut a), rand::Rng::random::<u64>(&mut b));
        }
    }

    #[test]
    fn corrupt_and_mismatched_files_rejected() {
        let (t, cfg, tr) = trained(false);
        let c = Checkpoint::new(&t, &cfg, tr.state.clone()).unwrap();
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let other = icosphere(2, 0.6);
        assert!(matches!(c.check_template(&other), Err(Error::TemplateMismatch { .. })));
        c.check_template(&t).unwrap();
    }
}
