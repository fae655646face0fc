//! Avatar customization: initialization from the dictionaries, codebook
//! inversion against frozen decoders, region transfer, texture painting and
//! reposing.

mod edit;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{hex, Reader, Writer};
use crate::codebook::{codebook_from_dictionaries, swap_rows, Codebook, Dictionary, KindMask, PcaModel};
use crate::error::{Error, Result};
use crate::field::{eval_color, eval_sdf, Decoders};
use crate::geometry::{skin, MeshAccel, PoseParams, TemplateMesh, Vec3};

pub use edit::{fit_codebook, paint_texture, FitConfig, PaintInput};

/// Where an avatar's codebook came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Index(usize),
    Sampled { seed: u64 },
    Fitted,
}

/// How to initialize an avatar.
#[derive(Debug, Clone, Copy)]
pub enum AvatarSource<'a> {
    /// Row `i` of both dictionaries.
    Index(usize),
    /// Independent geometry and texture draws from the PCA models. The
    /// coefficient deviation from the mean is scaled by `temperature`, so 0
    /// gives the mean codebook.
    Pca { geometry: &'a PcaModel, texture: &'a PcaModel, seed: u64, temperature: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Avatar {
    pub codebook: Codebook,
    pub pose: PoseParams,
    pub template_hash: [u8; 32],
    /// Hash of the decoder weights the codebook was made for.
    pub decoder_hash: [u8; 32],
    pub provenance: Provenance,
}

/// The avatar's template posed and indexed for queries.
pub struct PosedAvatar {
    pub template: TemplateMesh,
    pub accel: MeshAccel,
}

impl Avatar {
    pub fn new(
        template: &TemplateMesh,
        decoders: &Decoders,
        codebook: Codebook,
        pose: PoseParams,
        provenance: Provenance,
    ) -> Result<Self> {
        if codebook.vertex_count() != template.vertex_count() {
            return Err(Error::Dimension(format!(
                "codebook has {} rows, template has {} vertices",
                codebook.vertex_count(),
                template.vertex_count()
            )));
        }
        if codebook.feature_dim() != decoders.feature_dim() {
            return Err(Error::Dimension(format!(
                "codebook F={} but decoders expect F={}",
                codebook.feature_dim(),
                decoders.feature_dim()
            )));
        }
        pose.check(template)?;
        Ok(Self {
            codebook,
            pose,
            template_hash: template.content_hash(),
            decoder_hash: decoders.weights_hash(),
            provenance,
        })
    }

    pub fn check_template(&self, template: &TemplateMesh) -> Result<()> {
        let found = template.content_hash();
        if found != self.template_hash {
            return Err(Error::TemplateMismatch { expected: hex(&self.template_hash), found: hex(&found) });
        }
        Ok(())
    }

    pub fn check_decoders(&self, decoders: &Decoders) -> Result<()> {
        if decoders.weights_hash() != self.decoder_hash {
            return Err(Error::InvalidArgument("avatar was made for different decoder weights".into()));
        }
        Ok(())
    }

    pub fn posed(&self, template: &TemplateMesh) -> Result<PosedAvatar> {
        self.check_template(template)?;
        let posed = skin(template, &self.pose)?;
        let accel = MeshAccel::build(&posed.surface)?;
        Ok(PosedAvatar { template: posed, accel })
    }

    pub fn sdf(&self, posed: &PosedAvatar, decoders: &Decoders, points: &[Vec3]) -> Result<Vec<f64>> {
        eval_sdf(&posed.accel, &self.codebook, decoders, points)
    }

    pub fn colors(&self, posed: &PosedAvatar, decoders: &Decoders, points: &[Vec3]) -> Result<Vec<[f64; 3]>> {
        eval_color(&posed.accel, &self.codebook, decoders, points)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(AVATAR_MAGIC);
        w.u32(AVATAR_VERSION);
        w.bytes(&self.template_hash);
        w.bytes(&self.decoder_hash);
        let (tag, payload) = match self.provenance {
            Provenance::Index(i) => (0, i as u64),
            Provenance::Sampled { seed } => (1, seed),
            Provenance::Fitted => (2, 0),
        };
        w.u8(tag);
        w.u64(payload);
        w.len(self.codebook.vertex_count());
        w.len(self.codebook.feature_dim());
        w.f64s(self.codebook.data());
        w.vec(&self.pose.joint_rotations.concat());
        w.vec(&self.pose.shape_coeffs);
        w.f64s(&self.pose.root_translation);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "avatar file");
        if r.bytes(AVATAR_MAGIC.len())? != AVATAR_MAGIC {
            return Err(r.err("bad magic"));
        }
        let version = r.u32()?;
        if version != AVATAR_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let template_hash = r.array()?;
        let decoder_hash = r.array()?;
        let tag = r.u8()?;
        let payload = r.u64()?;
        let provenance = match tag {
            0 => Provenance::Index(payload as usize),
            1 => Provenance::Sampled { seed: payload },
            2 => Provenance::Fitted,
            t => return Err(r.err(format!("unknown provenance tag {t}"))),
        };
        let m = r.len(16)?;
        let f = r.u64()? as usize;
        let n = m.checked_mul(2 * f).ok_or_else(|| r.err("codebook size overflow"))?;
        let codebook = Codebook::new(m, f, r.f64s(n)?)?;
        let rot = r.vec()?;
        if rot.len() % 3 != 0 {
            return Err(r.err("joint rotation count is not a multiple of 3"));
        }
        let shape_coeffs = r.vec()?;
        let t = r.f64s(3)?;
        r.finish()?;
        let pose = PoseParams {
            joint_rotations: rot.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            shape_coeffs,
            root_translation: [t[0], t[1], t[2]],
        };
        Ok(Self { codebook, pose, template_hash, decoder_hash, provenance })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::at_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(Error::at_path(path))?)
    }
}

const AVATAR_MAGIC: &[u8; 8] = b"CBAVATAR";
const AVATAR_VERSION: u32 = 1;

/// A new avatar in the rest pose from the trained dictionaries.
pub fn init_avatar(
    template: &TemplateMesh,
    shape: &Dictionary,
    color: &Dictionary,
    decoders: &Decoders,
    source: AvatarSource,
) -> Result<Avatar> {
    let m = template.vertex_count();
    let f = shape.feature_dim();
    let (codebook, provenance) = match source {
        AvatarSource::Index(i) => (codebook_from_dictionaries(shape, color, i)?, Provenance::Index(i)),
        AvatarSource::Pca { geometry, texture, seed, temperature } => {
            if !(temperature >= 0.0 && temperature.is_finite()) {
                return Err(Error::InvalidArgument(format!("temperature {temperature} must be non-negative")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |pca: &PcaModel| -> Result<Vec<f64>> {
                let mean = pca.reconstruct(&vec![0.0; pca.dim()])?;
                let k = pca.sample_coeffs(&mut rng)?;
                let origin = pca.project(&mean)?;
                let k: Vec<f64> = k.iter().zip(&origin).map(|(k, o)| o + (k - o) * temperature).collect();
                pca.reconstruct(&k)
            };
            let g = draw(geometry)?;
            let t = draw(texture)?;
            (Codebook::from_rows(&g, &t, m, f)?, Provenance::Sampled { seed })
        }
    };
    Avatar::new(template, decoders, codebook, PoseParams::identity_for(template), provenance)
}

/// Copy the selected feature kinds of `vertices` from `src` into `dst`.
/// The pose of `dst` is kept.
pub fn transfer_region(dst: &Avatar, src: &Avatar, vertices: &[usize], kinds: KindMask) -> Result<Avatar> {
    if dst.template_hash != src.template_hash {
        return Err(Error::TemplateMismatch { expected: hex(&dst.template_hash), found: hex(&src.template_hash) });
    }
    Ok(Avatar { codebook: swap_rows(&dst.codebook, &src.codebook, vertices, kinds)?, ..dst.clone() })
}

/// Replace the pose; the codebook is untouched.
pub fn repose(template: &TemplateMesh, avatar: &Avatar, pose: PoseParams) -> Result<Avatar> {
    avatar.check_template(template)?;
    pose.check(template)?;
    if pose
        .joint_rotations
        .iter()
        .flatten()
        .chain(&pose.shape_coeffs)
        .chain(&pose.root_translation)
        .any(|x| !x.is_finite())
    {
        return Err(Error::NonFinite);
    }
    Ok(Avatar { pose, ..avatar.clone() })
}

/// Parse a newline-delimited vertex index list. Blank lines and `#`
/// comments are skipped; the result is sorted and deduplicated.
pub fn parse_vertex_set(text: &str, vertex_count: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: usize = line
            .parse()
            .map_err(|_| Error::format("vertex set", format!("line {}: {line:?} is not an index", ln + 1)))?;
        if v >= vertex_count {
            return Err(Error::IndexOutOfRange { index: v, len: vertex_count });
        }
        out.push(v);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn read_vertex_set(path: &Path, vertex_count: usize) -> Result<Vec<usize>> {
    parse_vertex_set(&std::fs::read_to_string(path).map_err(Error::at_path(path))?, vertex_count)
}
