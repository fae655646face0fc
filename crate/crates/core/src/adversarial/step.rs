use rand::Rng;

use super::{
    camera_ring, gan_losses, render_patch, Discriminator, Patch, PatchKind, PatchRect, RING_ANGLES, RING_RADIUS,
};
use crate::codebook::{pca_fit, Codebook};
use crate::error::{Error, Result};
use crate::field::DecoderGrads;
use crate::geometry::{rasterize, TemplateMesh};
use crate::training::SubjectCtx;
use crate::training::{Adam, AdamParams, TrainConfig, TrainState};

/// Both discriminators with their optimizer states.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvState {
    pub disc_color: Discriminator,
    pub disc_normal: Discriminator,
    pub adam_color: Adam,
    pub adam_normal: Adam,
}

impl AdvState {
    pub fn new(config: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let input = config.patch_size * config.patch_size * 3;
        let disc_color = Discriminator::new(input, rng)?;
        let disc_normal = Discriminator::new(input, rng)?;
        Ok(Self {
            adam_color: Adam::new(disc_color.params().len()),
            adam_normal: Adam::new(disc_normal.params().len()),
            disc_color,
            disc_normal,
        })
    }
}

/// One adversarial round: sample a codebook from the dictionaries' PCA
/// models, render a joint-centered patch pair from a ring camera, update both
/// discriminators and add the generator gradients into the decoder and
/// dictionary gradient buffers. Returns the weighted generator loss.
pub(crate) fn adversarial_step(
    template: &TemplateMesh,
    subjects: &[SubjectCtx],
    cfg: &TrainConfig,
    st: &mut TrainState,
    dec_grads: &mut DecoderGrads,
    g_shape: &mut [f64],
    g_color: &mut [f64],
) -> Result<f64> {
    let n = st.shape.subject_count();
    if n < 2 {
        return Err(Error::Config("adversarial training needs at least two subjects".into()));
    }
    let Some(adv) = st.adv.as_mut() else {
        return Err(Error::Config("adversarial state missing from the training state".into()));
    };
    let m = template.vertex_count();
    let f = st.shape.feature_dim();
    let pca_s = pca_fit(&st.shape, cfg.pca_dim_geometry.min(n - 1))?;
    let pca_c = pca_fit(&st.color, cfg.pca_dim_texture.min(n - 1))?;
    let ks = pca_s.sample_coeffs(&mut st.rng)?;
    let kc = pca_c.sample_coeffs(&mut st.rng)?;
    let cb = Codebook::from_rows(&pca_s.reconstruct(&ks)?, &pca_c.reconstruct(&kc)?, m, f)?;
    let ws = pca_s.mixing_weights(&ks)?;
    let wc = pca_c.mixing_weights(&kc)?;

    let j = st.rng.random_range(0..n);
    let ctx = &subjects[j];
    let (lo, hi) = ctx.mesh.bbox();
    let center = (lo + hi) * 0.5;
    let cameras = camera_ring(&center, RING_RADIUS, &RING_ANGLES, cfg.image_size)?;
    let cam = &cameras[st.rng.random_range(0..cameras.len())];
    let joint = ctx.joints[st.rng.random_range(0..ctx.joints.len())];
    let basis = cam.basis()?;
    let (px, py, _) = cam.project(&basis, &joint);
    let rect = PatchRect::centered(px, py, cfg.patch_size, cam.width, cam.height)?;

    let img = rasterize(&ctx.mesh, cam)?;
    let real_c = super::crop_patch(&img, &rect, PatchKind::Color);
    let real_n = super::crop_patch(&img, &rect, PatchKind::Normal);
    let fake = render_patch(&ctx.anchor, &cb, &st.decoders, cam, &rect, cfg.ray_steps, ctx.fd_eps)?;

    let hp = AdamParams { lr: cfg.disc_lr, beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: cfg.adam_eps };
    let lc = gan_losses(&adv.disc_color, &real_c, &fake.color, cfg.lambda_r1)?;
    let ln = gan_losses(&adv.disc_normal, &real_n, &fake.normal, cfg.lambda_r1)?;
    let finite = |p: &Patch| p.pixels.iter().flatten().all(|x| x.is_finite());
    if !(lc.l_dis.is_finite() && ln.l_dis.is_finite() && finite(&fake.color) && finite(&fake.normal)) {
        return Err(Error::Numeric(format!(
            "non-finite adversarial loss at iteration {} (color {}, normal {})",
            st.iteration, lc.l_dis, ln.l_dis
        )));
    }
    adv.adam_color.step(adv.disc_color.params_mut(), &lc.disc_grads, &hp)?;
    adv.adam_normal.step(adv.disc_normal.params_mut(), &ln.disc_grads, &hp)?;

    let scale = cfg.lambda_adv;
    let gc: Vec<f64> = lc.fake_grad.iter().map(|g| g * scale).collect();
    let gn: Vec<f64> = ln.fake_grad.iter().map(|g| g * scale).collect();
    let mut cbg = vec![0.0; cb.data().len()];
    fake.backward(&st.decoders, &gc, &gn, dec_grads, Some(&mut cbg))?;

    // The sampled codebook is an affine mix of dictionary rows, so its
    // gradient spreads over every subject.
    let row = m * f;
    for i in 0..n {
        for v in 0..m {
            let src = &cbg[v * 2 * f..(v + 1) * 2 * f];
            for k in 0..f {
                g_shape[i * row + v * f + k] += ws[i] * src[k];
                g_color[i * row + v * f + k] += wc[i] * src[f + k];
            }
        }
    }
    Ok(scale * (lc.l_gen + ln.l_gen))
}
