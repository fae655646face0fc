use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Avatar, Provenance};
use crate::codebook::{Codebook, Dictionary, FeatureKind};
use crate::error::{Error, Result};
use crate::field::Decoders;
use crate::geometry::{rasterize, skin, Camera, MeshAccel, TemplateMesh, TriMesh, Vec3};
use crate::training::{
    normal_count, supervised_pass, Adam, AdamParams, LossRecord, LossWeights, SamplePoint, Scan, ScanSampler,
    TrainConfig,
};

/// Iteration budget of codebook inversion. The first phase fits both
/// feature kinds; the second refines texture only.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub geometry_iterations: usize,
    pub texture_iterations: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { geometry_iterations: 100, texture_iterations: 300, lr: 1e-3, seed: 0 }
    }
}

/// An edited image painted over a rendering of `mesh` from `camera`.
#[derive(Debug, Clone)]
pub struct PaintInput {
    /// Row-major `width * height` target colors in `[0, 1]`.
    pub image: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
    pub camera: Camera,
    pub mesh: TriMesh,
}

/// Per-kind Adam over one codebook.
struct KindOptimizer {
    geometry: Adam,
    texture: Adam,
}

impl KindOptimizer {
    fn new(cb: &Codebook) -> Self {
        let n = cb.vertex_count() * cb.feature_dim();
        Self { geometry: Adam::new(n), texture: Adam::new(n) }
    }

    /// Step the chosen kinds; untouched kinds stay bit-identical.
    fn step(&mut self, cb: &mut Codebook, grad: &[f64], geometry: bool, hp: &AdamParams) -> Result<()> {
        let (m, f) = (cb.vertex_count(), cb.feature_dim());
        let gather = |src: &[f64], off: usize| -> Vec<f64> {
            (0..m).flat_map(|v| src[v * 2 * f + off..v * 2 * f + off + f].iter().copied()).collect()
        };
        if geometry {
            let mut p = cb.kind_row(FeatureKind::Geometry);
            self.geometry.step(&mut p, &gather(grad, 0), hp)?;
            cb.set_kind_row(FeatureKind::Geometry, &p)?;
        }
        let mut p = cb.kind_row(FeatureKind::Texture);
        self.texture.step(&mut p, &gather(grad, f), hp)?;
        cb.set_kind_row(FeatureKind::Texture, &p)
    }
}

fn check_finite(cb: &Codebook, what: &str, it: usize) -> Result<()> {
    if cb.data().iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} diverged at iteration {it}")))
    }
}

/// Invert a registered scan into a new codebook with the decoders frozen.
/// The codebook starts at the dictionary mean.
pub fn fit_codebook(
    template: &TemplateMesh,
    scan: &Scan,
    decoders: &Decoders,
    shape: &Dictionary,
    color: &Dictionary,
    train: &TrainConfig,
    fit: &FitConfig,
) -> Result<(Avatar, Vec<LossRecord>)> {
    scan.validate(template)?;
    if !(fit.lr > 0.0 && fit.lr.is_finite()) {
        return Err(Error::Config(format!("fit lr {} must be positive", fit.lr)));
    }
    let m = template.vertex_count();
    let f = shape.feature_dim();
    let mut cb = Codebook::from_rows(&shape.mean_row(), &color.mean_row(), m, f)?;
    let avatar = Avatar::new(template, decoders, cb.clone(), scan.pose.clone(), Provenance::Fitted)?;
    let posed = skin(template, &scan.pose)?;
    let anchor = MeshAccel::build(&posed.surface)?;
    let fd_eps = train.fd_eps * posed.surface.bbox_diagonal();
    let sampler = ScanSampler::new(scan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(fit.seed);
    let hp = AdamParams { lr: fit.lr, ..train.adam() };
    let w = train.loss_weights();
    let mut opt = KindOptimizer::new(&cb);
    let mut trace = Vec::new();
    let total = fit.geometry_iterations + fit.texture_iterations;
    for it in 0..total {
        let geometry = it < fit.geometry_iterations;
        let xs = sampler.positions(
            train.points_per_iter,
            (train.shell_near, train.shell_far),
            train.space_fraction,
            &mut rng,
        );
        let gts = sampler.label(&xs)?;
        let frac = if geometry { train.normal_fraction } else { 0.0 };
        let normals: usize = gts.chunks(crate::training::CHUNK).map(|c| normal_count(c.len(), frac)).sum();
        let out = supervised_pass(&anchor, &cb, decoders, &gts, &w, frac, fd_eps, (gts.len(), normals))?;
        opt.step(&mut cb, &out.codebook, geometry, &hp)?;
        check_finite(&cb, "codebook fit", it)?;
        trace.push(LossRecord {
            iteration: it as u64,
            l_sdf: out.loss.l_sdf(&w),
            l_rgb: out.loss.rgb,
            l_reg: 0.0,
            l_adv: 0.0,
        });
    }
    Ok((Avatar { codebook: cb, ..avatar }, trace))
}

/// Surface points and target colors of the painted pixels.
fn paint_targets(paint: &PaintInput) -> Result<Vec<SamplePoint>> {
    let img = rasterize(&paint.mesh, &paint.camera)?;
    let n = img.width * img.height;
    if paint.image.len() != n || paint.mask.len() != n {
        return Err(Error::Dimension(format!(
            "paint image has {} pixels and mask {}, camera expects {n}",
            paint.image.len(),
            paint.mask.len()
        )));
    }
    let mut out = Vec::new();
    for p in 0..n {
        if !paint.mask[p] {
            continue;
        }
        if !img.mask[p] {
            return Err(Error::InvalidArgument(format!(
                "paint mask covers background pixel ({}, {})",
                p % img.width,
                p / img.width
            )));
        }
        out.push(SamplePoint { x: img.position[p], s: 0.0, c: paint.image[p], n: Vec3::zeros() });
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("paint mask is empty".into()));
    }
    Ok(out)
}

/// Fit the texture features to painted pixels with the RGB loss. Geometry
/// features and decoders are not touched.
#[allow(clippy::too_many_arguments)]
pub fn paint_texture(
    template: &TemplateMesh,
    avatar: &Avatar,
    paint: &PaintInput,
    decoders: &Decoders,
    train: &TrainConfig,
    iterations: usize,
    lr: f64,
    seed: u64,
) -> Result<Avatar> {
    avatar.check_decoders(decoders)?;
    let targets = paint_targets(paint)?;
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("paint lr {lr} must be positive")));
    }
    let posed = avatar.posed(template)?;
    let w = LossWeights { lambda_n: 0.0, lambda_sdf: 0.0, lambda_rgb: train.lambda_rgb };
    let hp = AdamParams { lr, ..train.adam() };
    let mut cb = avatar.codebook.clone();
    let mut opt = KindOptimizer::new(&cb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = train.points_per_iter.max(1);
    for it in 0..iterations {
        let pts: Vec<SamplePoint> = if targets.len() <= batch {
            targets.clone()
        } else {
            rand::seq::index::sample(&mut rng, targets.len(), batch).into_iter().map(|i| targets[i]).collect()
        };
        let out = supervised_pass(&posed.accel, &cb, decoders, &pts, &w, 0.0, 1.0, (pts.len(), 0))?;
        opt.step(&mut cb, &out.codebook, false, &hp)?;
        check_finite(&cb, "texture paint", it)?;
    }
    Ok(Avatar { codebook: cb, ..avatar.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avatar::{init_avatar, AvatarSource};
    use crate::codebook::init_dictionary;
    use crate::geometry::template::icosphere;
    use crate::training::synth_scan;

    fn setup() -> (TemplateMesh, Dictionary, Dictionary, Decoders, TrainConfig) {
        let t = icosphere(2, 0.5);
        let m = t.vertex_count();
        let cfg = TrainConfig { points_per_iter: 512, feature_dim: 4, ..TrainConfig::desk() };
        let shape = init_dictionary(FeatureKind::Geometry, 3, m, 4, 5).unwrap();
        let color = init_dictionary(FeatureKind::Texture, 3, m, 4, 6).unwrap();
        let dec = Decoders::new(4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        (t, shape, color, dec, cfg)
    }

    #[test]
    fn zero_budget_fit_is_the_mean() {
        let (t, shape, color, dec, cfg) = setup();
        let scan = synth_scan(&t, 1).unwrap();
        let fc = FitConfig { geometry_iterations: 0, texture_iterations: 0, ..FitConfig::default() };
        let (a, trace) = fit_codebook(&t, &scan, &dec, &shape, &color, &cfg, &fc).unwrap();
        assert!(trace.is_empty());
        assert_eq!(a.codebook.kind_row(FeatureKind::Geometry), shape.mean_row());
        assert_eq!(a.codebook.kind_row(FeatureKind::Texture), color.mean_row());
        assert_eq!(a.provenance, Provenance::Fitted);
    }

    #[test]
    fn fit_lowers_loss_and_freezes_decoders() {
        let (t, shape, color, dec, cfg) = setup();
        let scan = synth_scan(&t, 2).unwrap();
        let hash = dec.weights_hash();
        let fc = FitConfig { geometry_iterations: 60, texture_iterations: 10, lr: 1e-2, seed: 1 };
        let (a, trace) = fit_codebook(&t, &scan, &dec, &shape, &color, &cfg, &fc).unwrap();
        assert_eq!(dec.weights_hash(), hash);
        assert_eq!(a.decoder_hash, hash);
        let head: f64 = trace[..10].iter().map(|r| r.l_sdf).sum();
        let tail: f64 = trace[50..60].iter().map(|r| r.l_sdf).sum();
        assert!(tail < head, "{head} -> {tail}");
        // Texture-only phase leaves geometry alone.
        let fc2 = FitConfig { geometry_iterations: 60, texture_iterations: 0, ..fc };
        let (b, _) = fit_codebook(&t, &scan, &dec, &shape, &color, &cfg, &fc2).unwrap();
        assert_eq!(a.codebook.kind_row(FeatureKind::Geometry), b.codebook.kind_row(FeatureKind::Geometry));
        assert_ne!(a.codebook.kind_row(FeatureKind::Texture), b.codebook.kind_row(FeatureKind::Texture));
    }

    fn front_paint(t: &TemplateMesh, color: [f64; 3]) -> PaintInput {
        let camera = Camera::new(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y(), 0.6, 24, 24);
        let mesh = t.surface.clone();
        let img = rasterize(&mesh, &camera).unwrap();
        let mask: Vec<bool> =
            (0..24 * 24).map(|p| img.mask[p] && (8..16).contains(&(p % 24)) && (8..16).contains(&(p / 24))).collect();
        PaintInput { image: vec![color; 24 * 24], mask, camera, mesh }
    }

    #[test]
    fn paint_moves_colors_and_keeps_geometry() {
        let (t, shape, color, dec, cfg) = setup();
        let a = init_avatar(&t, &shape, &color, &dec, AvatarSource::Index(0)).unwrap();
        let paint = front_paint(&t, [0.9, 0.1, 0.2]);
        let targets = paint_targets(&paint).unwrap();
        let xs: Vec<Vec3> = targets.iter().map(|p| p.x).collect();
        let err = |av: &Avatar| {
            let posed = av.posed(&t).unwrap();
            let c = av.colors(&posed, &dec, &xs).unwrap();
            c.iter().map(|c| (c[0] - 0.9).abs() + (c[1] - 0.1).abs() + (c[2] - 0.2).abs()).sum::<f64>()
                / (3 * c.len()) as f64
        };
        assert_eq!(paint_texture(&t, &a, &paint, &dec, &cfg, 0, 1e-2, 0).unwrap(), a);
        // An untrained decoder responds weakly to its features, hence the large step.
        let b = paint_texture(&t, &a, &paint, &dec, &cfg, 200, 1e-1, 0).unwrap();
        assert_eq!(a.codebook.kind_row(FeatureKind::Geometry), b.codebook.kind_row(FeatureKind::Geometry));
        assert!(err(&b) < 0.8 * err(&a), "{} -> {}", err(&a), err(&b));
    }

    #[test]
    fn paint_input_errors() {
        let (t, shape, color, dec, cfg) = setup();
        let a = init_avatar(&t, &shape, &color, &dec, AvatarSource::Index(0)).unwrap();
        let mut p = front_paint(&t, [1.0; 3]);
        p.mask.iter_mut().for_each(|m| *m = false);
        assert!(paint_texture(&t, &a, &p, &dec, &cfg, 1, 1e-2, 0).is_err());
        p.mask[0] = true;
        assert!(paint_texture(&t, &a, &p, &dec, &cfg, 1, 1e-2, 0).is_err());
        p.mask.pop();
        assert!(paint_texture(&t, &a, &p, &dec, &cfg, 1, 1e-2, 0).is_err());
    }
}
